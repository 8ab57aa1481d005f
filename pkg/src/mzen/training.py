"""Losses, trainable model state and per-phase objective assembly."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .camera import CameraPose, clamp_zoom, image_center, pixel_centers, ray_bundle
from .errors import DataError, PhaseViolation, ShapeError
from .field import FieldConfig, RadianceFieldParams, init_params
from .render import NeuralField, RaySampleBatch, RenderConfig, render_rays, stratified_samples

PHASES = ("A", "B", "C")
WIDE_TOL = 1e-6


@dataclass
class LossConfig:
    reduction: str = "mean"
    depth_weight: float = 2e-5
    depth_enabled: bool = False

    def __post_init__(self):
        if self.reduction not in ("sum", "mean"):
            raise DataError(f"unknown reduction {self.reduction!r}")
        if self.depth_weight < 0:
            raise DataError("depth weight must be non-negative")


def _reduce(x, reduction):
    return ad.sum_(x) if reduction == "sum" else ad.mean(x)


def photometric_loss(rendered, observed, reduction: str = "sum"):
    """Squared l2 difference over all pixels and channels."""
    rendered = ad.as_tensor(rendered)
    observed = np.asarray(observed.value if isinstance(observed, Tensor) else observed, dtype=np.float64)
    if rendered.shape != observed.shape:
        raise ShapeError("rendered and observed images differ in shape", rendered.shape, observed.shape)
    return _reduce(ad.square(rendered - observed), reduction)


def depth_loss(rendered_depth, prior_depth, a, b, reduction: str = "sum"):
    """l1 gap between rendered depth and the affinely aligned prior."""
    rendered_depth = ad.as_tensor(rendered_depth)
    prior = np.asarray(prior_depth, dtype=np.float64)
    if rendered_depth.shape != prior.shape:
        raise ShapeError("rendered and prior depth differ in shape", rendered_depth.shape, prior.shape)
    return _reduce(ad.abs_(rendered_depth - (ad.as_tensor(a) * prior + b)), reduction)


# ----------------------------------------------------------------------------
# trainable state


class ModelState:
    """Field weights plus every camera parameter as individual leaf tensors.

    Per-view tensors (``rotation[k]``, ``translation[k]``, ``zoom[k]``,
    ``depth_a[k]``, ``depth_b[k]``) make parameter groups plain lists, so
    freezing a group is just clearing ``requires_grad`` on its members.
    """

    def __init__(self, field_params: RadianceFieldParams, n_views: int, focal, principal,
                 zooms: Sequence[float] = None):
        self.field = field_params
        self.n_views = n_views
        self.rotation = [Tensor(np.zeros(3), True, name=f"rot{k}") for k in range(n_views)]
        self.translation = [Tensor(np.zeros(3), True, name=f"trans{k}") for k in range(n_views)]
        zooms = np.ones(n_views) if zooms is None else np.asarray(zooms, dtype=np.float64)
        self.zoom = [Tensor(np.array(float(z)), True, name=f"zoom{k}") for k, z in enumerate(zooms)]
        self.focal = Tensor(np.asarray(focal, dtype=np.float64).reshape(2), True, name="focal")
        self.principal = np.asarray(principal, dtype=np.float64).reshape(2)
        self.depth_a = [Tensor(np.array(1.0), True, name=f"depth_a{k}") for k in range(n_views)]
        self.depth_b = [Tensor(np.array(0.0), True, name=f"depth_b{k}") for k in range(n_views)]

    @classmethod
    def create(cls, n_views: int, H: int, W: int, field_config: FieldConfig = None, seed: int = 0,
               focal_init: float = None, zooms=None) -> "ModelState":
        params = init_params(seed, field_config or FieldConfig.desk())
        f = float(W) if focal_init is None else float(focal_init)
        return cls(params, n_views, (f, f), image_center(H, W), zooms)

    def pose(self, k: int) -> CameraPose:
        return CameraPose(self.rotation[k].value.copy(), self.translation[k].value.copy(),
                          self.focal.value.copy(), self.principal.copy(), float(self.zoom[k].value))

    def set_pose(self, k: int, pose: CameraPose, zoom: bool = True):
        self.rotation[k].value = np.array(pose.rotation, dtype=np.float64)
        self.translation[k].value = np.array(pose.translation, dtype=np.float64)
        if zoom:
            self.zoom[k].value = np.array(float(pose.zoom))

    def copy(self) -> "ModelState":
        other = ModelState(self.field.copy(), self.n_views, self.focal.value.copy(), self.principal.copy(),
                           [float(z.value) for z in self.zoom])
        for dst, src in ((other.rotation, self.rotation), (other.translation, self.translation),
                         (other.depth_a, self.depth_a), (other.depth_b, self.depth_b)):
            for d, s in zip(dst, src):
                d.value = s.value.copy()
        return other

    def groups(self, wide: Sequence[int], zoomed: Sequence[int]) -> Dict[str, List[Tensor]]:
        """Named parameter groups for the given wide / zoom-in view indices."""
        return {
            "field": list(self.field),
            "wide_poses": [t for k in wide for t in (self.rotation[k], self.translation[k])],
            "zoom_poses": [t for k in zoomed for t in (self.rotation[k], self.translation[k])],
            "focal": [self.focal],
            "wide_zoom": [self.zoom[k] for k in wide],
            "zoom_scalars": [self.zoom[k] for k in zoomed],
            "depth_affine": [t for k in list(wide) + list(zoomed) for t in (self.depth_a[k], self.depth_b[k])],
        }

    def all_tensors(self) -> List[Tensor]:
        return (list(self.field) + self.rotation + self.translation + self.zoom + [self.focal]
                + self.depth_a + self.depth_b)

    def freeze_all(self):
        for t in self.all_tensors():
            t.requires_grad = False
            t.grad = None

    def clamp_zooms(self):
        for z in self.zoom:
            z.value = np.asarray(clamp_zoom(z.value), dtype=np.float64)


def group_digest(tensors: Sequence[Tensor]) -> str:
    h = hashlib.sha256()
    for t in tensors:
        h.update(np.ascontiguousarray(t.value, dtype="<f8").tobytes())
    return h.hexdigest()


# ----------------------------------------------------------------------------
# ray batches


@dataclass
class RayBatch:
    views: np.ndarray
    u: np.ndarray
    v: np.ndarray
    target: np.ndarray
    samples: RaySampleBatch
    prior_depth: Optional[np.ndarray] = None

    @property
    def view_set(self):
        return sorted(set(int(k) for k in self.views))


def sample_ray_batch(dataset, view_ids: Sequence[int], rays_per_view: int, n_samples: int, near: float,
                     far: float, rng: np.random.Generator, full: bool = False) -> RayBatch:
    """Draw ``rays_per_view`` random pixels from each listed view (all pixels if ``full``)."""
    H, W = dataset.height, dataset.width
    uu, vv = pixel_centers(H, W)
    views, us, vs, tg, dp = [], [], [], [], []
    for k in view_ids:
        img = dataset.views[k].image.reshape(-1, 3)
        pix = np.arange(H * W) if full else rng.integers(0, H * W, size=rays_per_view)
        views.append(np.full(pix.size, k))
        us.append(uu[pix])
        vs.append(vv[pix])
        tg.append(img[pix])
        depth = dataset.views[k].depth
        dp.append(depth.reshape(-1)[pix] if depth is not None else np.full(pix.size, np.nan))
    views = np.concatenate(views)
    samples = stratified_samples(near, far, n_samples, rng if not full else None, n_rays=views.size)
    return RayBatch(views, np.concatenate(us), np.concatenate(vs), np.concatenate(tg), samples,
                    np.concatenate(dp))


def render_batch(state: ModelState, batch: RayBatch, render_cfg: RenderConfig, mode: str = "plain",
                 alpha: float = 1.0):
    """Differentiable render of a ray batch; returns (rgb, depth)."""
    vids = batch.view_set
    local = {k: i for i, k in enumerate(vids)}
    idx = np.array([local[int(k)] for k in batch.views])
    rot = ad.stack([state.rotation[k] for k in vids], axis=0)
    trans = ad.stack([state.translation[k] for k in vids], axis=0)
    zoom = ad.stack([state.zoom[k] for k in vids], axis=0)
    Rm = ad.rotation_from_axis_angle(rot)
    o, d = ray_bundle(Rm[idx], trans[idx], state.focal, state.principal, zoom[idx], batch.u, batch.v)
    radii = None
    if mode == "ipe":
        radii = ad.reciprocal(zoom[idx] * state.focal[0])
    field_fn = NeuralField(state.field, render_cfg, mode=mode, alpha=alpha)
    rgb, depth, _ = render_rays(field_fn, o, d, batch.samples, background=render_cfg.background, radii=radii)
    return rgb, depth


def check_phase_batch(phase: str, batch_views: Sequence[int], dial_zooms: Sequence[float]):
    """Raise :class:`PhaseViolation` if a view is illegal for ``phase``."""
    if phase not in PHASES:
        raise PhaseViolation(f"unknown phase {phase!r}", phase)
    for k in batch_views:
        z = dial_zooms[k]
        if phase == "A" and z > 1.0 + WIDE_TOL:
            raise PhaseViolation(f"phase A may not see zoom-in view {k} (dial {z:g})", phase)
        if phase == "B" and z <= 1.0 + WIDE_TOL:
            raise PhaseViolation(f"phase B only registers zoom-in views; view {k} is wide-field", phase)


def batch_loss(state: ModelState, batch: RayBatch, render_cfg: RenderConfig, loss_cfg: LossConfig,
               mode: str = "plain", alpha: float = 1.0):
    rgb, depth = render_batch(state, batch, render_cfg, mode, alpha)
    loss = photometric_loss(rgb, batch.target, loss_cfg.reduction)
    if loss_cfg.depth_enabled and batch.prior_depth is not None and not np.any(np.isnan(batch.prior_depth)):
        vids = batch.view_set
        local = {k: i for i, k in enumerate(vids)}
        idx = np.array([local[int(k)] for k in batch.views])
        a = ad.stack([state.depth_a[k] for k in vids], axis=0)[idx]
        b = ad.stack([state.depth_b[k] for k in vids], axis=0)[idx]
        loss = loss + loss_cfg.depth_weight * depth_loss(depth, batch.prior_depth, a, b, loss_cfg.reduction)
    return loss


def phase_learnable(phase: str, learn_wide_zoom: bool = True) -> List[str]:
    if phase == "A":
        groups = ["field", "wide_poses", "focal", "depth_affine"]
        return groups + (["wide_zoom"] if learn_wide_zoom else [])
    if phase == "B":
        return ["zoom_poses", "zoom_scalars", "depth_affine"]
    if phase == "C":
        groups = ["field", "wide_poses", "zoom_poses", "focal", "zoom_scalars", "depth_affine"]
        return groups + (["wide_zoom"] if learn_wide_zoom else [])
    raise PhaseViolation(f"unknown phase {phase!r}", phase)


def phase_loss(phase: str, batch: RayBatch, state: ModelState, dial_zooms: Sequence[float],
               render_cfg: RenderConfig, loss_cfg: LossConfig = None, mode: str = "plain", alpha: float = 1.0,
               learn_wide_zoom: bool = True):
    """Loss of ``batch`` under ``phase`` with the phase's frozen groups off the tape."""
    loss_cfg = loss_cfg or LossConfig()
    check_phase_batch(phase, batch.views, dial_zooms)
    views = batch.view_set
    wide = [k for k in views if dial_zooms[k] <= 1.0 + WIDE_TOL]
    zoomed = [k for k in views if dial_zooms[k] > 1.0 + WIDE_TOL]
    state.freeze_all()
    groups = state.groups(wide, zoomed)
    for name in phase_learnable(phase, learn_wide_zoom):
        for t in groups[name]:
            t.requires_grad = True
    return batch_loss(state, batch, render_cfg, loss_cfg, mode, alpha)
