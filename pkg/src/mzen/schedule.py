"""Three-phase driver, baseline configurations and held-out pose registration.

Config 1 trains a pose-free baseline on the wide-field images, Config 2 on
every image jointly, Config 3 runs Phase A alone and Config 4 runs the full
A -> B -> C schedule. One *pass* is one image contributing a ray subset to one
optimisation step, and budgets are chosen so that Config 3 matches Config 1
and Config 4 matches Config 2 pass for pass.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .camera import CameraPose, clamp_zoom, pixel_centers, ray_bundle
from .encoding import barf_alpha
from .errors import DataError, ManifestError, NumericalError, PhaseViolation
from .field import FieldConfig, load_params, save_params
from .metrics import MetricReport
from .optimize import Adam, build_preconditioner, preconditioned_pose_step, step_lr
from .priming import match_wide_field, prime_pose
from .render import NeuralField, RenderConfig, render_image, render_rays, stratified_samples
from .training import (WIDE_TOL, LossConfig, ModelState, batch_loss, check_phase_batch,
                       group_digest, phase_learnable, sample_ray_batch)

BACKBONES = ("plain", "barf", "ipe", "camp")
DEPTH_PRIORS = ("none", "gt")


@dataclass
class TrainConfig:
    """Budgets, learning rates and backbone switches for one training run.

    ``steps`` is the budget of the single-stage runs (Configs 1-3); Config 4
    spends ``steps - steps_c`` on each of Phases A and B and ``steps_c`` on C.
    """

    backbone: str = "barf"
    depth_prior: str = "none"
    seed: int = 0
    steps: int = 600
    steps_c: int = 300
    rays_per_view: int = 64
    n_samples: int = 48
    lr_field: float = 5e-3
    lr_pose: float = 2e-3
    lr_focal: float = 0.1
    lr_zoom: float = 2e-3
    lr_depth: float = 1e-3
    lr_gamma: float = 0.5
    lr_decays: int = 3
    barf_start: float = 0.0
    barf_end: float = 0.5
    camp_warmup: int = 50
    camp_lr: float = 5.0
    camp_lambda: float = 1e-3
    camp_mu: float = 1e-4
    camp_nr: int = 256
    learn_wide_zoom: bool = True
    register_steps: int = 100
    register_rays: int = 256
    register_lr: float = 2e-3
    reduction: str = "mean"
    depth_weight: float = 2e-5
    init_poses: str = "identity"
    focal_init: Optional[float] = None
    near: Optional[float] = None
    far: Optional[float] = None
    early_stop: bool = False
    field: FieldConfig = field(default_factory=FieldConfig.desk)

    def validate(self) -> "TrainConfig":
        if self.backbone not in BACKBONES:
            raise DataError(f"backbone must be one of {BACKBONES}")
        if self.depth_prior not in DEPTH_PRIORS:
            raise DataError(f"depth prior must be one of {DEPTH_PRIORS}")
        if self.init_poses not in ("identity", "gt"):
            raise DataError("init_poses must be 'identity' or 'gt'")
        if self.steps < 1 or not 0 <= self.steps_c < self.steps:
            raise DataError("need steps >= 1 and 0 <= steps_c < steps")
        if self.rays_per_view < 1 or self.n_samples < 1:
            raise DataError("rays_per_view and n_samples must be positive")
        if not 0.0 <= self.barf_start <= self.barf_end <= 1.0:
            raise DataError("barf window must satisfy 0 <= start <= end <= 1")
        LossConfig(self.reduction, self.depth_weight)
        return self

    @property
    def mode(self) -> str:
        return "ipe" if self.backbone in ("ipe", "camp") else "plain"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["field"] = asdict(self.field)
        return d


def render_config_for(dataset, cfg: TrainConfig) -> RenderConfig:
    """Sampling range and encoder normalisation derived from the scene bounds.

    Cameras sit near z = 0 looking along +z, so the near plane is the front
    of the bounding box and the far plane leaves room for oblique corner rays.
    """
    lo, hi = (np.asarray(b, dtype=np.float64) for b in dataset.meta["bounds"])
    near = cfg.near if cfg.near is not None else max(float(dataset.meta["near"]), float(lo[2]))
    far = cfg.far if cfg.far is not None else min(float(dataset.meta["far"]), 1.25 * float(hi[2]))
    return RenderConfig(n_samples=cfg.n_samples, near=near, far=far,
                        scene_center=tuple((lo + hi) / 2.0), scene_scale=float(np.max(hi - lo) / 2.0))


# ----------------------------------------------------------------------------
# phase bookkeeping


@dataclass
class PhaseState:
    """Learnable/frozen split of one stage plus its budget and optimizer."""

    phase: str
    learnable: tuple
    frozen: tuple
    budget: int
    optimizer: Optional[Adam] = None
    digests: Dict[str, str] = field(default_factory=dict)

    def snapshot(self, groups: Dict[str, list]):
        self.digests = {name: group_digest(groups[name]) for name in self.frozen if name in groups}

    def verify(self, groups: Dict[str, list]):
        """Raise if any frozen group changed since :meth:`snapshot`."""
        for name, digest in self.digests.items():
            if group_digest(groups[name]) != digest:
                raise PhaseViolation(f"frozen group {name!r} changed during phase {self.phase}", self.phase)

    def check_update(self, name: str):
        if name not in self.learnable:
            raise PhaseViolation(f"phase {self.phase} may not update group {name!r}", self.phase)


ALL_GROUPS = ("field", "wide_poses", "zoom_poses", "focal", "wide_zoom", "zoom_scalars", "depth_affine")


@dataclass
class TrainLog:
    phases: List[str] = field(default_factory=list)
    steps: List[dict] = field(default_factory=list)
    passes: Dict[str, int] = field(default_factory=OrderedDict)
    zoom_trajectories: Dict[str, List[float]] = field(default_factory=OrderedDict)
    matches: List[dict] = field(default_factory=list)

    @property
    def total_passes(self) -> int:
        return int(sum(self.passes.values()))

    def to_dict(self) -> "OrderedDict":
        return OrderedDict(phases=self.phases, passes=self.passes, total_passes=self.total_passes,
                           matches=self.matches, zoom_trajectories=self.zoom_trajectories, steps=self.steps)


def _group_lrs(cfg: TrainConfig) -> Dict[str, float]:
    return {"field": cfg.lr_field, "wide_poses": cfg.lr_pose, "zoom_poses": cfg.lr_pose, "focal": cfg.lr_focal,
            "wide_zoom": cfg.lr_zoom, "zoom_scalars": cfg.lr_zoom, "depth_affine": cfg.lr_depth}


def _dials(dataset) -> List[float]:
    return [float(v.zoom) for v in dataset.views]


def _split_ids(dataset, ids):
    wide = [k for k in ids if dataset.views[k].zoom <= 1.0 + WIDE_TOL]
    zoom = [k for k in ids if dataset.views[k].zoom > 1.0 + WIDE_TOL]
    return wide, zoom


def run_stage(tag: str, phase: Optional[str], state: ModelState, dataset, view_ids: Sequence[int],
              learnable: Sequence[str], steps: int, cfg: TrainConfig, rng: np.random.Generator, log: TrainLog,
              barf: bool = False, camp: bool = False) -> PhaseState:
    """Optimise ``learnable`` groups over ``view_ids`` for ``steps`` steps.

    Each step draws ``rays_per_view`` rays from every listed view, so every
    view receives one pass per step. ``phase`` (A/B/C or None for baselines)
    enforces image legality, and frozen groups are hash-checked at the end.
    """
    if phase is not None:
        illegal = sorted(set(learnable) - set(phase_learnable(phase, learn_wide_zoom=True)))
        if illegal:
            raise PhaseViolation(f"phase {phase} may not update {illegal}", phase)
    dial = _dials(dataset)
    train_wide, train_zoom = _split_ids(dataset, dataset.indices("train"))
    all_groups = state.groups(train_wide, train_zoom)
    stage_wide, stage_zoom = _split_ids(dataset, view_ids)
    groups = state.groups(stage_wide, stage_zoom)
    learnable = tuple(g for g in learnable if groups.get(g))
    ps = PhaseState(tag, learnable, tuple(g for g in ALL_GROUPS if g not in learnable), steps)
    ps.snapshot(all_groups)
    learn_ids = {id(t) for g in learnable for t in groups[g]}
    # frozen = everything outside the learnable set, including tensors of views outside this stage
    frozen_tensors = [t for t in state.all_tensors() if id(t) not in learn_ids]
    frozen_digest = group_digest(frozen_tensors)
    ps.optimizer = Adam({g: groups[g] for g in learnable}, _group_lrs(cfg))
    rcfg = render_config_for(dataset, cfg)
    loss_cfg = LossConfig(cfg.reduction, cfg.depth_weight, cfg.depth_prior == "gt")
    period = max(1, steps // max(1, cfg.lr_decays))
    pose_groups = [g for g in ("wide_poses", "zoom_poses") if g in learnable]
    preconditioners = {}
    log.phases.append(tag)
    log.passes.setdefault(tag, 0)
    for step in range(steps):
        batch = sample_ray_batch(dataset, view_ids, cfg.rays_per_view, cfg.n_samples, rcfg.near, rcfg.far, rng)
        if phase is not None:
            check_phase_batch(phase, batch.views, dial)
        state.freeze_all()
        for t in (t for g in learnable for t in groups[g]):
            t.requires_grad = True
        alpha = barf_alpha(step, cfg.barf_start * steps, cfg.barf_end * steps) if barf else 1.0
        loss = batch_loss(state, batch, rcfg, loss_cfg, cfg.mode, alpha)
        if not np.isfinite(loss.value):
            raise NumericalError(f"non-finite loss at step {step} of stage {tag}", group=tag)
        grads = ad.backward(loss, accumulate=False)
        scale = step_lr(1.0, step, cfg.lr_gamma, period)
        skip = ()
        if camp and step >= cfg.camp_warmup and pose_groups:
            skip = tuple(pose_groups)
            _camp_pose_update(state, view_ids, grads, preconditioners, cfg, rcfg, scale, rng)
        for g in learnable:
            ps.check_update(g)
        ps.optimizer.step(grads, scale=scale, skip=skip)
        state.clamp_zooms()
        log.passes[tag] += len(view_ids)
        log.steps.append({"phase": tag, "step": step, "loss": float(loss.value), "lr_scale": scale,
                          "alpha": alpha})
    state.freeze_all()
    ps.verify(all_groups)
    if group_digest(frozen_tensors) != frozen_digest:
        raise PhaseViolation(f"a frozen tensor changed during {tag}", tag)
    for k in view_ids:
        log.zoom_trajectories.setdefault(dataset.views[k].name, []).append(float(state.zoom[k].value))
    return ps


def _camp_pose_update(state, view_ids, grads, preconditioners, cfg, rcfg, scale, rng):
    lo = np.asarray(rcfg.scene_center) - rcfg.scene_scale
    hi = np.asarray(rcfg.scene_center) + rcfg.scene_scale
    lo[2] = max(lo[2], rcfg.near)
    for k in view_ids:
        r, t = state.rotation[k], state.translation[k]
        if k not in preconditioners:
            preconditioners[k] = build_preconditioner(state.pose(k), rng, cfg.camp_nr, cfg.camp_lambda,
                                                      cfg.camp_mu, bounds=(lo, hi))
        g6 = np.concatenate([grads.get(r, np.zeros(3)), grads.get(t, np.zeros(3))])
        if not np.all(np.isfinite(g6)):
            raise NumericalError(f"non-finite pose gradient for view {k}", group="poses")
        p6 = preconditioned_pose_step(np.concatenate([r.value, t.value]), g6, preconditioners[k],
                                      cfg.camp_lr * scale)
        r.value, t.value = p6[:3].copy(), p6[3:].copy()


# ----------------------------------------------------------------------------
# phases


def init_state(dataset, cfg: TrainConfig) -> ModelState:
    state = ModelState.create(len(dataset.views), dataset.height, dataset.width, cfg.field, cfg.seed,
                              cfg.focal_init)
    if cfg.init_poses == "gt":
        for k, view in enumerate(dataset.views):
            if view.pose is not None:
                state.set_pose(k, view.pose, zoom=False)
        state.focal.value = np.array(dataset.views[0].pose.focal, dtype=np.float64)
    return state


def run_phase_a(dataset, cfg: TrainConfig, rng=None, state: ModelState = None, log: TrainLog = None,
                steps: int = None):
    """Bootstrap the field, wide-field poses and focal from wide-field images only."""
    cfg.validate()
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(cfg.seed if rng is None else rng)
    wide, _ = _split_ids(dataset, dataset.indices("train"))
    if len(wide) < 2:
        raise DataError(f"phase A needs at least two wide-field training images, found {len(wide)}")
    state = state or init_state(dataset, cfg)
    log = log or TrainLog()
    for k in wide:
        state.zoom[k].value = np.array(1.0)
    run_stage("A", "A", state, dataset, wide, phase_learnable("A", cfg.learn_wide_zoom),
              cfg.steps if steps is None else steps, cfg, rng, log,
              barf=cfg.backbone == "barf", camp=cfg.backbone == "camp")
    return state, log


def prime_views(state: ModelState, dataset, query_ids: Sequence[int], pool_ids: Sequence[int],
                use_dial: bool = True) -> List[dict]:
    """Match every query image against the pool and copy the winning pose into ``state``."""
    pool_imgs = [dataset.views[g].image for g in pool_ids]
    pool_poses = [state.pose(g) for g in pool_ids]
    records = []
    for j in query_ids:
        view = dataset.views[j]
        xi = float(view.zoom) if use_dial else 1.0
        match = match_wide_field(view.image, pool_imgs, xi)
        primed = prime_pose(match, pool_poses, xi, focal=state.focal.value)
        state.set_pose(j, primed, zoom=use_dial)
        records.append(OrderedDict(view=view.name, source=dataset.views[pool_ids[match.wide_index]].name,
                                   wide_index=int(pool_ids[match.wide_index]), mse=match.mse))
    return records


def run_phase_b(state: ModelState, dataset, cfg: TrainConfig, rng=None, log: TrainLog = None, steps: int = None):
    """Prime every zoom-in training view, then refine (R, t, xi) against the frozen field."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(cfg.seed + 1 if rng is None else rng)
    log = log or TrainLog()
    wide, zoom = _split_ids(dataset, dataset.indices("train"))
    field_digest = state.field.digest()
    log.matches.extend(prime_views(state, dataset, zoom, wide))
    if zoom:
        run_stage("B", "B", state, dataset, zoom, phase_learnable("B"),
                  (cfg.steps - cfg.steps_c) if steps is None else steps, cfg, rng, log)
    if state.field.digest() != field_digest:
        raise PhaseViolation("field parameters changed during phase B", "B")
    return state, log


def run_phase_c(state: ModelState, dataset, cfg: TrainConfig, rng=None, log: TrainLog = None, steps: int = None):
    """Joint refinement of the field and every camera parameter on all training images."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(cfg.seed + 2 if rng is None else rng)
    log = log or TrainLog()
    run_stage("C", "C", state, dataset, dataset.indices("train"), phase_learnable("C", cfg.learn_wide_zoom),
              cfg.steps_c if steps is None else steps, cfg, rng, log, camp=cfg.backbone == "camp")
    return state, log


BASELINE_GROUPS = ("field", "wide_poses", "zoom_poses", "focal", "depth_affine")


def run_baseline(dataset, cfg: TrainConfig, wide_only: bool, rng=None):
    """Pose-free baseline with every zoom scalar pinned at 1."""
    cfg.validate()
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(cfg.seed if rng is None else rng)
    ids = dataset.indices("train")
    if wide_only:
        ids, _ = _split_ids(dataset, ids)
    if not ids:
        raise DataError("baseline has no training images")
    state = init_state(dataset, cfg)
    log = TrainLog()
    run_stage("baseline", None, state, dataset, ids, BASELINE_GROUPS, cfg.steps, cfg, rng, log,
              barf=cfg.backbone == "barf", camp=cfg.backbone == "camp")
    return state, log


# ----------------------------------------------------------------------------
# registration and evaluation


def _fixed_rays(H, W, n, rng):
    u, v = pixel_centers(H, W)
    pix = rng.choice(H * W, size=min(n, H * W), replace=False)
    return pix, u[pix], v[pix]


def refine_pose(state: ModelState, target: np.ndarray, pose: CameraPose, cfg: TrainConfig, rcfg: RenderConfig,
                rng: np.random.Generator, learn_zoom: bool = True, steps: int = None):
    """Adam on (R, t[, xi]) of one view against the frozen field; returns the best iterate."""
    H, W = target.shape[:2]
    pix, u, v = _fixed_rays(H, W, cfg.register_rays, rng)
    obs = target.reshape(-1, 3)[pix]
    samples = stratified_samples(rcfg.near, rcfg.far, cfg.n_samples, None, n_rays=pix.size)
    state.field.requires_grad_(False)
    focal = np.asarray(state.focal.value)
    r = ad.Tensor(pose.rotation.copy(), True)
    t = ad.Tensor(pose.translation.copy(), True)
    z = ad.Tensor(np.array(pose.zoom), learn_zoom)
    params = {"pose": [r, t]}
    if learn_zoom:
        params["zoom"] = [z]
    opt = Adam(params, {"pose": cfg.register_lr, "zoom": cfg.register_lr})
    field_fn = NeuralField(state.field, rcfg, mode=cfg.mode)
    best = (np.inf, pose.copy())
    steps = cfg.register_steps if steps is None else steps
    for step in range(steps + 1):
        Rm = ad.rotation_from_axis_angle(r)
        n = pix.size
        o, d = ray_bundle(ad.reshape(Rm, (1, 3, 3)) * np.ones((n, 1, 1)), ad.reshape(t, (1, 3)) * np.ones((n, 1)),
                          focal, state.principal, z * np.ones(n), u, v)
        radii = ad.reciprocal(z * float(focal[0])) * np.ones(n) if cfg.mode == "ipe" else None
        rgb, _, _ = render_rays(field_fn, o, d, samples, background=rcfg.background, radii=radii)
        loss = ad.mean(ad.square(rgb - obs))
        val = float(loss.value)
        if not np.isfinite(val):
            raise NumericalError("non-finite loss during pose registration", group="registration")
        if val < best[0]:
            best = (val, pose.copy(rotation=r.value.copy(), translation=t.value.copy(), zoom=float(z.value),
                                   focal=focal.copy()))
        if step == steps:
            break
        grads = ad.backward(loss, accumulate=False)
        opt.step(grads)
        z.value = np.asarray(clamp_zoom(z.value), dtype=np.float64)
    return best[1], best[0]


def register_test_poses(state: ModelState, dataset, test_ids: Sequence[int], cfg: TrainConfig, rng=None,
                        baseline: bool = False) -> Dict[int, CameraPose]:
    """Prime and refine poses for held-out images; the field is left untouched.

    MZEN runs match against the wide-field training images using dial-zoom
    surrogates and refine (R, t, xi). Baselines have no zoom model, so they
    match against every training image at xi = 1 and refine (R, t) only.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(cfg.seed + 7 if rng is None else rng)
    rcfg = render_config_for(dataset, cfg)
    train = dataset.indices("train")
    wide, _ = _split_ids(dataset, train)
    if baseline:
        pool = [k for k in train if state.rotation[k] is not None]
    else:
        pool = wide
    pool_imgs = [dataset.views[g].image for g in pool]
    pool_poses = [state.pose(g) for g in pool]
    digest = state.field.digest()
    out = {}
    for j in test_ids:
        view = dataset.views[j]
        xi = 1.0 if baseline else float(view.zoom)
        match = match_wide_field(view.image, pool_imgs, xi)
        primed = prime_pose(match, pool_poses, xi, focal=state.focal.value)
        if baseline:
            primed.zoom = pool_poses[match.wide_index].zoom
        out[j], _ = refine_pose(state, view.image, primed, cfg, rcfg, rng, learn_zoom=not baseline)
    if state.field.digest() != digest:
        raise PhaseViolation("field changed during test-pose registration", "register")
    return out


def render_view(state: ModelState, pose: CameraPose, H: int, W: int, dataset, cfg: TrainConfig):
    rcfg = replace(render_config_for(dataset, cfg), chunk=2048)
    field_fn = NeuralField(state.field, rcfg, mode=cfg.mode)
    img, depth = render_image(field_fn, pose, H, W, rcfg, rng=None)
    return np.clip(img, 0.0, 1.0), depth


@dataclass
class ConfigRun:
    config: int
    state: ModelState
    log: TrainLog
    train_config: TrainConfig
    test_poses: Dict[int, CameraPose] = field(default_factory=dict)
    report: Optional[MetricReport] = None

    @property
    def baseline(self) -> bool:
        return self.config in (1, 2)


def run_config(n: int, dataset, cfg: TrainConfig, evaluate: bool = True, checkpoint_fn=None) -> ConfigRun:
    """Train configuration ``n`` (1-4) and optionally evaluate on the test split.

    ``checkpoint_fn(tag, state, log)`` is called after every phase.
    """
    ckpt = checkpoint_fn or (lambda tag, state, log: None)
    if n not in (1, 2, 3, 4):
        raise DataError(f"configuration must be 1, 2, 3 or 4, got {n}")
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    if n in (1, 2):
        state, log = run_baseline(dataset, cfg, wide_only=(n == 1), rng=rng)
        ckpt("baseline", state, log)
    elif n == 3:
        state, log = run_phase_a(dataset, cfg, rng)
        ckpt("A", state, log)
    else:
        state, log = run_phase_a(dataset, cfg, rng, steps=cfg.steps - cfg.steps_c)
        ckpt("A", state, log)
        run_phase_b(state, dataset, cfg, rng, log)
        ckpt("B", state, log)
        run_phase_c(state, dataset, cfg, rng, log)
        ckpt("C", state, log)
    run = ConfigRun(n, state, log, cfg)
    if evaluate and dataset.indices("test"):
        evaluate_run(run, dataset)
    return run


def evaluate_run(run: ConfigRun, dataset, test_ids: Sequence[int] = None) -> MetricReport:
    cfg = run.train_config
    test_ids = dataset.indices("test") if test_ids is None else list(test_ids)
    run.test_poses = register_test_poses(run.state, dataset, test_ids, cfg, baseline=run.baseline)
    refs, tests, zooms, names = [], [], [], []
    for j in test_ids:
        view = dataset.views[j]
        img, _ = render_view(run.state, run.test_poses[j], dataset.height, dataset.width, dataset, cfg)
        refs.append(view.image)
        tests.append(img)
        zooms.append(view.zoom)
        names.append(view.name)
    run.report = MetricReport.from_images(refs, tests, zooms, names)
    return run.report


def pass_counts(log: TrainLog) -> int:
    return log.total_passes


# ----------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, state: ModelState, log: TrainLog, dataset, cfg: TrainConfig, config: int):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    save_params(path / "field.bin", state.field)
    views = []
    for k, view in enumerate(dataset.views):
        rec = OrderedDict(name=view.name, pose=state.pose(k).to_record(),
                          depth_affine=[float(state.depth_a[k].value), float(state.depth_b[k].value)])
        views.append(rec)
    manifest = OrderedDict(config=config, train_config=cfg.to_dict(), views=views)
    (path / "poses.json").write_text(json.dumps(manifest, indent=2))
    (path / "log.json").write_text(json.dumps(log.to_dict(), indent=2))


def load_checkpoint(path, dataset):
    """Rebuild (state, TrainConfig, config number) from :func:`save_checkpoint` output."""
    path = Path(path)
    if not (path / "field.bin").exists() or not (path / "poses.json").exists():
        raise ManifestError(f"{path}: missing checkpoint files", key="checkpoint")
    params = load_params(path / "field.bin")
    manifest = json.loads((path / "poses.json").read_text())
    tc = dict(manifest["train_config"])
    tc["field"] = FieldConfig(**tc["field"])
    cfg = TrainConfig(**tc)
    views = manifest["views"]
    if len(views) != len(dataset.views):
        raise ManifestError("checkpoint and dataset have different view counts", key="views")
    state = ModelState(params, len(views), views[0]["pose"]["focal"], views[0]["pose"]["principal"])
    for k, rec in enumerate(views):
        state.set_pose(k, CameraPose.from_record(rec["pose"]))
        state.depth_a[k].value = np.array(rec["depth_affine"][0])
        state.depth_b[k].value = np.array(rec["depth_affine"][1])
    return state, cfg, int(manifest["config"])


# ----------------------------------------------------------------------------
# convergence harness


def predicted_iterations(e0: float, eps: float, eta: float, mu: float) -> int:
    """Iterations gradient descent needs to shrink excess loss ``e0`` below ``eps`` at rate ``1 - eta mu``."""
    if e0 <= eps:
        return 0
    if eps <= 0:
        raise DataError("eps must be positive")
    if not 0.0 < eta * mu < 1.0:
        raise DataError("eta * mu must lie in (0, 1)")
    return int(math.ceil((1.0 / (eta * mu)) * math.log(e0 / eps)))


class PoseObjective:
    """Photometric loss of one view as a function of its 6-vector pose, field frozen."""

    def __init__(self, state: ModelState, target: np.ndarray, zoom: float, cfg: TrainConfig, rcfg: RenderConfig,
                 rng: np.random.Generator, n_rays: int = None):
        H, W = target.shape[:2]
        self.pix, self.u, self.v = _fixed_rays(H, W, n_rays or cfg.register_rays, rng)
        self.obs = target.reshape(-1, 3)[self.pix]
        self.samples = stratified_samples(rcfg.near, rcfg.far, cfg.n_samples, None, n_rays=self.pix.size)
        self.focal = np.asarray(state.focal.value)
        self.principal = state.principal
        self.zoom = float(zoom)
        self.field_fn = NeuralField(state.field, rcfg, mode=cfg.mode)
        self.background = rcfg.background
        self.radii = np.full(self.pix.size, 1.0 / (self.zoom * self.focal[0])) if cfg.mode == "ipe" else None
        state.field.requires_grad_(False)

    def render(self, p6) -> ad.Tensor:
        p = p6 if isinstance(p6, ad.Tensor) else ad.Tensor(np.asarray(p6, dtype=np.float64))
        n = self.pix.size
        Rm = ad.rotation_from_axis_angle(p[:3])
        o, d = ray_bundle(ad.reshape(Rm, (1, 3, 3)) * np.ones((n, 1, 1)), ad.reshape(p[3:], (1, 3)) * np.ones((n, 1)),
                          self.focal, self.principal, np.full(n, self.zoom), self.u, self.v)
        rgb, _, _ = render_rays(self.field_fn, o, d, self.samples, background=self.background, radii=self.radii)
        return rgb

    def value_and_grad(self, p6):
        leaf = ad.Tensor(np.asarray(p6, dtype=np.float64).copy(), True)
        loss = ad.mean(ad.square(self.render(leaf) - self.obs))
        g = ad.backward(loss, accumulate=False).get(leaf, np.zeros(6))
        return float(loss.value), g

    def value(self, p6) -> float:
        with ad.no_grad():
            return float(ad.mean(ad.square(self.render(p6) - self.obs)).value)


def estimate_constants(obj: PoseObjective, p_star: np.ndarray, rng: np.random.Generator, n_samples: int = 24,
                       radius=(0.02, 0.03), loss_star: float = 0.0):
    """Numerical smoothness (L-hat) and PL (mu-hat) constants near ``p_star``."""
    scale = np.array([radius[0]] * 3 + [radius[1]] * 3)
    L_hat, mu_hat = 0.0, np.inf
    for _ in range(n_samples):
        a = p_star + rng.normal(0, 1, 6) * scale
        b = a + rng.normal(0, 1, 6) * scale * 0.25
        fa, ga = obj.value_and_grad(a)
        _, gb = obj.value_and_grad(b)
        L_hat = max(L_hat, np.linalg.norm(ga - gb) / max(np.linalg.norm(a - b), 1e-15))
        excess = fa - loss_star
        if excess > 1e-12:
            mu_hat = min(mu_hat, float(ga @ ga) / (2.0 * excess))
    return float(L_hat), float(mu_hat)


def descend(obj: PoseObjective, p0: np.ndarray, eta: float, eps: float, budget: int, loss_star: float = 0.0):
    """Plain gradient descent until excess loss <= eps; returns (iterations, censored, trace)."""
    p = np.asarray(p0, dtype=np.float64).copy()
    trace = []
    for it in range(budget + 1):
        f, g = obj.value_and_grad(p)
        trace.append(f - loss_star)
        if f - loss_star <= eps:
            return it, False, trace
        if it == budget:
            break
        p = p - eta * g
    return budget, True, trace


@dataclass
class ConvergenceExperimentConfig:
    eps: float = 1e-5
    eta: Optional[float] = None
    eta_fraction: float = 0.9
    sigma_rot: float = 0.3
    sigma_trans: float = 0.5
    n_random: int = 20
    budget: int = 300
    n_rays: int = 128

    def __post_init__(self):
        if self.eps <= 0:
            raise DataError("eps must be positive")


def priming_convergence_experiment(state: ModelState, target: np.ndarray, p_star: np.ndarray, p_primed: np.ndarray,
                                   zoom: float, cfg: TrainConfig, rcfg: RenderConfig, exp: ConvergenceExperimentConfig,
                                   rng=None, loss_star: float = 0.0, objective: PoseObjective = None) -> OrderedDict:
    """Iterations-to-eps of pose-only gradient descent from a primed vs random inits.

    ``target`` is the image to register and ``p_star`` its known optimum with
    loss ``loss_star``. Runs that miss ``eps`` within the budget are counted
    at the budget and reported as censored.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(0 if rng is None else rng)
    obj = objective or PoseObjective(state, target, zoom, cfg, rcfg, rng, exp.n_rays)
    p_star = np.asarray(p_star, dtype=np.float64)
    L_hat, mu_hat = estimate_constants(obj, p_star, rng, loss_star=loss_star)
    if not L_hat > 0.0:
        raise NumericalError("pose objective is flat near the optimum; the frozen field renders no structure")
    eta = exp.eta if exp.eta is not None else exp.eta_fraction / L_hat
    mu_eff = min(mu_hat, 0.99 / eta)
    t_primed, cens_primed, trace_primed = descend(obj, p_primed, eta, exp.eps, exp.budget, loss_star)
    spread = np.array([exp.sigma_rot] * 3 + [exp.sigma_trans] * 3)
    t_rand, e0_rand, censored = [], [], 0
    for _ in range(exp.n_random):
        p0 = p_star + rng.normal(0, 1, 6) * spread
        t, cens, trace = descend(obj, p0, eta, exp.eps, exp.budget, loss_star)
        t_rand.append(t)
        e0_rand.append(trace[0])
        censored += int(cens)
    e0_primed = trace_primed[0]
    med_rand = float(np.median(t_rand))
    e0_rand_med = float(np.median(e0_rand))
    pred_primed = predicted_iterations(e0_primed, exp.eps, eta, mu_eff)
    pred_rand = predicted_iterations(e0_rand_med, exp.eps, eta, mu_eff)
    delta2 = float(np.sum((np.asarray(p_primed) - p_star) ** 2))
    sigma2 = float(np.mean(np.sum((rng.normal(0, 1, (1000, 6)) * spread) ** 2, axis=1)))
    ratio = t_primed / med_rand if med_rand > 0 else float("nan")
    report = OrderedDict()
    report["T_primed"] = int(t_primed)
    report["T_primed_censored"] = bool(cens_primed)
    report["T_rand"] = [int(t) for t in t_rand]
    report["T_rand_median"] = med_rand
    report["censored"] = int(censored)
    report["ratio"] = ratio
    report["predicted_ratio"] = pred_primed / pred_rand if pred_rand > 0 else float("nan")
    report["predicted_T_primed"] = int(pred_primed)
    report["predicted_T_rand"] = int(pred_rand)
    report["distance_ratio"] = (math.log(delta2 / exp.eps) / math.log(sigma2 / exp.eps)
                                if delta2 > exp.eps and sigma2 > exp.eps else float("nan"))
    report["e0_primed"] = float(e0_primed)
    report["e0_rand_median"] = e0_rand_med
    report["eps"] = exp.eps
    report["eta"] = float(eta)
    report["L_hat"] = L_hat
    report["mu_hat"] = mu_hat
    report["primed_faster"] = bool(t_primed < med_rand)
    report["K"] = exp.n_random
    return report


def convergence_setup(state: ModelState, dataset, k: int, cfg: TrainConfig):
    """Target image, optimum and primed init for the convergence harness on view ``k``.

    The target is the frozen field's own render at the view's ground-truth
    pose, so the optimum is known exactly and has zero loss.
    """
    view = dataset.views[k]
    if view.pose is None:
        raise DataError(f"view {view.name} has no ground-truth pose")
    pose = view.pose.copy(focal=np.array(state.focal.value), principal=np.array(state.principal))
    target, _ = render_view(state, pose, dataset.height, dataset.width, dataset, cfg)
    wide, _ = _split_ids(dataset, dataset.indices("train"))
    match = match_wide_field(view.image, [dataset.views[g].image for g in wide], view.zoom)
    g = wide[match.wide_index]
    p_star = np.concatenate([view.pose.rotation, view.pose.translation])
    p_primed = np.concatenate([state.rotation[g].value, state.translation[g].value])
    return target, p_star, p_primed, g
