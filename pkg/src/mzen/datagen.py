"""Synthetic multi-zoom scenes, zoom-triplet synthesis and dataset I/O.

A generated dataset renders every camera of a forward-facing rig at every
zoom level with identical extrinsics, attaches ground-truth poses and
expected-depth maps, and can be written to / read from a directory::

    scene.json
    images/cam{c}_z{zoom}.png
    depth/cam{c}_z{zoom}.bin      # row-major little-endian float64
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image as PILImage

from . import autodiff as ad
from .camera import CameraPose, image_center
from .errors import DataError, ManifestError
from .render import RenderConfig, render_image

log = logging.getLogger(__name__)


# ----------------------------------------------------------------------------
# analytic scenes


@dataclass
class Primitive:
    """A sphere (``size`` = radius) or axis-aligned box (``size`` = full extents).

    ``checker`` optionally gives (period, second_albedo) for an x/y checker
    pattern, which supplies texture that only resolves at higher zoom.
    """

    kind: str
    center: Tuple[float, float, float]
    size: object
    albedo: Tuple[float, float, float]
    density: float = 40.0
    checker: Optional[Tuple[float, Tuple[float, float, float]]] = None

    def __post_init__(self):
        if self.kind not in ("sphere", "box"):
            raise DataError(f"unknown primitive kind {self.kind!r}")
        if self.density < 0:
            raise DataError("primitive density must be non-negative")
        self.center = np.asarray(self.center, dtype=np.float64)
        self.albedo = np.asarray(self.albedo, dtype=np.float64)

    @property
    def half_extent(self) -> np.ndarray:
        if self.kind == "sphere":
            return np.full(3, float(self.size))
        return 0.5 * np.asarray(self.size, dtype=np.float64)

    @property
    def volume(self) -> float:
        if self.kind == "sphere":
            return 4.0 / 3.0 * math.pi * float(self.size) ** 3
        return float(np.prod(self.size))

    def contains(self, x: np.ndarray) -> np.ndarray:
        rel = x - self.center
        if self.kind == "sphere":
            return np.sum(rel * rel, axis=-1) <= float(self.size) ** 2
        return np.all(np.abs(rel) <= self.half_extent, axis=-1)

    def color_at(self, x: np.ndarray) -> np.ndarray:
        base = np.broadcast_to(self.albedo, x.shape[:-1] + (3,))
        if self.checker is None:
            return base
        period, other = self.checker
        parity = (np.floor(x[..., 0] / period) + np.floor(x[..., 1] / period)) % 2
        return np.where(parity[..., None] > 0.5, np.asarray(other, dtype=np.float64), base)


@dataclass
class AnalyticScene:
    primitives: List[Primitive]
    bounds: Tuple[Tuple[float, float, float], Tuple[float, float, float]]
    name: str = "synthetic"

    def __post_init__(self):
        lo, hi = (np.asarray(b, dtype=np.float64) for b in self.bounds)
        for p in self.primitives:
            if np.any(p.center - p.half_extent < lo - 1e-9) or np.any(p.center + p.half_extent > hi + 1e-9):
                raise DataError("primitive extends outside the scene bounds")

    @property
    def diameter(self) -> float:
        lo, hi = (np.asarray(b, dtype=np.float64) for b in self.bounds)
        return float(np.linalg.norm(hi - lo))


def analytic_field(scene: AnalyticScene, x, d=None):
    """Density and view-independent colour of the innermost primitive at ``x``.

    Innermost means smallest volume among the primitives containing ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    shape = x.shape[:-1]
    sigma = np.zeros(shape)
    rgb = np.zeros(shape + (3,))
    best = np.full(shape, np.inf)
    for p in scene.primitives:
        inside = p.contains(x) & (p.volume < best)
        if not np.any(inside):
            continue
        best = np.where(inside, p.volume, best)
        sigma = np.where(inside, p.density, sigma)
        rgb = np.where(inside[..., None], p.color_at(x), rgb)
    return rgb, sigma


class SceneField:
    """Renderer-protocol wrapper around :func:`analytic_field`."""

    def __init__(self, scene: AnalyticScene):
        self.scene = scene

    def __call__(self, points, dirs, sigma2=None):
        pts = points.value if isinstance(points, ad.Tensor) else np.asarray(points)
        rgb, sigma = analytic_field(self.scene, pts)
        return ad.Tensor(rgb), ad.Tensor(sigma)


def one_sphere_scene(radius: float = 0.8, albedo=(0.9, 0.3, 0.2), density: float = 40.0) -> AnalyticScene:
    return AnalyticScene([Primitive("sphere", (0.0, 0.0, 3.0), radius, albedo, density)],
                         bounds=((-2.0, -2.0, 1.0), (2.0, 2.0, 5.0)), name="one_sphere")


def default_scene() -> AnalyticScene:
    """Forward-facing tabletop: textured back wall, three objects, fine detail near the axis."""
    prims = [
        Primitive("box", (0.0, 0.0, 4.15), (5.0, 5.0, 0.3), (0.85, 0.8, 0.65), 30.0,
                  checker=(0.35, (0.55, 0.5, 0.45))),
        Primitive("sphere", (-0.85, 0.45, 2.6), 0.42, (0.85, 0.2, 0.15), 40.0),
        Primitive("sphere", (0.9, -0.45, 2.7), 0.36, (0.15, 0.3, 0.85), 40.0),
        Primitive("box", (0.05, 0.05, 3.2), (1.1, 0.9, 0.4), (0.2, 0.7, 0.3), 40.0,
                  checker=(0.07, (0.95, 0.9, 0.2))),
        Primitive("sphere", (-0.25, -0.2, 2.85), 0.07, (1.0, 1.0, 1.0), 60.0),
        Primitive("sphere", (0.3, 0.25, 2.85), 0.06, (0.1, 0.1, 0.1), 60.0),
        Primitive("sphere", (0.25, -0.3, 2.9), 0.05, (0.9, 0.1, 0.9), 60.0),
    ]
    return AnalyticScene(prims, bounds=((-2.5, -2.5, 1.5), (2.5, 2.5, 4.3)), name="tabletop")


def render_ground_truth(scene: AnalyticScene, pose: CameraPose, H: int, W: int,
                        cfg: RenderConfig = None, seed: int = 0):
    """Image and expected depth of ``scene`` seen from ``pose``."""
    cfg = cfg or RenderConfig(n_samples=192, near=1.0, far=6.0)
    return render_image(SceneField(scene), pose, H, W, cfg, rng=seed)


# ----------------------------------------------------------------------------
# BLEFF-style zoom synthesis


def center_crop(img: np.ndarray, width: int, height: int) -> np.ndarray:
    H, W = img.shape[:2]
    if width > W or height > H:
        raise DataError(f"crop {width}x{height} exceeds image {W}x{H}")
    x0 = (W - width) // 2
    y0 = (H - height) // 2
    return img[y0:y0 + height, x0:x0 + width]


def resize_bicubic(img: np.ndarray, width: int, height: int) -> np.ndarray:
    """Per-channel float bicubic resampling via Pillow."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape[1] == width and img.shape[0] == height:
        return img.copy()
    channels = img[..., None] if img.ndim == 2 else img
    out = [np.asarray(PILImage.fromarray(channels[..., c].astype(np.float32), mode="F")
                      .resize((width, height), PILImage.BICUBIC), dtype=np.float64)
           for c in range(channels.shape[-1])]
    res = np.stack(out, axis=-1)
    return res[..., 0] if img.ndim == 2 else res


def synthesize_zoom_triplet(hr: np.ndarray, native: Tuple[int, int] = None):
    """1x / 2x / 4x views from one high-resolution master.

    The 1x view is the whole master resized to ``native`` (width, height),
    the 2x view is the central half-size crop resized to ``native``, and the
    4x view is the central quarter-size crop taken as is. ``native``
    defaults to the quarter size. A 1440x1040 master with ``native=(390, 260)``
    gives 390x260, 390x260 (from 720x520) and 360x260.
    """
    H, W = hr.shape[:2]
    if H % 4 or W % 4:
        raise DataError(f"master dimensions {W}x{H} must be divisible by 4")
    nw, nh = native if native is not None else (W // 4, H // 4)
    one = resize_bicubic(hr, nw, nh)
    two = resize_bicubic(center_crop(hr, W // 2, H // 2), nw, nh)
    four = center_crop(hr, W // 4, H // 4).copy()
    return one, two, four


# ----------------------------------------------------------------------------
# datasets


@dataclass
class View:
    image: np.ndarray
    zoom: float
    camera: int
    pose: Optional[CameraPose] = None
    depth: Optional[np.ndarray] = None

    @property
    def name(self) -> str:
        return f"cam{self.camera}_z{self.zoom:g}"


@dataclass
class MultiZoomDataset:
    views: List[View]
    split: dict = field(default_factory=lambda: {"train": [], "test": []})
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for v in self.views:
            if v.zoom < 1.0:
                raise DataError(f"view {v.name} has dial zoom below 1")

    def __len__(self):
        return len(self.views)

    @property
    def height(self) -> int:
        return self.views[0].image.shape[0]

    @property
    def width(self) -> int:
        return self.views[0].image.shape[1]

    @property
    def zoom_levels(self) -> List[float]:
        return sorted({v.zoom for v in self.views})

    def indices(self, subset: str = "all") -> List[int]:
        if subset == "all":
            return list(range(len(self.views)))
        return list(self.split[subset])

    def wide_indices(self, subset: str = "all", tol: float = 1e-6) -> List[int]:
        return [k for k in self.indices(subset) if self.views[k].zoom <= 1.0 + tol]

    def zoom_indices(self, subset: str = "all", tol: float = 1e-6) -> List[int]:
        return [k for k in self.indices(subset) if self.views[k].zoom > 1.0 + tol]

    def n_out(self) -> int:
        return len(self.wide_indices())

    def n_in(self) -> int:
        return len(self.zoom_indices())


@dataclass
class CameraRig:
    """Forward-facing grid of cameras near the origin looking along +z."""

    n_cameras: int = 6
    columns: int = 3
    spacing: Tuple[float, float] = (0.3, 0.3)
    H: int = 64
    W: int = 64
    focal_ratio: float = 1.1
    rotation_jitter: float = 0.02
    translation_jitter: float = 0.02
    # per-view drift applied to zoom-in extrinsics
    zoom_rotation_drift: float = 0.0
    zoom_translation_drift: float = 0.0

    @property
    def focal(self) -> np.ndarray:
        return np.array([self.focal_ratio * self.W, self.focal_ratio * self.W])

    def base_poses(self, rng) -> List[CameraPose]:
        if self.n_cameras < 2:
            raise DataError("a rig needs at least two cameras")
        rows = int(math.ceil(self.n_cameras / self.columns))
        poses = []
        for c in range(self.n_cameras):
            r, q = divmod(c, self.columns)
            x = (q - (self.columns - 1) / 2.0) * self.spacing[0]
            y = (r - (rows - 1) / 2.0) * self.spacing[1]
            t = np.array([x, y, 0.0]) + rng.normal(0, self.translation_jitter, 3)
            rot = rng.normal(0, self.rotation_jitter, 3)
            poses.append(CameraPose(rot, t, self.focal, image_center(self.H, self.W), 1.0))
        return poses


def generate_scene_dataset(scene: AnalyticScene, rig: CameraRig = None, zoom_levels: Sequence[float] = (1, 2, 4),
                           seed: int = 0, render_cfg: RenderConfig = None, depth_noise: float = 0.0,
                           dial_noise: float = 0.0) -> MultiZoomDataset:
    """Render every rig camera at every zoom level.

    Args:
        depth_noise: multiplicative noise std applied to the stored depth prior.
        dial_noise: relative noise on recorded dial zooms (1x stays exact).
    """
    rig = rig or CameraRig()
    zoom_levels = sorted(float(z) for z in zoom_levels)
    if zoom_levels[0] != 1.0:
        raise DataError("zoom levels must include 1")
    rng = np.random.default_rng(seed)
    cfg = render_cfg or RenderConfig(n_samples=192, near=1.0, far=6.0)
    views = []
    for c, base in enumerate(rig.base_poses(rng)):
        for z in zoom_levels:
            pose = base.copy(zoom=z)
            if z > 1.0 and (rig.zoom_rotation_drift or rig.zoom_translation_drift):
                pose.rotation = pose.rotation + rng.normal(0, rig.zoom_rotation_drift, 3)
                pose.translation = pose.translation + rng.normal(0, rig.zoom_translation_drift, 3)
            img, depth = render_image(SceneField(scene), pose, rig.H, rig.W, cfg, rng=seed * 1000 + len(views))
            if depth_noise:
                depth = depth * (1.0 + rng.normal(0, depth_noise, depth.shape))
            dial = z if z == 1.0 or not dial_noise else z * (1.0 + rng.normal(0, dial_noise))
            views.append(View(np.clip(img, 0.0, 1.0), max(1.0, dial), c, pose, depth))
    meta = {
        "scene": scene.name,
        "resolution": [rig.H, rig.W],
        "zoom_levels": zoom_levels,
        "n_cameras": rig.n_cameras,
        "near": cfg.near,
        "far": cfg.far,
        "bounds": [list(map(float, b)) for b in scene.bounds],
        "diameter": scene.diameter,
    }
    ds = MultiZoomDataset(views, {"train": list(range(len(views))), "test": []}, meta)
    return ds


def split_train_test(dataset: MultiZoomDataset, fraction: float = 0.8, seed: int = 0,
                     require_wide: bool = True) -> MultiZoomDataset:
    """Random disjoint split with ``floor(fraction * n)`` training views."""
    if not 0.0 < fraction < 1.0:
        raise DataError("train fraction must lie strictly between 0 and 1")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(math.floor(fraction * n))
    train = sorted(int(k) for k in order[:n_train])
    test = sorted(int(k) for k in order[n_train:])
    dataset.split = {"train": train, "test": test}
    if require_wide and not dataset.wide_indices("train"):
        log.warning("split leaves no wide-field training views; Phase A cannot run")
    return dataset


# ----------------------------------------------------------------------------
# persistence


def _to_png(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_dataset(dataset: MultiZoomDataset, path) -> Path:
    root = Path(path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "depth").mkdir(parents=True, exist_ok=True)
    records = []
    for v in dataset.views:
        rec = {"name": v.name, "camera": int(v.camera), "zoom": float(v.zoom), "image": f"images/{v.name}.png"}
        PILImage.fromarray(_to_png(v.image), mode="RGB").save(root / rec["image"], optimize=False)
        if v.depth is not None:
            rec["depth"] = f"depth/{v.name}.bin"
            (root / rec["depth"]).write_bytes(np.ascontiguousarray(v.depth, dtype="<f8").tobytes())
        if v.pose is not None:
            rec["pose"] = v.pose.to_record()
        records.append(rec)
    manifest = {
        "meta": dataset.meta,
        "views": records,
        "split": {"train": list(map(int, dataset.split["train"])), "test": list(map(int, dataset.split["test"]))},
    }
    (root / "scene.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root


def _require(obj, key, kind, where):
    if not isinstance(obj, dict) or key not in obj:
        raise ManifestError(f"{where}: missing key {key!r}", key=key)
    val = obj[key]
    if kind is float:
        ok = isinstance(val, (int, float)) and not isinstance(val, bool)
    else:
        ok = isinstance(val, kind)
    if not ok:
        raise ManifestError(f"{where}: key {key!r} has the wrong type", key=key)
    return val


def load_dataset(path) -> MultiZoomDataset:
    root = Path(path)
    try:
        manifest = json.loads((root / "scene.json").read_text())
    except FileNotFoundError:
        raise ManifestError(f"{root}: no scene.json", key="scene.json") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{root}/scene.json is not valid JSON ({exc})", key="scene.json") from None
    meta = _require(manifest, "meta", dict, "scene.json")
    records = _require(manifest, "views", list, "scene.json")
    split = _require(manifest, "split", dict, "scene.json")
    views = []
    for k, rec in enumerate(records):
        where = f"views[{k}]"
        rel = _require(rec, "image", str, where)
        zoom = _require(rec, "zoom", float, where)
        camera = _require(rec, "camera", int, where)
        if zoom < 1.0:
            raise ManifestError(f"{where}: zoom must be >= 1", key="zoom")
        img = np.asarray(PILImage.open(root / rel).convert("RGB"), dtype=np.float64) / 255.0
        depth = None
        if "depth" in rec:
            raw = np.frombuffer((root / _require(rec, "depth", str, where)).read_bytes(), dtype="<f8")
            if raw.size != img.shape[0] * img.shape[1]:
                raise ManifestError(f"{where}: depth size does not match the image", key="depth")
            depth = raw.reshape(img.shape[:2]).astype(np.float64)
        pose = CameraPose.from_record(rec["pose"]) if "pose" in rec else None
        views.append(View(img, float(zoom), int(camera), pose, depth))
    train = _require(split, "train", list, "split")
    test = _require(split, "test", list, "split")
    n = len(views)
    for key, idx in (("train", train), ("test", test)):
        if not all(isinstance(i, int) and 0 <= i < n for i in idx):
            raise ManifestError(f"split.{key} holds an invalid view index", key=key)
    if set(train) & set(test):
        raise ManifestError("train and test splits overlap", key="split")
    return MultiZoomDataset(views, {"train": train, "test": test}, meta)
