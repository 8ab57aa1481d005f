"""Zoom-aware pinhole camera and per-pixel ray generation.

Conventions: the camera looks along its +z axis, image columns ``i`` grow
along +x and rows ``j`` along +y. ``rotation`` is the camera-to-world
rotation in axis-angle form and ``translation`` is the camera centre. A
per-view zoom scalar multiplies the shared focal length, so the effective
intrinsics are ``diag(zoom*fx, zoom*fy, 1)`` with the principal point in
the third column.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ManifestError

ZOOM_MIN = 1.0
ZOOM_MAX = 64.0


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray


@dataclass
class CameraPose:
    """Extrinsics, shared intrinsics and the learnable zoom of one view."""

    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    focal: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0]))
    principal: np.ndarray = field(default_factory=lambda: np.zeros(2))
    zoom: float = 1.0

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.focal = np.asarray(self.focal, dtype=np.float64).reshape(2)
        self.principal = np.asarray(self.principal, dtype=np.float64).reshape(2)
        self.zoom = float(self.zoom)

    @property
    def rotation_matrix(self) -> np.ndarray:
        return rotation_from_axis_angle(self.rotation)

    def copy(self, **changes) -> "CameraPose":
        base = dict(rotation=self.rotation.copy(), translation=self.translation.copy(),
                    focal=self.focal.copy(), principal=self.principal.copy(), zoom=self.zoom)
        base.update(changes)
        return replace(self, **base)

    def to_record(self) -> dict:
        return {
            "rotation": [float(x) for x in self.rotation],
            "translation": [float(x) for x in self.translation],
            "focal": [float(x) for x in self.focal],
            "principal": [float(x) for x in self.principal],
            "zoom": float(self.zoom),
        }

    @classmethod
    def from_record(cls, record: dict) -> "CameraPose":
        sizes = {"rotation": 3, "translation": 3, "focal": 2, "principal": 2}
        if not isinstance(record, dict):
            raise ManifestError("pose record must be an object", key="pose")
        values = {}
        for key, n in sizes.items():
            if key not in record:
                raise ManifestError(f"pose record is missing {key!r}", key=key)
            v = record[key]
            if not isinstance(v, list) or len(v) != n or not all(isinstance(x, (int, float)) for x in v):
                raise ManifestError(f"pose field {key!r} must be a list of {n} numbers", key=key)
            values[key] = v
        zoom = record.get("zoom")
        if not isinstance(zoom, (int, float)) or isinstance(zoom, bool) or zoom < ZOOM_MIN:
            raise ManifestError("pose field 'zoom' must be a number >= 1", key="zoom")
        return cls(zoom=zoom, **values)


def rotation_from_axis_angle(v) -> np.ndarray:
    """Rotation matrix for axis-angle vector(s) ``v`` (..., 3)."""
    with ad.no_grad():
        return ad.rotation_from_axis_angle(np.asarray(v, dtype=np.float64)).value


def axis_angle_from_rotation(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rotation_from_axis_angle` for angles below pi."""
    R = np.asarray(R, dtype=np.float64)
    cos_t = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_t)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-8:
        return 0.5 * w
    return theta / (2.0 * np.sin(theta)) * w


def rotation_angle_between(R1: np.ndarray, R2: np.ndarray) -> float:
    """Geodesic angle in radians between two rotation matrices."""
    c = (np.trace(R1.T @ R2) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def look_at_rotation(eye, target, up=(0.0, -1.0, 0.0)) -> np.ndarray:
    """Camera-to-world rotation whose +z axis points from ``eye`` to ``target``."""
    z = np.asarray(target, float) - np.asarray(eye, float)
    z /= np.linalg.norm(z)
    x = np.cross(np.asarray(up, float), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


def effective_intrinsics(pose: CameraPose) -> np.ndarray:
    """K_eff = [[zoom*fx, 0, cx], [0, zoom*fy, cy], [0, 0, 1]]."""
    fx, fy = pose.zoom * pose.focal
    cx, cy = pose.principal
    return np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])


def clamp_zoom(zoom):
    return np.clip(zoom, ZOOM_MIN, ZOOM_MAX)


def ray_bundle(R: Tensor, t: Tensor, focal: Tensor, principal, zoom: Tensor,
               u, v) -> Tuple[Tensor, Tensor]:
    """Differentiable rays for a batch of pixels.

    Args:
        R: camera-to-world rotations, (B, 3, 3).
        t: camera centres, (B, 3).
        focal: shared (fx, fy), shape (2,).
        principal: (cx, cy) array, not differentiated.
        zoom: per-ray zoom scalars, (B,).
        u, v: continuous pixel coordinates (column, row), each (B,).

    Returns:
        origins (B, 3) and unit directions (B, 3).
    """
    R, t, focal, zoom = (ad.as_tensor(x) for x in (R, t, focal, zoom))
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    cx, cy = np.asarray(principal, dtype=np.float64)
    inv_fx = ad.reciprocal(zoom * focal[0])
    inv_fy = ad.reciprocal(zoom * focal[1])
    dx = inv_fx * (u - cx)
    dy = inv_fy * (v - cy)
    dz = Tensor(np.ones_like(u))
    d_cam = ad.stack([dx, dy, dz], axis=-1)
    d_world = ad.matmul(R, d_cam.reshape(-1, 3, 1)).reshape(-1, 3)
    norm = ad.sqrt(ad.sum_(ad.square(d_world), axis=-1, keepdims=True))
    return t, d_world / norm


def pixel_ray(pose: CameraPose, i: float, j: float) -> Ray:
    """Ray through continuous pixel position (column ``i``, row ``j``)."""
    with ad.no_grad():
        R = ad.rotation_from_axis_angle(pose.rotation).reshape(1, 3, 3)
        o, d = ray_bundle(R, pose.translation.reshape(1, 3), pose.focal, pose.principal,
                          np.array([pose.zoom]), np.array([i], float), np.array([j], float))
    return Ray(origin=o.value.reshape(3).copy(), direction=d.value.reshape(3).copy())


def pixel_centers(H: int, W: int):
    """Continuous (u, v) coordinates of the pixel centres, row-major."""
    jj, ii = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    return ii.ravel() + 0.5, jj.ravel() + 0.5


def image_center(H: int, W: int) -> np.ndarray:
    return np.array([W / 2.0, H / 2.0])
