"""Crop-and-match pose priming for zoom-in views.

A zoom-in image taken at dial zoom ``xi`` roughly shows the central ``1/xi``
of the wide-field image from the same camera. Each wide-field image is
turned into a surrogate by cropping that region and resizing it back to the
native resolution; the zoom-in view inherits the extrinsics of the wide view
whose surrogate is closest in RGB mean-squared error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .camera import CameraPose
from .errors import DataError, ShapeError

WORKING_SIZE = 64


@dataclass
class SurrogateMatch:
    wide_index: int
    mse: float
    surrogate: np.ndarray
    all_mse: np.ndarray = None


def crop_size(H: int, W: int, zoom: float):
    """(height, width) of the central ``1/zoom`` crop, rounded to even integers."""
    if zoom < 1.0:
        raise DataError(f"zoom must be >= 1, got {zoom}")

    def even(x):
        return int(2 * np.floor(x / 2.0 + 0.5))

    return even(H / zoom), even(W / zoom)


def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize with pixel centres at ``i + 0.5`` and clamped edges."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if (h, w) == (height, width):
        return img.copy()
    ys = (np.arange(height) + 0.5) * (h / height) - 0.5
    xs = (np.arange(width) + 0.5) * (w / width) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    coords = np.stack([yy, xx])
    if img.ndim == 2:
        return ndimage.map_coordinates(img, coords, order=1, mode="nearest")
    return np.stack([ndimage.map_coordinates(img[..., c], coords, order=1, mode="nearest")
                     for c in range(img.shape[2])], axis=-1)


def make_surrogate(wide: np.ndarray, zoom: float) -> np.ndarray:
    """Central ``1/zoom`` crop of ``wide`` resized back to its native size."""
    wide = np.asarray(wide, dtype=np.float64)
    H, W = wide.shape[:2]
    ch, cw = crop_size(H, W, zoom)
    if ch < 2 or cw < 2:
        raise DataError(f"zoom {zoom} leaves a crop of {ch}x{cw}, below 2x2")
    top, left = (H - ch) // 2, (W - cw) // 2
    return resize_bilinear(wide[top:top + ch, left:left + cw], H, W)


def _working(img: np.ndarray) -> np.ndarray:
    H, W = img.shape[:2]
    if H > WORKING_SIZE or W > WORKING_SIZE:
        return resize_bilinear(img, WORKING_SIZE, WORKING_SIZE)
    return img


def match_wide_field(zoomin: np.ndarray, wide_set: Sequence[np.ndarray], zoom: float) -> SurrogateMatch:
    """Index of the wide-field image whose surrogate best explains ``zoomin``.

    Ties resolve to the lowest index.
    """
    if len(wide_set) == 0:
        raise DataError("wide_set is empty")
    zoomin = np.asarray(zoomin, dtype=np.float64)
    query = _working(zoomin)
    surrogates, errors = [], []
    for wide in wide_set:
        if np.shape(wide) != zoomin.shape:
            raise ShapeError("wide and zoom-in images differ in shape", np.shape(wide), zoomin.shape)
        s = make_surrogate(wide, zoom)
        surrogates.append(s)
        errors.append(float(np.mean((_working(s) - query) ** 2)))
    errors = np.array(errors)
    g = int(np.argmin(errors))
    return SurrogateMatch(g, float(errors[g]), surrogates[g], errors)


def prime_pose(match: SurrogateMatch, wide_poses: Sequence[CameraPose], dial: float, focal=None) -> CameraPose:
    """Copy (R, t) of the matched wide view, inherit the shared focal, set zoom to ``dial``."""
    src = wide_poses[match.wide_index]
    f = src.focal if focal is None else np.asarray(focal, dtype=np.float64)
    return src.copy(focal=np.array(f, dtype=np.float64), zoom=float(dial))
