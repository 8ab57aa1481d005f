"""Image quality metrics: PSNR, SSIM and two structure-similarity scores.

GSS compares Gaussian-smoothed gradient magnitudes and LSS compares
intensity-normalised Laplacians. Both are ``1 - sum|a - b| / sum(|a| + |b|)``
over the derived fields, which lies in [0, 1] by the triangle inequality.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np
from scipy import ndimage

from .errors import DataError, ShapeError

PSNR_SENTINEL = 99.0
SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_WINDOW, SSIM_SIGMA = 11, 1.5
SMOOTH_SIZE, SMOOTH_SIGMA = 5, 1.0


def _check_pair(ref, test):
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ShapeError("images differ in shape", ref.shape, test.shape)
    return ref, test


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Normalised 2-D Gaussian of odd ``size``."""
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def psnr(ref, test) -> float:
    ref, test = _check_pair(ref, test)
    mse = float(np.mean((ref - test) ** 2))
    if mse == 0.0:
        return PSNR_SENTINEL
    return float(-10.0 * np.log10(mse))


def _ssim_channel(x, y, window):
    def filt(a):
        full = ndimage.correlate(a, window, mode="constant")
        h = window.shape[0] // 2
        return full[h:a.shape[0] - h, h:a.shape[1] - h]

    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(ref, test) -> float:
    """Mean local SSIM over valid window positions, averaged over channels."""
    ref, test = _check_pair(ref, test)
    if min(ref.shape[:2]) < SSIM_WINDOW:
        raise DataError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    window = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    if ref.ndim == 2:
        return _ssim_channel(ref, test, window)
    return float(np.mean([_ssim_channel(ref[..., c], test[..., c], window) for c in range(ref.shape[2])]))


def grayscale(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img.mean(axis=-1) if img.ndim == 3 else img


def gaussian_smooth(img, size: int = SMOOTH_SIZE, sigma: float = SMOOTH_SIGMA) -> np.ndarray:
    """Same-size Gaussian blur with zero padding."""
    return ndimage.correlate(np.asarray(img, dtype=np.float64), gaussian_kernel(size, sigma),
                             mode="constant", cval=0.0)


def gradient_magnitude(img_s) -> np.ndarray:
    """sqrt(dxx^2 + dyy^2) of three-point second differences; 1-px margin is 0."""
    I = np.asarray(img_s, dtype=np.float64)
    G = np.zeros_like(I)
    c = I[1:-1, 1:-1]
    gx = I[1:-1, 2:] + I[1:-1, :-2] - 2.0 * c
    gy = I[2:, 1:-1] + I[:-2, 1:-1] - 2.0 * c
    G[1:-1, 1:-1] = np.sqrt(gx ** 2 + gy ** 2)
    return G


def laplacian_normalized(img_s) -> np.ndarray:
    """4-neighbour Laplacian divided by ``1 + I``; 1-px margin is 0."""
    I = np.asarray(img_s, dtype=np.float64)
    L = np.zeros_like(I)
    c = I[1:-1, 1:-1]
    lap = I[1:-1, 2:] + I[1:-1, :-2] + I[2:, 1:-1] + I[:-2, 1:-1] - 4.0 * c
    L[1:-1, 1:-1] = lap / (1.0 + c)
    return L


def similarity_score(a: np.ndarray, b: np.ndarray) -> float:
    den = float(np.sum(np.abs(a) + np.abs(b)))
    if den == 0.0:
        return 1.0
    return 1.0 - float(np.sum(np.abs(a - b))) / den


def gss(ref, test, sigma: float = SMOOTH_SIGMA) -> float:
    ref, test = _check_pair(ref, test)
    a = gradient_magnitude(gaussian_smooth(grayscale(ref), sigma=sigma))
    b = gradient_magnitude(gaussian_smooth(grayscale(test), sigma=sigma))
    return similarity_score(a, b)


def lss(ref, test, sigma: float = SMOOTH_SIGMA) -> float:
    ref, test = _check_pair(ref, test)
    a = laplacian_normalized(gaussian_smooth(grayscale(ref), sigma=sigma))
    b = laplacian_normalized(gaussian_smooth(grayscale(test), sigma=sigma))
    return similarity_score(a, b)


METRIC_NAMES = ("psnr", "ssim", "gss", "lss")


def image_scores(ref, test) -> "OrderedDict[str, float]":
    return OrderedDict((name, fn(ref, test)) for name, fn in
                       zip(METRIC_NAMES, (psnr, ssim, gss, lss)))


def _mean_block(rows):
    return OrderedDict((k, float(np.mean([r[k] for r in rows]))) for k in METRIC_NAMES)


@dataclass
class MetricReport:
    """Overall scores, per-zoom averages and per-image rows.

    ``overall`` is the mean of the per-zoom blocks, so every zoom level
    counts equally regardless of how many images it has.
    """

    psnr: float
    ssim: float
    gss: float
    lss: float
    per_zoom: Dict[str, Dict[str, float]] = field(default_factory=dict)
    per_image: list = field(default_factory=list)

    @classmethod
    def from_images(cls, refs: Sequence[np.ndarray], tests: Sequence[np.ndarray], zooms: Sequence[float],
                    names: Sequence[str] = None) -> "MetricReport":
        if not (len(refs) == len(tests) == len(zooms)) or len(refs) == 0:
            raise DataError("need equally many (>0) reference images, test images and zooms")
        names = names or [f"image{k}" for k in range(len(refs))]
        rows = []
        for name, ref, test, z in zip(names, refs, tests, zooms):
            row = OrderedDict(name=name, zoom=float(z))
            row.update(image_scores(ref, test))
            rows.append(row)
        per_zoom = OrderedDict()
        for z in sorted(set(r["zoom"] for r in rows)):
            per_zoom[f"{z:g}"] = _mean_block([r for r in rows if r["zoom"] == z])
        overall = _mean_block(list(per_zoom.values()))
        return cls(per_zoom=per_zoom, per_image=rows, **overall)

    def to_dict(self) -> "OrderedDict":
        out = OrderedDict((k, getattr(self, k)) for k in METRIC_NAMES)
        out["per_zoom"] = self.per_zoom
        out["per_image"] = self.per_image
        return out
