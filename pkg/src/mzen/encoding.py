"""Sinusoidal input encodings: plain, coarse-to-fine gated, and integrated.

Feature layout for a d-vector ``p`` and ``L`` levels::

    [p, sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^(L-1) pi p), cos(2^(L-1) pi p)]

where each entry is itself a d-vector, so the raw coordinates occupy the
leading d slots and the output width is d * (2L + 1). All functions accept
numpy arrays or :class:`~mzen.autodiff.Tensor` inputs with arbitrary
leading batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DataError


@dataclass(frozen=True)
class EncodingConfig:
    levels_position: int = 10
    levels_direction: int = 4
    barf_start: int = 0
    barf_end: int = 0

    def __post_init__(self):
        if self.levels_position < 1 or self.levels_direction < 1:
            raise DataError("encoding levels must be >= 1")
        if self.barf_start > self.barf_end:
            raise DataError("barf_start must not exceed barf_end")


def encoded_width(d: int, L: int) -> int:
    return d * (2 * L + 1)


def _bands(p, L):
    """sin/cos bands as a Tensor of shape (..., L, 2, d)."""
    p = ad.as_tensor(p)
    d = p.shape[-1]
    freqs = (2.0 ** np.arange(L)) * np.pi
    scaled = ad.reshape(p, p.shape[:-1] + (1, d)) * freqs[:, None]
    return ad.stack([ad.sin(scaled), ad.cos(scaled)], axis=-2)


def positional_encode(p, L: int):
    """Plain positional encoding, width d * (2L + 1)."""
    p = ad.as_tensor(p)
    bands = _bands(p, L)
    flat = ad.reshape(bands, p.shape[:-1] + (2 * L * p.shape[-1],))
    return ad.concat([p, flat], axis=-1)


def barf_alpha(t: float, start: float, end: float) -> float:
    """Cosine ramp 0 -> 1 between iterations ``start`` and ``end``."""
    if start > end:
        raise DataError("barf start must not exceed end")
    if t < start:
        return 0.0
    if t > end or end == start:
        return 1.0
    s = (t - start) / (end - start)
    # cos(pi s) written as sin(pi (1/2 - s)) so endpoints and midpoint are exact
    return 0.5 * (1.0 - np.sin(np.pi * (0.5 - s)))


def band_weights(alpha: float, L: int) -> np.ndarray:
    """Per-level multipliers: level 0 always on, others scaled by ``alpha``."""
    w = np.full(L, float(alpha))
    w[0] = 1.0
    return w


def barf_gated_encode(p, t: float, cfg: EncodingConfig, L: int = None):
    """Positional encoding whose levels >= 1 are multiplied by ``barf_alpha(t)``."""
    p = ad.as_tensor(p)
    L = cfg.levels_position if L is None else L
    alpha = barf_alpha(t, cfg.barf_start, cfg.barf_end)
    bands = _bands(p, L) * band_weights(alpha, L)[:, None, None]
    flat = ad.reshape(bands, p.shape[:-1] + (2 * L * p.shape[-1],))
    return ad.concat([p, flat], axis=-1)


def gated_encode(p, L: int, alpha: float = 1.0):
    """Encoding with an explicit gate value; ``alpha=1`` equals the plain one."""
    p = ad.as_tensor(p)
    bands = _bands(p, L)
    if alpha != 1.0:
        bands = bands * band_weights(alpha, L)[:, None, None]
    flat = ad.reshape(bands, p.shape[:-1] + (2 * L * p.shape[-1],))
    return ad.concat([p, flat], axis=-1)


def integrated_encode(mu, sigma2, L: int):
    """Expected sinusoids under a diagonal Gaussian, width 2 d L (no raw slots).

    Level i is attenuated by exp(-2^(2i-1) * sigma2).
    """
    mu = ad.as_tensor(mu)
    sigma2 = ad.as_tensor(sigma2)
    if np.any(sigma2.value < 0):
        raise DataError("sigma2 must be non-negative")
    d = mu.shape[-1]
    bands = _bands(mu, L)
    rates = 2.0 ** (2.0 * np.arange(L) - 1.0)
    s2 = ad.reshape(sigma2, sigma2.shape[:-1] + (1, d))
    atten = ad.exp(s2 * (-rates[:, None]))
    bands = bands * ad.reshape(atten, atten.shape[:-2] + (L, 1, d))
    return ad.reshape(bands, mu.shape[:-1] + (2 * L * d,))


def ipe_features(mu, sigma2, L: int):
    """Raw means followed by the integrated bands, width d * (2L + 1)."""
    mu = ad.as_tensor(mu)
    return ad.concat([mu, integrated_encode(mu, sigma2, L)], axis=-1)
