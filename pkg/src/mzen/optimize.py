"""Adam, step learning-rate decay and the per-camera pose preconditioner."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError, NumericalError, ShapeError


@dataclass
class AdamState:
    """Moments for a list of parameters sharing one step counter."""

    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray], **kw) -> "AdamState":
        return cls([np.zeros_like(np.asarray(p, dtype=np.float64)) for p in params],
                   [np.zeros_like(np.asarray(p, dtype=np.float64)) for p in params], **kw)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState, lr: float,
              group: str = None) -> List[np.ndarray]:
    """One bias-corrected Adam update; returns new parameter arrays.

    Raises:
        NumericalError: a gradient is not finite (``.group`` names the group).
        ShapeError: a gradient shape differs from its parameter.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and state have different lengths", len(params), len(grads))
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ShapeError("gradient shape differs from parameter", np.shape(p), np.shape(g))
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in group {group!r}", group=group)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    out = []
    for k, (p, g) in enumerate(zip(params, grads)):
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = state.m[k] / c1
        v_hat = state.v[k] / c2
        out.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out


def step_lr(lr0: float, step: int, gamma: float, period: int) -> float:
    """``lr0 * gamma ** floor(step / period)``."""
    if period < 1:
        raise DataError("period must be >= 1")
    if not 0.0 < gamma <= 1.0:
        raise DataError("gamma must lie in (0, 1]")
    return lr0 * gamma ** (step // period)


class Adam:
    """Adam over named groups of leaf tensors, each with its own state and lr."""

    def __init__(self, groups: Mapping[str, Sequence[Tensor]], lrs: Mapping[str, float], **adam_kw):
        self.groups = {name: list(ts) for name, ts in groups.items() if ts}
        self.lrs = dict(lrs)
        self.kw = adam_kw
        self.states = {name: AdamState.zeros_like([t.value for t in ts], **adam_kw)
                       for name, ts in self.groups.items()}

    def step(self, grads: Mapping[Tensor, np.ndarray], scale: float = 1.0, skip: Sequence[str] = ()):
        for name, ts in self.groups.items():
            if name in skip:
                continue
            g = [np.asarray(grads.get(t, np.zeros_like(t.value))) for t in ts]
            new = adam_step([t.value for t in ts], g, self.states[name], self.lrs[name] * scale, group=name)
            for t, value in zip(ts, new):
                t.value = value


# ----------------------------------------------------------------------------
# pose preconditioning


@dataclass
class PosePreconditioner:
    P: np.ndarray
    sigma: np.ndarray
    lam: float
    mu: float
    n_r: int


def _project(pose6: Tensor, points: np.ndarray, focal, principal, zoom: float) -> Tensor:
    """Pixel coordinates (2 n) of world ``points`` seen from the 6-vector pose."""
    R = ad.rotation_from_axis_angle(pose6[:3])
    rel = Tensor(points) - pose6[3:]
    cam = ad.matmul(rel, R)  # rows of R^T (X - t)
    z = cam[:, 2]
    f = np.asarray(focal, dtype=np.float64) * zoom
    u = cam[:, 0] / z * f[0] + principal[0]
    v = cam[:, 1] / z * f[1] + principal[1]
    return ad.reshape(ad.stack([u, v], axis=-1), (-1,))


def covariance_from_jacobian(J: np.ndarray, n_r: int, lam: float, mu: float) -> np.ndarray:
    JtJ = J.T @ J
    return JtJ / n_r + lam * np.diag(np.diag(JtJ)) + mu * np.eye(J.shape[1])


def inverse_sqrt_spd(sigma: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    sym = 0.5 * (sigma + sigma.T)
    w, V = np.linalg.eigh(sym)
    w = np.maximum(w, floor)
    P = (V / np.sqrt(w)) @ V.T
    return 0.5 * (P + P.T)


def preconditioner_from_jacobian(J: np.ndarray, n_r: int, lam: float = 1e-3, mu: float = 1e-4) -> PosePreconditioner:
    if lam < 0 or mu < 0:
        raise DataError("damping terms must be non-negative")
    if not np.all(np.isfinite(J)):
        raise NumericalError("non-finite projection Jacobian", group="poses")
    sigma = covariance_from_jacobian(J, n_r, lam, mu)
    return PosePreconditioner(inverse_sqrt_spd(sigma), sigma, lam, mu, n_r)


def build_preconditioner(pose, rng, n_r: int = 256, lam: float = 1e-3, mu: float = 1e-4,
                         bounds=((-1.0, -1.0, 2.0), (1.0, 1.0, 4.0))) -> PosePreconditioner:
    """Whitening matrix for one camera from the Jacobian of projecting random points.

    ``n_r`` points are drawn uniformly in ``bounds``; the Jacobian is taken
    with respect to the (axis-angle, translation) 6-vector of ``pose``.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    points = rng.uniform(lo, hi, size=(n_r, 3))
    p6 = np.concatenate([pose.rotation, pose.translation])
    J = ad.jacobian(lambda x: _project(x, points, pose.focal, pose.principal, pose.zoom), p6)
    return preconditioner_from_jacobian(J, n_r, lam, mu)


def preconditioned_pose_step(pose6, grad6, P, lr: float) -> np.ndarray:
    """``p - lr * P @ grad`` on the (rotation, translation) 6-vector."""
    P = P.P if isinstance(P, PosePreconditioner) else np.asarray(P)
    return np.asarray(pose6, dtype=np.float64) - lr * P @ np.asarray(grad6, dtype=np.float64)
