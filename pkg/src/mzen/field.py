"""Compact radiance-field MLP.

Topology (full widths)::

    x_enc(63) -> FC+ReLU 192 -> FC+ReLU 192 -> FC+ReLU 192 -> FC+ReLU 192 = h
    sigma = ReLU(FC_192->1(h))
    feat  = FC_192->128(h)
    rgb   = sigmoid(FC_64->3(ReLU(FC_155->64([feat, d_enc]))))

Direction features only enter the colour branch, so density is
view-independent by construction. ``FieldConfig.desk()`` keeps the topology
with narrower layers for fast CPU runs.
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoding import encoded_width
from .errors import ManifestError, ShapeError

_MAGIC = b"MZENFLD1"


@dataclass(frozen=True)
class FieldConfig:
    levels_position: int = 10
    levels_direction: int = 4
    trunk_width: int = 192
    trunk_depth: int = 4
    feature_width: int = 128
    color_width: int = 64

    @classmethod
    def desk(cls, **overrides) -> "FieldConfig":
        base = dict(trunk_width=64, feature_width=32, color_width=32)
        base.update(overrides)
        return cls(**base)

    @property
    def position_width(self) -> int:
        return encoded_width(3, self.levels_position)

    @property
    def direction_width(self) -> int:
        return encoded_width(3, self.levels_direction)

    def layer_shapes(self) -> "OrderedDict[str, Tuple[int, int]]":
        shapes = OrderedDict()
        fan_in = self.position_width
        for k in range(self.trunk_depth):
            shapes[f"trunk{k}"] = (fan_in, self.trunk_width)
            fan_in = self.trunk_width
        shapes["density"] = (self.trunk_width, 1)
        shapes["feature"] = (self.trunk_width, self.feature_width)
        shapes["color0"] = (self.feature_width + self.direction_width, self.color_width)
        shapes["color1"] = (self.color_width, 3)
        return shapes


class RadianceFieldParams:
    """Ordered weights ``<layer>.W`` (fan_in, fan_out) and biases ``<layer>.b``."""

    def __init__(self, config: FieldConfig, tensors: "OrderedDict[str, Tensor]"):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, key) -> Tensor:
        return self.tensors[key]

    def __iter__(self):
        return iter(self.tensors.values())

    def items(self):
        return self.tensors.items()

    def arrays(self) -> Dict[str, np.ndarray]:
        return {k: t.value for k, t in self.tensors.items()}

    def requires_grad_(self, flag: bool) -> "RadianceFieldParams":
        for t in self.tensors.values():
            t.requires_grad = flag
            t.grad = None
        return self

    def copy(self) -> "RadianceFieldParams":
        return RadianceFieldParams(self.config, OrderedDict(
            (k, Tensor(t.value.copy(), requires_grad=t.requires_grad, name=k)) for k, t in self.tensors.items()))

    def num_parameters(self) -> int:
        return int(sum(t.value.size for t in self.tensors.values()))

    def digest(self) -> str:
        h = hashlib.sha256()
        for k, t in self.tensors.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(t.value, dtype="<f8").tobytes())
        return h.hexdigest()


DENSITY_BIAS_INIT = 0.1


def init_params(seed: int = 0, config: FieldConfig = None) -> RadianceFieldParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases.

    The density bias starts at ``DENSITY_BIAS_INIT`` so that no seed begins
    with the density ReLU closed on every input.
    """
    config = config or FieldConfig()
    rng = np.random.default_rng(seed)
    tensors = OrderedDict()
    for name, (fan_in, fan_out) in config.layer_shapes().items():
        bound = 1.0 / np.sqrt(fan_in)
        tensors[f"{name}.W"] = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)),
                                      requires_grad=True, name=f"{name}.W")
        bias = np.full(fan_out, DENSITY_BIAS_INIT if name == "density" else 0.0)
        tensors[f"{name}.b"] = Tensor(bias, requires_grad=True, name=f"{name}.b")
    return RadianceFieldParams(config, tensors)


def zero_params(config: FieldConfig = None) -> RadianceFieldParams:
    params = init_params(0, config)
    for t in params:
        t.value = np.zeros_like(t.value)
    return params


def _affine(params, name, x):
    return ad.matmul(x, params[f"{name}.W"]) + params[f"{name}.b"]


def field_forward(params: RadianceFieldParams, x_enc, d_enc):
    """Evaluate the field on encoded inputs of shape (..., Px) and (..., Pd).

    ``d_enc`` may broadcast against ``x_enc`` (e.g. one direction per ray and
    many samples per ray); the colour layer then applies the direction rows
    of its weight once per ray, which equals concatenating the inputs.

    Returns:
        rgb (..., 3) in (0, 1) and sigma (...,) >= 0.
    """
    cfg = params.config
    x_enc, d_enc = ad.as_tensor(x_enc), ad.as_tensor(d_enc)
    if x_enc.shape[-1] != cfg.position_width:
        raise ShapeError(f"position encoding must have width {cfg.position_width}, got {x_enc.shape[-1]}",
                         x_enc.shape)
    if d_enc.shape[-1] != cfg.direction_width:
        raise ShapeError(f"direction encoding must have width {cfg.direction_width}, got {d_enc.shape[-1]}",
                         d_enc.shape)
    try:
        batch = np.broadcast_shapes(x_enc.shape[:-1], d_enc.shape[:-1])
    except ValueError:
        raise ShapeError("position and direction batches differ", x_enc.shape, d_enc.shape) from None
    h = x_enc
    for k in range(cfg.trunk_depth):
        h = ad.relu(_affine(params, f"trunk{k}", h))
    sigma = ad.relu(_affine(params, "density", h))
    feat = _affine(params, "feature", h)
    W = params["color0.W"]
    fw = cfg.feature_width
    pre = ad.matmul(feat, W[:fw]) + ad.matmul(d_enc, W[fw:]) + params["color0.b"]
    rgb = ad.sigmoid(_affine(params, "color1", ad.relu(pre)))
    if rgb.shape[:-1] != batch:
        rgb = rgb * np.ones(batch + (1,))
    sigma = ad.reshape(sigma, sigma.shape[:-1])
    if sigma.shape != batch:
        sigma = sigma * np.ones(batch)
    return rgb, sigma


def save_params(path, params: RadianceFieldParams):
    """Write a little-endian float64 blob prefixed by a JSON shape header."""
    entries, offset = [], 0
    for name, t in params.items():
        entries.append({"name": name, "shape": list(t.shape), "offset": offset})
        offset += t.value.size
    header = json.dumps({"config": asdict(params.config), "tensors": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for t in params:
            fh.write(np.ascontiguousarray(t.value, dtype="<f8").tobytes())


def load_params(path) -> RadianceFieldParams:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ManifestError(f"{path}: not a field parameter blob", key="magic")
    (n,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + n].decode())
        config = FieldConfig(**header["config"])
        entries = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ManifestError(f"{path}: malformed header ({exc})", key="header") from None
    data = np.frombuffer(raw[16 + n:], dtype="<f8")
    expected = config.layer_shapes()
    tensors = OrderedDict()
    for e in entries:
        size = int(np.prod(e["shape"]))
        chunk = data[e["offset"]:e["offset"] + size]
        if chunk.size != size:
            raise ManifestError(f"{path}: truncated tensor {e['name']}", key=e["name"])
        tensors[e["name"]] = Tensor(chunk.reshape(e["shape"]).astype(np.float64), requires_grad=True,
                                    name=e["name"])
    for layer, shape in expected.items():
        if tuple(tensors.get(f"{layer}.W", Tensor(np.zeros(0))).shape) != shape:
            raise ManifestError(f"{path}: layer {layer} has the wrong shape", key=layer)
    return RadianceFieldParams(config, tensors)
