import numpy as np
import pytest

from mzen import autodiff as ad
from mzen.encoding import positional_encode
from mzen.errors import ManifestError, ShapeError
from mzen.field import DENSITY_BIAS_INIT, FieldConfig, field_forward, init_params, load_params, save_params, zero_params


def test_full_topology_shapes():
    shapes = FieldConfig().layer_shapes()
    assert shapes["trunk0"] == (63, 192)
    assert shapes["trunk3"] == (192, 192)
    assert shapes["density"] == (192, 1)
    assert shapes["feature"] == (192, 128)
    assert shapes["color0"] == (155, 64)
    assert shapes["color1"] == (64, 3)


def test_desk_config_keeps_encodings():
    cfg = FieldConfig.desk()
    assert (cfg.trunk_width, cfg.feature_width, cfg.color_width) == (64, 32, 32)
    assert cfg.position_width == 63 and cfg.direction_width == 27


def test_init_is_seeded_and_bounded():
    a, b = init_params(3), init_params(3)
    assert a.digest() == b.digest()
    assert a.digest() != init_params(4).digest()
    W = a["trunk0.W"].value
    assert np.abs(W).max() <= 1 / np.sqrt(63)
    np.testing.assert_array_equal(a["trunk0.b"].value, 0.0)
    np.testing.assert_array_equal(a["density.b"].value, DENSITY_BIAS_INIT)


def test_zero_field_output():
    cfg = FieldConfig.desk()
    p = zero_params(cfg)
    rgb, sigma = field_forward(p, np.zeros((4, 63)), np.zeros((4, 27)))
    np.testing.assert_array_equal(rgb.value, 0.5)
    np.testing.assert_array_equal(sigma.value, 0.0)


def test_density_ignores_direction(rng):
    p = init_params(0, FieldConfig.desk())
    x = positional_encode(rng.normal(size=(5, 3)), 10)
    _, s1 = field_forward(p, x, positional_encode(rng.normal(size=(5, 3)), 4))
    _, s2 = field_forward(p, x, positional_encode(rng.normal(size=(5, 3)), 4))
    np.testing.assert_array_equal(s1.value, s2.value)


def test_direction_broadcast_equals_concatenation(rng):
    p = init_params(1, FieldConfig.desk(trunk_width=16, feature_width=8, color_width=8))
    x = rng.normal(size=(3, 4, 63))
    d = rng.normal(size=(3, 1, 27))
    rgb, sigma = field_forward(p, x, d)
    assert rgb.shape == (3, 4, 3) and sigma.shape == (3, 4)
    # manual forward with explicit concatenation
    h = x
    for k in range(4):
        h = np.maximum(h @ p[f"trunk{k}.W"].value + p[f"trunk{k}.b"].value, 0)
    feat = h @ p["feature.W"].value + p["feature.b"].value
    cat = np.concatenate([feat, np.broadcast_to(d, (3, 4, 27))], axis=-1)
    c = np.maximum(cat @ p["color0.W"].value + p["color0.b"].value, 0)
    expected = 1 / (1 + np.exp(-(c @ p["color1.W"].value + p["color1.b"].value)))
    np.testing.assert_allclose(rgb.value, expected, atol=1e-12)


def test_wrong_encoding_width_is_rejected():
    p = init_params(0, FieldConfig.desk())
    with pytest.raises(ShapeError):
        field_forward(p, np.zeros((2, 60)), np.zeros((2, 27)))
    with pytest.raises(ShapeError):
        field_forward(p, np.zeros((2, 63)), np.zeros((2, 20)))


def test_field_gradient_flows_to_every_tensor(rng):
    p = init_params(0, FieldConfig.desk())
    p["density.b"].value = np.full(1, 0.1)
    rgb, sigma = field_forward(p, positional_encode(rng.normal(size=(8, 3)), 10),
                               positional_encode(rng.normal(size=(8, 3)), 4))
    grads = ad.backward(ad.sum_(rgb) + ad.sum_(sigma))
    assert set(grads) >= set(p)


def test_save_load_round_trip(tmp_path):
    p = init_params(5, FieldConfig.desk())
    save_params(tmp_path / "f.bin", p)
    q = load_params(tmp_path / "f.bin")
    assert q.digest() == p.digest() and q.config == p.config


def test_load_rejects_bad_blob(tmp_path):
    (tmp_path / "bad.bin").write_bytes(b"garbage!" + bytes(16))
    with pytest.raises(ManifestError):
        load_params(tmp_path / "bad.bin")
    p = init_params(5, FieldConfig.desk())
    save_params(tmp_path / "f.bin", p)
    raw = (tmp_path / "f.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-80])
    with pytest.raises(ManifestError):
        load_params(tmp_path / "t.bin")
