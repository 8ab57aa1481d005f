import json

import numpy as np
import pytest

from mzen.datagen import (AnalyticScene, CameraRig, MultiZoomDataset, Primitive, View, analytic_field,
                          center_crop, default_scene, generate_scene_dataset, load_dataset, one_sphere_scene,
                          resize_bicubic, save_dataset, split_train_test, synthesize_zoom_triplet)
from mzen.errors import DataError, ManifestError
from mzen.render import RenderConfig


@pytest.fixture(scope="module")
def small_dataset():
    rig = CameraRig(n_cameras=2, columns=2, H=8, W=8)
    return generate_scene_dataset(one_sphere_scene(), rig, (1, 2), seed=0,
                                  render_cfg=RenderConfig(n_samples=32, near=1.0, far=5.0))


def test_innermost_primitive_wins():
    big = Primitive("sphere", (0, 0, 3), 1.0, (1, 0, 0), 10.0)
    small = Primitive("box", (0, 0, 3), (0.2, 0.2, 0.2), (0, 1, 0), 50.0)
    scene = AnalyticScene([small, big], bounds=((-2, -2, 1), (2, 2, 5)))
    rgb, sigma = analytic_field(scene, np.array([[0, 0, 3.0], [0.5, 0, 3.0], [0, 0, 0.0]]))
    np.testing.assert_array_equal(sigma, [50.0, 10.0, 0.0])
    np.testing.assert_array_equal(rgb, [[0, 1, 0], [1, 0, 0], [0, 0, 0]])


def test_checker_texture_alternates():
    p = Primitive("box", (0, 0, 3), (2, 2, 1), (1, 1, 1), checker=(0.5, (0, 0, 0)))
    c = p.color_at(np.array([[0.1, 0.1, 3.0], [0.6, 0.1, 3.0]]))
    np.testing.assert_array_equal(c, [[1, 1, 1], [0, 0, 0]])


def test_invalid_primitives_and_bounds():
    with pytest.raises(DataError):
        Primitive("cone", (0, 0, 0), 1.0, (1, 1, 1))
    with pytest.raises(DataError):
        Primitive("sphere", (0, 0, 0), 1.0, (1, 1, 1), density=-1)
    with pytest.raises(DataError):
        AnalyticScene([Primitive("sphere", (0, 0, 0), 3.0, (1, 1, 1))], bounds=((-1, -1, -1), (1, 1, 1)))


def test_default_scene_is_valid():
    scene = default_scene()
    assert len(scene.primitives) >= 4
    assert scene.diameter > 0


def test_center_crop_and_resize():
    img = np.arange(48.0).reshape(6, 8)
    np.testing.assert_array_equal(center_crop(img, 4, 2), img[2:4, 2:6])
    with pytest.raises(DataError):
        center_crop(img, 10, 2)
    const = np.full((8, 8, 3), 0.25)
    np.testing.assert_allclose(resize_bicubic(const, 4, 4), 0.25, atol=1e-6)
    assert resize_bicubic(const, 5, 3).shape == (3, 5, 3)


def test_zoom_triplet_default_native():
    hr = np.random.default_rng(0).uniform(size=(16, 24, 3))
    one, two, four = synthesize_zoom_triplet(hr)
    assert one.shape == two.shape == four.shape == (4, 6, 3)
    np.testing.assert_array_equal(four, hr[6:10, 9:15])
    with pytest.raises(DataError):
        synthesize_zoom_triplet(np.zeros((10, 10)))


def test_generated_views_share_extrinsics(small_dataset):
    ds = small_dataset
    assert len(ds) == 4 and ds.zoom_levels == [1.0, 2.0]
    assert [v.name for v in ds.views] == ["cam0_z1", "cam0_z2", "cam1_z1", "cam1_z2"]
    a, b = ds.views[0].pose, ds.views[1].pose
    np.testing.assert_array_equal(a.rotation, b.rotation)
    assert b.zoom == 2.0
    assert all(v.image.shape == (8, 8, 3) and v.depth.shape == (8, 8) for v in ds.views)
    assert ds.wide_indices() == [0, 2] and ds.zoom_indices() == [1, 3]


def test_zoom_levels_must_include_one():
    with pytest.raises(DataError):
        generate_scene_dataset(one_sphere_scene(), CameraRig(H=4, W=4), (2, 4))


def test_rig_needs_two_cameras():
    with pytest.raises(DataError):
        CameraRig(n_cameras=1).base_poses(np.random.default_rng(0))


def test_split_is_disjoint_and_sized(small_dataset):
    ds = split_train_test(small_dataset, 0.75, seed=1)
    assert len(ds.split["train"]) == 3 and len(ds.split["test"]) == 1
    assert not set(ds.split["train"]) & set(ds.split["test"])
    with pytest.raises(DataError):
        split_train_test(ds, 1.0)


def test_dial_zoom_below_one_rejected():
    with pytest.raises(DataError):
        MultiZoomDataset([View(np.zeros((2, 2, 3)), 0.5, 0)])


def test_save_load_round_trip(small_dataset, tmp_path):
    ds = split_train_test(small_dataset, 0.5, seed=0)
    save_dataset(ds, tmp_path)
    back = load_dataset(tmp_path)
    assert back.split == ds.split and back.meta["near"] == ds.meta["near"]
    for a, b in zip(ds.views, back.views):
        assert a.name == b.name
        np.testing.assert_allclose(a.image, b.image, atol=0.5 / 255 + 1e-12)
        np.testing.assert_array_equal(a.depth, b.depth)
        assert a.pose.to_record() == b.pose.to_record()


def test_load_reports_missing_keys(small_dataset, tmp_path):
    save_dataset(small_dataset, tmp_path)
    manifest = json.loads((tmp_path / "scene.json").read_text())
    del manifest["views"][0]["zoom"]
    (tmp_path / "scene.json").write_text(json.dumps(manifest))
    with pytest.raises(ManifestError) as info:
        load_dataset(tmp_path)
    assert info.value.key == "zoom"
    with pytest.raises(ManifestError):
        load_dataset(tmp_path / "nowhere")
