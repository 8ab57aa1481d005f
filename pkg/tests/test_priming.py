import numpy as np
import pytest

from mzen.camera import CameraPose
from mzen.errors import DataError, ShapeError
from mzen.priming import crop_size, make_surrogate, match_wide_field, prime_pose, resize_bilinear


def test_crop_sizes_are_even():
    assert crop_size(64, 64, 2.0) == (32, 32)
    assert crop_size(64, 64, 3.0) == (22, 22)
    assert crop_size(260, 390, 4.0) == (66, 98)
    with pytest.raises(DataError):
        crop_size(64, 64, 0.5)


def test_resize_identity_and_constant(rng):
    img = rng.uniform(size=(6, 6, 3))
    np.testing.assert_array_equal(resize_bilinear(img, 6, 6), img)
    np.testing.assert_allclose(resize_bilinear(np.full((4, 4), 0.3), 9, 7), 0.3)


def test_upsample_of_linear_ramp_is_linear():
    ramp = np.tile(np.arange(4.0), (4, 1))
    up = resize_bilinear(ramp, 8, 8)
    # interior samples follow the ramp exactly, edges clamp
    np.testing.assert_allclose(up[:, 1:-1], np.tile((np.arange(1, 7) + 0.5) / 2 - 0.5, (8, 1)))


def test_surrogate_at_unit_zoom_is_identity(rng):
    img = rng.uniform(size=(8, 8, 3))
    np.testing.assert_array_equal(make_surrogate(img, 1.0), img)
    with pytest.raises(DataError):
        make_surrogate(img, 16.0)


def test_self_surrogates_match_exactly(rng):
    wide = [rng.uniform(size=(16, 16, 3)) for _ in range(5)]
    for g in range(5):
        m = match_wide_field(make_surrogate(wide[g], 2.0), wide, 2.0)
        assert m.wide_index == g and m.mse == 0.0
        assert m.all_mse.shape == (5,)


def test_ties_go_to_lowest_index(rng):
    img = rng.uniform(size=(8, 8, 3))
    assert match_wide_field(img, [img, img.copy()], 1.0).wide_index == 0


def test_match_errors(rng):
    with pytest.raises(DataError):
        match_wide_field(np.zeros((8, 8, 3)), [], 2.0)
    with pytest.raises(ShapeError):
        match_wide_field(np.zeros((8, 8, 3)), [np.zeros((6, 8, 3))], 2.0)


def test_large_images_are_matched_at_working_size(rng):
    wide = [rng.uniform(size=(128, 128, 3)) for _ in range(3)]
    m = match_wide_field(make_surrogate(wide[1], 2.0), wide, 2.0)
    assert m.wide_index == 1 and m.mse == 0.0


def test_prime_pose_copies_extrinsics():
    src = CameraPose((0.1, 0.2, 0.3), (1, 2, 3), (60, 60), (32, 32), 1.0)
    other = CameraPose(focal=(60, 60), principal=(32, 32))

    class M:
        wide_index = 0

    p = prime_pose(M, [src, other], 4.0, focal=(70, 70))
    np.testing.assert_array_equal(p.rotation, src.rotation)
    np.testing.assert_array_equal(p.translation, src.translation)
    np.testing.assert_array_equal(p.focal, [70, 70])
    assert p.zoom == 4.0
