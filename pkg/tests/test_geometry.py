import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from suction_unet.geometry import (
    DEFAULT_BOUNDS,
    NORMALIZED_EPS,
    CameraIntrinsics,
    WorkspaceBounds,
    assemble_input,
    backproject,
    center_crop_square,
    normalize_depth,
    normalize_points,
    project,
    read_intrinsics,
    resize_nearest,
    write_intrinsics,
)


def test_identity_intrinsics_example():
    depth = np.zeros((5, 5))
    depth[3, 2] = 1.5  # row v=3, column u=2
    pts = backproject(depth, CameraIntrinsics(1, 1, 0, 0))
    assert tuple(pts[3, 2]) == (3.0, 4.5, 1.5)


def test_null_depth_maps_to_origin(rng):
    depth = rng.uniform(0.3, 1.0, (20, 30))
    depth[rng.random(depth.shape) < 0.2] = 0
    pts = backproject(depth, CameraIntrinsics(300, 310, 14.2, 9.7))
    assert np.all(pts[depth == 0] == 0)
    assert np.all(pts[depth > 0, 2] > 0)


def test_round_trip_random_pixels(rng):
    # 10^4 pixels spread over 100 random cameras
    worst = 0.0
    for _ in range(100):
        k = CameraIntrinsics(*rng.uniform(50, 2000, 2), *rng.uniform(-50, 700, 2))
        h, w = 10, 10
        depth = rng.uniform(0.05, 10.0, (h, w))
        pts = backproject(depth, k)
        u, v = project(pts, k)
        vv, uu = np.mgrid[0:h, 0:w]
        worst = max(worst, np.abs(u - uu).max(), np.abs(v - vv).max())
    assert worst <= 1e-9


def test_bad_intrinsics_rejected(tmp_path):
    with pytest.raises(ValueError):
        CameraIntrinsics(0, 1, 0, 0)
    with pytest.raises(ValueError):
        CameraIntrinsics(1, -2, 0, 0)
    p = tmp_path / "k.txt"
    p.write_text("1 2 3\n")
    with pytest.raises(ValueError, match="4 numbers"):
        read_intrinsics(p)


def test_intrinsics_file_round_trip(tmp_path):
    k = CameraIntrinsics(615.123456789, 614.5, 319.75, 239.25)
    write_intrinsics(tmp_path / "k.txt", k)
    assert read_intrinsics(tmp_path / "k.txt") == k


def test_normalize_corners():
    b = WorkspaceBounds(-1, 1, -2, 2, 0.5, 1.5)
    pts = np.array([[-1, -2, 0.5], [1, 2, 1.5], [1.01, 0, 1.0], [0, 0, 0], [0, 0, 1.0]], dtype=float)
    out = normalize_points(pts, b)
    np.testing.assert_allclose(out[0], [NORMALIZED_EPS] * 3, rtol=0, atol=1e-15)
    np.testing.assert_array_equal(out[1], [1, 1, 1])
    np.testing.assert_array_equal(out[2], [0, 0, 0])
    np.testing.assert_array_equal(out[3], [0, 0, 0])
    np.testing.assert_allclose(out[4], [0.5, 0.5, 0.5], atol=1e-6)


def test_degenerate_bounds_rejected():
    with pytest.raises(ValueError, match="z"):
        WorkspaceBounds(0, 1, 0, 1, 2, 2)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (6, 3), elements=st.floats(-1, 1, allow_nan=False)))
def test_normalized_in_unit_cube_and_zero_iff_invalid(pts):
    b = WorkspaceBounds(-0.5, 0.5, -0.5, 0.5, -0.5, 0.5)
    out = normalize_points(pts, b)
    assert np.all((out >= 0) & (out <= 1))
    invalid = np.all(pts == 0, axis=1) | np.any(np.abs(pts) > 0.5, axis=1)
    assert np.array_equal(np.all(out == 0, axis=1), invalid)


def _scene(rng, size=16):
    rgb = rng.integers(0, 256, (size, size, 3), dtype=np.uint8)
    depth = rng.uniform(0.4, 0.8, (size, size))
    depth[0, 0] = 0
    return rgb, depth, CameraIntrinsics(20, 20, (size - 1) / 2, (size - 1) / 2)


def test_assemble_modes(rng):
    rgb, depth, k = _scene(rng)
    pts = backproject(depth, k)
    x3 = assemble_input(rgb, depth, None, "rgb")
    x4 = assemble_input(rgb, depth, None, "rgbd")
    x6 = assemble_input(rgb, depth, pts, "rgbp")
    assert (x3.shape[-1], x4.shape[-1], x6.shape[-1]) == (3, 4, 6)
    for x in (x3, x4, x6):
        assert x.dtype == np.float32
        assert x.min() >= 0 and x.max() <= 1
    np.testing.assert_array_equal(x6[..., 3:], normalize_points(pts, DEFAULT_BOUNDS).astype(np.float32))
    np.testing.assert_allclose(x3, rgb / 255.0, atol=1e-7)
    assert x4[0, 0, 3] == 0
    np.testing.assert_allclose(x4[..., 3], normalize_depth(depth).astype(np.float32))


def test_assemble_dim_mismatch(rng):
    rgb, depth, k = _scene(rng)
    with pytest.raises(ValueError):
        assemble_input(rgb, depth[:-1], None, "rgbd")
    with pytest.raises(ValueError):
        assemble_input(rgb, depth, None, "rgbp")


def test_depth_clipped_outside_range():
    out = normalize_depth(np.array([0.0, 0.3, 0.6, 0.9]))
    np.testing.assert_allclose(out, [0, 0, 0.5, 1])


def test_crop_and_resize_nearest():
    img = np.arange(6 * 10).reshape(6, 10)
    sq = center_crop_square(img)
    assert sq.shape == (6, 6) and sq[0, 0] == 2
    up = resize_nearest(np.array([[0, 1], [2, 3]]), 4)
    np.testing.assert_array_equal(up, [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]])
    mask = (np.arange(64).reshape(8, 8) % 3 == 0).astype(np.uint8)
    assert set(np.unique(resize_nearest(mask, 5))) <= {0, 1}


def test_scaled_intrinsics_consistent_with_resize():
    # a point projected into a 2x upsampled image lands at the scaled pixel centre
    k = CameraIntrinsics(100, 100, 31.5, 31.5)
    k2 = k.scaled(2, 2)
    p = np.array([0.05, -0.02, 0.6])
    u, v = project(p, k)
    u2, v2 = project(p, k2)
    assert u2 == pytest.approx((u + 0.5) * 2 - 0.5)
    assert v2 == pytest.approx((v + 0.5) * 2 - 0.5)
