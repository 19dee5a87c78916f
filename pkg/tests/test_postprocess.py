import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from suction_unet.geometry import CameraIntrinsics
from suction_unet.postprocess import (
    GAUSSIAN_KERNEL,
    gaussian_smooth,
    normalize_map,
    process_map,
    read_pgm,
    select_suction_point,
    write_pgm,
    write_raw,
)

K = CameraIntrinsics(160, 160, 63.5, 63.5)
maps = arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=st.floats(0, 1))


def test_kernel_sums_to_one():
    assert GAUSSIAN_KERNEL.sum() == 1.0
    np.testing.assert_array_equal(GAUSSIAN_KERNEL * 16, [[1, 2, 1], [2, 4, 2], [1, 2, 1]])


def test_constant_invariance():
    np.testing.assert_array_equal(gaussian_smooth(np.full((64, 64), 0.5)), 0.5)


def test_impulse_response():
    m = np.zeros((5, 5))
    m[2, 2] = 1
    out = gaussian_smooth(m)
    np.testing.assert_allclose(out[1:4, 1:4], GAUSSIAN_KERNEL)
    assert out.sum() == pytest.approx(1)


@settings(max_examples=60, deadline=None)
@given(maps)
def test_smooth_range_and_symmetry(m):
    out = gaussian_smooth(m)
    assert out.min() >= m.min() - 1e-12 and out.max() <= m.max() + 1e-12
    np.testing.assert_allclose(gaussian_smooth(m[:, ::-1]), out[:, ::-1], atol=1e-15)
    np.testing.assert_allclose(gaussian_smooth(m[::-1]), out[::-1], atol=1e-15)
    np.testing.assert_allclose(gaussian_smooth(m.T), out.T, atol=1e-15)


def test_normalize_examples():
    out = normalize_map(np.array([[0.2, 0.45], [0.7, 0.3]]))
    np.testing.assert_allclose(out, [[0, 0.5], [1, 0.2]])
    assert not normalize_map(np.full((3, 3), 0.4)).any()


@settings(max_examples=40, deadline=None)
@given(maps)
def test_normalize_idempotent(m):
    n = normalize_map(m)
    if m.max() > m.min():
        np.testing.assert_allclose(normalize_map(n), n, atol=1e-12)
        assert n.max() == 1.0 and n.min() == 0.0


def test_select_unique_maximum():
    m = np.zeros((64, 64))
    m[10, 20] = 1
    depth = np.full((128, 128), 0.6)
    res = select_suction_point(m, depth, K)
    assert res.out_pixel == (10, 20) and res.in_pixel == (20, 40)
    x, y, z = res.point3d
    assert z == 0.6
    assert x == pytest.approx(0.6 * (40 - 63.5) / 160)
    assert y == pytest.approx(0.6 * (20 - 63.5) / 160)
    assert res.score == 1.0
    assert res.line().split()[:4] == ["10", "20", "20", "40"]


def test_tie_break_row_major():
    m = np.zeros((64, 64))
    m[0, 5] = m[3, 1] = 1
    assert select_suction_point(m, np.full((128, 128), 0.5), K).out_pixel == (0, 5)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (8, 8), elements=st.floats(0, 1)), st.floats(0.1, 10), st.floats(-5, 5))
def test_argmax_affine_invariance(m, a, b):
    depth = np.full((16, 16), 0.5)
    k = CameraIntrinsics(20, 20, 7.5, 7.5)
    assert select_suction_point(m, depth, k).out_pixel == select_suction_point(a * m + b, depth, k).out_pixel


def test_blob_center_recovered(rng):
    for _ in range(10):
        r0, c0 = rng.integers(8, 56, 2)
        rr, cc = np.mgrid[0:64, 0:64]
        blob = np.exp(-((rr - r0) ** 2 + (cc - c0) ** 2) / (2 * 3.0**2))
        noisy = np.clip(0.1 + 0.8 * blob + rng.normal(0, 0.02, blob.shape), 0, 1)
        res = select_suction_point(process_map(noisy), np.full((128, 128), 0.5), K)
        assert max(abs(res.out_pixel[0] - r0), abs(res.out_pixel[1] - c0)) <= 1


def test_null_depth_fallback_and_no_point():
    m = np.zeros((64, 64))
    m[10, 10] = 1
    depth = np.full((128, 128), 0.6)
    depth[20, 20] = 0
    depth[21, 21] = 0.55
    res = select_suction_point(m, depth, K)
    assert res.in_pixel == (20, 20)
    # nearest valid pixel is a 4-neighbour at distance 1
    assert res.point3d[2] == 0.6
    depth[17:24, 17:24] = 0
    res = select_suction_point(m, depth, K)
    assert res.point3d is None and res.line() == "NO_POINT"
    depth[23, 23] = 0.5  # Chebyshev distance 3, still inside the window
    assert select_suction_point(m, depth, K).point3d[2] == 0.5


def test_pgm_and_raw_files(tmp_path, rng):
    m = rng.random((64, 64))
    write_pgm(tmp_path / "m.pgm", m)
    img = read_pgm(tmp_path / "m.pgm")
    np.testing.assert_array_equal(img, np.rint(m * 255).astype(np.uint8))
    assert (tmp_path / "m.pgm").read_bytes().startswith(b"P5\n64 64\n255\n")
    write_raw(tmp_path / "m.raw", m)
    raw = np.fromfile(tmp_path / "m.raw", dtype="<f4").reshape(64, 64)
    np.testing.assert_array_equal(raw, m.astype(np.float32))
