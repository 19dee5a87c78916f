"""Smoothing and normalizing predicted maps, and picking the suction point."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics

GAUSSIAN_KERNEL = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64) / 16.0
FALLBACK_RADIUS = 3


def gaussian_smooth(prob_map: np.ndarray) -> np.ndarray:
    """Convolve with the 3x3 binomial kernel; borders replicate the edge values."""
    m = np.asarray(prob_map, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {m.shape}")
    p = np.pad(m, 1, mode="edge")
    h, w = m.shape
    out = np.zeros_like(m)
    for i in range(3):
        for j in range(3):
            out += GAUSSIAN_KERNEL[i, j] * p[i : i + h, j : j + w]
    return out


def normalize_map(prob_map: np.ndarray) -> np.ndarray:
    """Min-max rescale to [0, 1]; a constant map becomes all zeros."""
    m = np.asarray(prob_map, dtype=np.float64)
    lo, hi = m.min(), m.max()
    if hi == lo:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)


def process_map(prob_map: np.ndarray, smooth: bool = True) -> np.ndarray:
    """Optional Gaussian smoothing followed by normalization."""
    m = gaussian_smooth(prob_map) if smooth else np.asarray(prob_map, dtype=np.float64)
    return normalize_map(m)


@dataclass(frozen=True)
class SuctionResult:
    out_pixel: tuple  # (row, col) on the output map
    in_pixel: tuple  # (2r, 2c): (row, column) on the input image
    point3d: tuple | None  # camera frame, meters; None when no depth is usable
    score: float

    @property
    def has_point(self) -> bool:
        return self.point3d is not None

    def line(self) -> str:
        """``r c u v x y z score``, or ``NO_POINT`` when there is no 3-D point."""
        if self.point3d is None:
            return "NO_POINT"
        r, c = self.out_pixel
        ir, ic = self.in_pixel
        x, y, z = self.point3d
        return f"{r} {c} {ir} {ic} {x:.6f} {y:.6f} {z:.6f} {self.score:.6f}"


def _nearest_valid(depth: np.ndarray, row: int, col: int, radius: int):
    """Closest pixel (Euclidean, then row-major) with nonzero depth in a Chebyshev window."""
    h, w = depth.shape
    best = None
    for rr in range(max(0, row - radius), min(h, row + radius + 1)):
        for cc in range(max(0, col - radius), min(w, col + radius + 1)):
            if depth[rr, cc] > 0:
                key = ((rr - row) ** 2 + (cc - col) ** 2, rr, cc)
                if best is None or key < best:
                    best = key
    return None if best is None else (best[1], best[2])


def select_suction_point(
    prob_map: np.ndarray, depth: np.ndarray, k: CameraIntrinsics, fallback_radius: int = FALLBACK_RADIUS
) -> SuctionResult:
    """Pick the maximum of a processed map and back-project it.

    Ties go to the first maximum in row-major order.  Output cell (r, c)
    maps to input row 2r, column 2c.  A null depth there is replaced
    by the nearest valid reading within ``fallback_radius``; if none exists
    the result has no 3-D point.
    """
    m = np.asarray(prob_map)
    r, c = np.unravel_index(int(np.argmax(m)), m.shape)
    r, c = int(r), int(c)
    v, u = 2 * r, 2 * c
    score = float(m[r, c])
    d = np.asarray(depth, dtype=np.float64)
    hit = _nearest_valid(d, v, u, fallback_radius)
    if hit is None:
        return SuctionResult((r, c), (v, u), None, score)
    vv, uu = hit
    z = d[vv, uu]
    point = (z * (uu - k.cx) / k.fx, z * (vv - k.cy) / k.fy, z)
    return SuctionResult((r, c), (v, u), tuple(float(p) for p in point), score)


def write_pgm(path, norm_map: np.ndarray) -> None:
    """8-bit binary PGM of a [0, 1] map (values x255, rounded)."""
    img = np.clip(np.rint(np.asarray(norm_map) * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = open(path, "rb").read()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    return np.frombuffer(data[m.end() : m.end() + w * h], dtype=np.uint8).reshape(h, w)


def write_raw(path, norm_map: np.ndarray) -> None:
    """Raw little-endian float32, row-major."""
    np.asarray(norm_map, dtype="<f4").tofile(path)
