"""Depth back-projection, point normalization and network input assembly."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

NORMALIZED_EPS = 1e-6
INPUT_SIZE = 128


@dataclass(frozen=True)
class CameraIntrinsics:
    """Zero-skew pinhole camera: focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1]], dtype=float)

    def scaled(self, sx: float, sy: float) -> "CameraIntrinsics":
        """Intrinsics after resizing the image by ``sx`` horizontally, ``sy`` vertically."""
        return CameraIntrinsics(
            self.fx * sx, self.fy * sy, (self.cx + 0.5) * sx - 0.5, (self.cy + 0.5) * sy - 0.5
        )

    def cropped(self, left: float, top: float) -> "CameraIntrinsics":
        return CameraIntrinsics(self.fx, self.fy, self.cx - left, self.cy - top)


def read_intrinsics(path) -> CameraIntrinsics:
    """Parse a text file holding ``fx fy cx cy``."""
    fields = Path(path).read_text().split()
    if len(fields) != 4:
        raise ValueError(f"{path}: expected 4 numbers 'fx fy cx cy', found {len(fields)}")
    try:
        values = [float(f) for f in fields]
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    return CameraIntrinsics(*values)


def write_intrinsics(path, k: CameraIntrinsics) -> None:
    Path(path).write_text(f"{k.fx!r} {k.fy!r} {k.cx!r} {k.cy!r}\n")


@dataclass(frozen=True)
class WorkspaceBounds:
    """Axis-aligned box in the camera frame, meters."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float
    zmin: float
    zmax: float

    def __post_init__(self):
        for lo, hi, axis in ((self.xmin, self.xmax, "x"), (self.ymin, self.ymax, "y"), (self.zmin, self.zmax, "z")):
            if not lo < hi:
                raise ValueError(f"degenerate workspace bounds on {axis}: {lo} >= {hi}")

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.xmin, self.ymin, self.zmin])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.xmax, self.ymax, self.zmax])


# Covers the default synthetic bin seen from the default camera.
DEFAULT_BOUNDS = WorkspaceBounds(-0.3, 0.3, -0.3, 0.3, 0.40, 0.80)


def pixel_grid(h: int, w: int):
    """Column (u) and row (v) coordinates of every pixel."""
    v, u = np.mgrid[0:h, 0:w]
    return u.astype(float), v.astype(float)


def backproject(depth: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Camera-frame point for every pixel of a depth map (meters).

    Returns an ``(h, w, 3)`` grid; pixels with zero depth become (0, 0, 0).
    """
    if not (k.fx > 0 and k.fy > 0):
        raise ValueError("focal lengths must be positive")
    z = np.asarray(depth, dtype=float)
    u, v = pixel_grid(*z.shape)
    x = z * (u - k.cx) / k.fx
    y = z * (v - k.cy) / k.fy
    pts = np.stack([x, y, z], axis=-1)
    pts[z == 0] = 0.0
    return pts


def project(points: np.ndarray, k: CameraIntrinsics):
    """Pixel coordinates ``(u, v)`` of camera-frame points with z > 0."""
    p = np.asarray(points, dtype=float)
    return k.fx * p[..., 0] / p[..., 2] + k.cx, k.fy * p[..., 1] / p[..., 2] + k.cy


def null_mask(points: np.ndarray) -> np.ndarray:
    return np.all(points == 0, axis=-1)


def normalize_points(points: np.ndarray, bounds: WorkspaceBounds = DEFAULT_BOUNDS) -> np.ndarray:
    """Map points inside the workspace box to (0, 1]^3 per axis.

    The box minimum maps to ``NORMALIZED_EPS`` and the maximum to 1, so that
    (0, 0, 0) is reserved for null or out-of-box points.
    """
    p = np.asarray(points, dtype=float)
    lo, hi = bounds.lower, bounds.upper
    t = (p - lo) / (hi - lo)
    out = NORMALIZED_EPS + (1.0 - NORMALIZED_EPS) * t
    invalid = null_mask(p) | np.any((p < lo) | (p > hi), axis=-1)
    out[invalid] = 0.0
    return out


def normalize_depth(depth: np.ndarray, bounds: WorkspaceBounds = DEFAULT_BOUNDS) -> np.ndarray:
    """Depth scaled over the workspace z-range, clipped to [0, 1]; null stays 0."""
    z = np.asarray(depth, dtype=float)
    out = np.clip((z - bounds.zmin) / (bounds.zmax - bounds.zmin), 0.0, 1.0)
    out[z == 0] = 0.0
    return out


def assemble_input(rgb, depth, points=None, mode: str = "rgbp", bounds: WorkspaceBounds = DEFAULT_BOUNDS) -> np.ndarray:
    """Stack one scene into an ``(h, w, C)`` network input with values in [0, 1].

    ``rgb`` is uint8 (or floats already in [0, 1]); ``points`` is the
    back-projected grid, needed only for ``rgbp``.
    """
    from .unet import normalize_mode

    mode = normalize_mode(mode)
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"rgb must be (h, w, 3), got {rgb.shape}")
    color = rgb.astype(np.float32) / 255.0 if rgb.dtype == np.uint8 else rgb.astype(np.float32)
    hw = rgb.shape[:2]
    if depth is not None and np.shape(depth) != hw:
        raise ValueError(f"depth shape {np.shape(depth)} does not match rgb {hw}")
    if mode == "rgb":
        return color
    if mode == "rgbd":
        d = normalize_depth(depth, bounds).astype(np.float32)
        return np.concatenate([color, d[..., None]], axis=-1)
    if points is None:
        raise ValueError("rgbp mode needs a point grid")
    if np.shape(points)[:2] != hw:
        raise ValueError(f"points shape {np.shape(points)} does not match rgb {hw}")
    p = normalize_points(points, bounds).astype(np.float32)
    return np.concatenate([color, p], axis=-1)


def resize_nearest(img: np.ndarray, size: int = INPUT_SIZE) -> np.ndarray:
    h, w = img.shape[:2]
    rows = (np.arange(size) * h) // size
    cols = (np.arange(size) * w) // size
    return img[rows][:, cols]


def center_crop_square(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    s = min(h, w)
    top, left = (h - s) // 2, (w - s) // 2
    return img[top : top + s, left : left + s]
