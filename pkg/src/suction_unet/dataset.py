"""Scene samples on disk, label maps, dihedral augmentation and splitting.

On-disk layout, one directory per scene::

    <root>/scene_<id>/color.png       8-bit RGB
                      depth.png       16-bit, millimeters, 0 = no reading
                      mask.png        8-bit, 255 = graspable
                      intrinsics.txt  "fx fy cx cy"
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import (
    INPUT_SIZE,
    CameraIntrinsics,
    center_crop_square,
    read_intrinsics,
    resize_nearest,
    write_intrinsics,
)


class DatasetError(ValueError):
    """A scene on disk is missing or malformed; ``path`` names the culprit."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = Path(path)


@dataclass
class SceneSample:
    rgb: np.ndarray  # (h, w, 3) uint8
    depth: np.ndarray  # (h, w) meters, 0 = null
    mask: np.ndarray  # (h, w) uint8 in {0, 1}
    intrinsics: CameraIntrinsics
    name: str = ""


# ----------------------------------------------------------------------------
# disk I/O


def write_scene(scene_dir, sample: SceneSample) -> Path:
    d = Path(scene_dir)
    d.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(sample.rgb, dtype=np.uint8), "RGB").save(d / "color.png")
    mm = np.rint(np.asarray(sample.depth) * 1000.0)
    if mm.max(initial=0) > np.iinfo(np.uint16).max:
        raise DatasetError(d / "depth.png", "depth exceeds the 16-bit millimeter range")
    Image.fromarray(mm.astype(np.uint16)).save(d / "depth.png")
    Image.fromarray((np.asarray(sample.mask) > 0).astype(np.uint8) * 255, "L").save(d / "mask.png")
    write_intrinsics(d / "intrinsics.txt", sample.intrinsics)
    return d


def _read_png(path: Path) -> np.ndarray:
    if not path.is_file():
        raise DatasetError(path, "missing file")
    try:
        with Image.open(path) as im:
            return np.array(im)
    except OSError as exc:
        raise DatasetError(path, f"unreadable image ({exc})") from None


def load_scene(scene_dir, size: int = INPUT_SIZE) -> SceneSample:
    """Read and validate one scene, bringing it to ``size`` x ``size``.

    Non-square captures are center-cropped to a square first; any resize is
    nearest-neighbor and the intrinsics are adjusted to match.
    """
    d = Path(scene_dir)
    rgb = _read_png(d / "color.png")
    depth_raw = _read_png(d / "depth.png")
    mask_raw = _read_png(d / "mask.png")
    kpath = d / "intrinsics.txt"
    if not kpath.is_file():
        raise DatasetError(kpath, "missing file")
    try:
        k = read_intrinsics(kpath)
    except ValueError as exc:
        raise DatasetError(kpath, str(exc)) from None

    if rgb.ndim != 3 or rgb.shape[2] < 3:
        raise DatasetError(d / "color.png", f"expected a 3-channel image, got shape {rgb.shape}")
    rgb = rgb[..., :3].astype(np.uint8)
    if depth_raw.ndim != 2:
        raise DatasetError(d / "depth.png", f"expected single-channel depth, got shape {depth_raw.shape}")
    if mask_raw.ndim != 2:
        raise DatasetError(d / "mask.png", f"expected single-channel mask, got shape {mask_raw.shape}")
    for name, arr in (("depth.png", depth_raw), ("mask.png", mask_raw)):
        if arr.shape != rgb.shape[:2]:
            raise DatasetError(d / name, f"dims {arr.shape} differ from color {rgb.shape[:2]}")
    bad = ~np.isin(mask_raw, (0, 255))
    if bad.any():
        raise DatasetError(d / "mask.png", f"non-binary mask value {int(mask_raw[bad][0])}")

    h, w = rgb.shape[:2]
    if (h, w) != (size, size):
        s = min(h, w)
        k = k.cropped((w - s) // 2, (h - s) // 2).scaled(size / s, size / s)
        rgb, depth_raw, mask_raw = (resize_nearest(center_crop_square(a), size) for a in (rgb, depth_raw, mask_raw))
    return SceneSample(
        rgb=rgb,
        depth=depth_raw.astype(np.float64) / 1000.0,
        mask=(mask_raw > 0).astype(np.uint8),
        intrinsics=k,
        name=d.name,
    )


def load_dataset(root_dir) -> list[SceneSample]:
    """All ``scene_*`` directories under ``root_dir`` in lexicographic order."""
    root = Path(root_dir)
    if not root.is_dir():
        raise DatasetError(root, "dataset directory does not exist")
    return [load_scene(d) for d in sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("scene_"))]


# ----------------------------------------------------------------------------
# labels


def downsample_label(mask: np.ndarray) -> np.ndarray:
    """2x2 block max: a label cell is positive if any pixel of its block is."""
    m = np.asarray(mask)
    h, w = m.shape
    if h % 2 or w % 2:
        raise ValueError(f"mask dims must be even, got {m.shape}")
    return (m.reshape(h // 2, 2, w // 2, 2).max(axis=(1, 3)) > 0).astype(np.float32)


# ----------------------------------------------------------------------------
# dihedral augmentation
#
# An op is (k, flip): transpose-free rotation by k quarter turns
# counter-clockwise (np.rot90), preceded by a horizontal flip when flip=True.

DIHEDRAL_OPS = tuple((k, f) for f in (False, True) for k in range(4))
NAMED_OPS = {
    "identity": (0, False),
    "rot90": (1, False),
    "rot180": (2, False),
    "rot270": (3, False),
    "hflip": (0, True),
    "vflip": (2, True),
}


def _as_op(op):
    if isinstance(op, str):
        if op not in NAMED_OPS:
            raise ValueError(f"unknown augmentation {op!r}")
        return NAMED_OPS[op]
    k, f = op
    return int(k) % 4, bool(f)


def inverse_op(op):
    k, f = _as_op(op)
    return (k, True) if f else ((4 - k) % 4, False)


def apply_spatial(img: np.ndarray, op) -> np.ndarray:
    """Apply a dihedral op to the first two axes of ``img``."""
    k, f = _as_op(op)
    if f:
        img = img[:, ::-1]
    return np.ascontiguousarray(np.rot90(img, k, axes=(0, 1)))


def remap_point_channels(xy_valid, x: np.ndarray, y: np.ndarray, op):
    """New normalized (x, y) after the image op; invalid points stay (0, 0).

    Horizontal flip sends x -> 1 - x; a counter-clockwise quarter turn sends
    (x, y) -> (y, 1 - x).
    """
    k, f = _as_op(op)
    x = x.copy()
    y = y.copy()
    if f:
        x = np.where(xy_valid, 1.0 - x, x)
    for _ in range(k):
        x, y = np.where(xy_valid, y, x), np.where(xy_valid, 1.0 - x, y)
    return x, y


def augment_input(x: np.ndarray, label: np.ndarray | None, op, mode: str):
    """Augment an assembled ``(h, w, C)`` input and its label map together.

    For ``rgbp`` inputs the normalized x/y channels are value-remapped so the
    point coordinates stay consistent with the transformed image.
    """
    out = apply_spatial(x, op)
    if mode == "rgbp":
        valid = np.any(out[..., 3:6] != 0, axis=-1)
        nx, ny = remap_point_channels(valid, out[..., 3], out[..., 4], op)
        out[..., 3] = nx
        out[..., 4] = ny
    lab = None if label is None else apply_spatial(label, op)
    return out, lab


def _intrinsics_after(k: CameraIntrinsics, size: int, op) -> CameraIntrinsics:
    kk, f = _as_op(op)
    fx, fy, cx, cy = k.fx, k.fy, k.cx, k.cy
    if f:
        cx = size - 1 - cx
    for _ in range(kk):
        # new row = old (size-1-col), new col = old row
        fx, fy, cx, cy = fy, fx, cy, size - 1 - cx
    return CameraIntrinsics(fx, fy, cx, cy)


def augment(sample: SceneSample, op) -> SceneSample:
    """Apply a dihedral op to every image of a scene.

    The intrinsics are transformed too, so back-projecting the new depth map
    gives the rotated/mirrored point cloud.
    """
    size = sample.rgb.shape[0]
    if sample.rgb.shape[0] != sample.rgb.shape[1]:
        raise ValueError("augmentation needs square images")
    return replace(
        sample,
        rgb=apply_spatial(sample.rgb, op),
        depth=apply_spatial(sample.depth, op),
        mask=apply_spatial(sample.mask, op),
        intrinsics=_intrinsics_after(sample.intrinsics, size, op),
    )


# ----------------------------------------------------------------------------
# splitting


def split(samples: list, train_fraction: float, seed: int = 0):
    """Seeded shuffle split into ``(train, eval)``; both get at least one item."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    n = len(samples)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(train_fraction * n))
    if n >= 2:
        n_train = min(max(n_train, 1), n - 1)
    train = [samples[i] for i in sorted(order[:n_train])]
    held = [samples[i] for i in sorted(order[n_train:])]
    return train, held
