"""Synthetic cluttered-bin scenes rendered by ray casting analytic primitives.

A top-down pinhole camera looks at a flat bin floor on which cylinders
(upright or lying) and yawed boxes are dropped one after another.  Each
object rests on the highest surface below its footprint.  Depth is the
camera-frame z of the nearest hit along each pixel ray, and the graspable
mask marks object pixels whose surface faces up and is flat across the
suction cup disc.

World frame: X, Y coincide with camera x, y; Z points up from the bin
floor, so a camera-frame depth ``z`` sits at height ``camera_height - z``.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics
from .dataset import SceneSample, write_scene

log = logging.getLogger(__name__)

UP_COS_15 = float(np.cos(np.deg2rad(15.0)))


@dataclass
class BinConfig:
    image_size: int = 128
    fx: float = 160.0
    fy: float = 160.0
    camera_height: float = 0.75
    bin_half_x: float = 0.22
    bin_half_y: float = 0.22
    max_stack_height: float = 0.30
    p_null: float = 0.02
    cup_radius: float = 0.009
    max_deviation: float = 0.002
    max_normal_angle_deg: float = 15.0
    cylinder_fraction: float = 0.6
    lying_fraction: float = 0.3
    floor_color: tuple = (96, 84, 70)
    color_noise: float = 4.0

    @property
    def intrinsics(self) -> CameraIntrinsics:
        c = (self.image_size - 1) / 2.0
        return CameraIntrinsics(self.fx, self.fy, c, c)


@dataclass
class Primitive:
    """One object: ``kind`` is ``cylinder`` (upright or lying) or ``box``."""

    kind: str
    center: np.ndarray  # world XY of the footprint center
    base: float  # world Z of the lowest point
    radius: float = 0.0  # cylinders
    height: float = 0.0  # upright cylinder / box
    length: float = 0.0  # lying cylinder
    half_extent: tuple = (0.0, 0.0)  # box half sizes along its own axes
    yaw: float = 0.0
    lying: bool = False
    color: tuple = (255, 255, 255)

    @property
    def top(self) -> float:
        if self.kind == "cylinder" and self.lying:
            return self.base + 2 * self.radius
        return self.base + self.height

    def surface_height(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Highest point of the object above each (X, Y); -inf outside."""
        dx, dy = X - self.center[0], Y - self.center[1]
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        a, b = c * dx + s * dy, -s * dx + c * dy  # along / across the object axis
        out = np.full(np.shape(X), -np.inf)
        if self.kind == "box":
            inside = (np.abs(a) <= self.half_extent[0]) & (np.abs(b) <= self.half_extent[1])
            out[inside] = self.top
        elif self.lying:
            inside = (np.abs(a) <= self.length / 2) & (np.abs(b) <= self.radius)
            out[inside] = self.base + self.radius + np.sqrt(self.radius**2 - b[inside] ** 2)
        else:
            inside = dx**2 + dy**2 <= self.radius**2
            out[inside] = self.top
        return out

    def footprint_samples(self, n: int = 9) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "box":
            ha, hb = self.half_extent
        elif self.lying:
            ha, hb = self.length / 2, self.radius
        else:
            ha = hb = self.radius
        a, b = np.meshgrid(np.linspace(-ha, ha, n), np.linspace(-hb, hb, n))
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        X = self.center[0] + c * a - s * b
        Y = self.center[1] + s * a + c * b
        if self.kind == "cylinder" and not self.lying:
            keep = a**2 + b**2 <= self.radius**2 + 1e-12
            return X[keep], Y[keep]
        return X.ravel(), Y.ravel()

    def intersect(self, origin: np.ndarray, dirs: np.ndarray):
        """Ray parameter ``t`` (= camera depth) and unit normal of the first hit.

        ``dirs`` is ``(m, 3)`` with dz = -1, so t equals camera-frame depth.
        Missed rays get ``t = inf``.
        """
        if self.kind == "box":
            return _hit_box(self, origin, dirs)
        if self.lying:
            return _hit_lying_cylinder(self, origin, dirs)
        return _hit_upright_cylinder(self, origin, dirs)


def _rotate_in(p: Primitive, xy: np.ndarray) -> np.ndarray:
    """World XY offsets expressed along (a) / across (b) the object axis."""
    c, s = np.cos(p.yaw), np.sin(p.yaw)
    return np.stack([c * xy[..., 0] + s * xy[..., 1], -s * xy[..., 0] + c * xy[..., 1]], axis=-1)


def _rotate_out(p: Primitive, ab: np.ndarray) -> np.ndarray:
    c, s = np.cos(p.yaw), np.sin(p.yaw)
    return np.stack([c * ab[..., 0] - s * ab[..., 1], s * ab[..., 0] + c * ab[..., 1]], axis=-1)


def _hit_upright_cylinder(p: Primitive, origin, dirs):
    m = dirs.shape[0]
    t_best = np.full(m, np.inf)
    normal = np.zeros((m, 3))
    ox, oy = origin[0] - p.center[0], origin[1] - p.center[1]
    # top cap
    t_top = origin[2] - p.top
    hx, hy = ox + t_top * dirs[:, 0], oy + t_top * dirs[:, 1]
    cap = hx**2 + hy**2 <= p.radius**2
    t_best[cap] = t_top
    normal[cap] = (0.0, 0.0, 1.0)
    # side wall
    a = dirs[:, 0] ** 2 + dirs[:, 1] ** 2
    b = 2 * (ox * dirs[:, 0] + oy * dirs[:, 1])
    c = ox**2 + oy**2 - p.radius**2
    disc = b**2 - 4 * a * c
    ok = (disc >= 0) & (a > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        t_side = (-b - np.sqrt(np.where(ok, disc, 0))) / (2 * a)
    z = origin[2] - t_side
    side = ok & (t_side > 0) & (z >= p.base) & (z <= p.top) & (t_side < t_best)
    t_best[side] = t_side[side]
    sx = ox + t_side[side] * dirs[side, 0]
    sy = oy + t_side[side] * dirs[side, 1]
    normal[side, 0] = sx / p.radius
    normal[side, 1] = sy / p.radius
    normal[side, 2] = 0.0
    return t_best, normal


def _hit_box(p: Primitive, origin, dirs):
    m = dirs.shape[0]
    o_ab = _rotate_in(p, np.array(origin[:2]) - p.center)
    d_ab = _rotate_in(p, dirs[:, :2])
    lo = np.array([-p.half_extent[0], -p.half_extent[1], p.base])
    hi = np.array([p.half_extent[0], p.half_extent[1], p.top])
    o = np.array([o_ab[0], o_ab[1], origin[2]])
    d = np.column_stack([d_ab, dirs[:, 2]])
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - o) / d
        t2 = (hi - o) / d
    # parallel rays: inside slab -> unbounded, outside -> miss
    par = d == 0
    inside = (o >= lo) & (o <= hi)
    t1 = np.where(par, np.where(inside, -np.inf, np.inf), t1)
    t2 = np.where(par, np.where(inside, np.inf, -np.inf), t2)
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    t_near = tmin.max(axis=1)
    axis = tmin.argmax(axis=1)
    t_far = tmax.min(axis=1)
    hit = (t_near <= t_far) & (t_near > 0)
    t_best = np.where(hit, t_near, np.inf)
    normal = np.zeros((m, 3))
    sign = -np.sign(d[np.arange(m), axis])
    n_local = np.zeros((m, 3))
    n_local[np.arange(m), axis] = sign
    normal[:, :2] = _rotate_out(p, n_local[:, :2])
    normal[:, 2] = n_local[:, 2]
    normal[~hit] = 0.0
    return t_best, normal


def _hit_lying_cylinder(p: Primitive, origin, dirs):
    m = dirs.shape[0]
    zc = p.base + p.radius
    o_ab = _rotate_in(p, np.array(origin[:2]) - p.center)
    d_ab = _rotate_in(p, dirs[:, :2])
    # local frame: a along the axis, b across, w = Z - zc
    oa, ob, ow = o_ab[0], o_ab[1], origin[2] - zc
    da, db, dw = d_ab[:, 0], d_ab[:, 1], dirs[:, 2]
    half = p.length / 2
    t_best = np.full(m, np.inf)
    normal = np.zeros((m, 3))
    # curved surface
    A = db**2 + dw**2
    B = 2 * (ob * db + ow * dw)
    C = ob**2 + ow**2 - p.radius**2
    disc = B**2 - 4 * A * C
    ok = disc >= 0
    t_c = (-B - np.sqrt(np.where(ok, disc, 0))) / (2 * A)
    a_hit = oa + t_c * da
    curved = ok & (t_c > 0) & (np.abs(a_hit) <= half)
    t_best[curved] = t_c[curved]
    nb = (ob + t_c * db) / p.radius
    nw = (ow + t_c * dw) / p.radius
    n_ab = np.column_stack([np.zeros(m), nb])
    nxy = _rotate_out(p, n_ab)
    normal[curved, :2] = nxy[curved]
    normal[curved, 2] = nw[curved]
    # end caps
    for end in (-half, half):
        with np.errstate(divide="ignore", invalid="ignore"):
            t_e = (end - oa) / da
        rb = ob + t_e * db
        rw = ow + t_e * dw
        cap = np.isfinite(t_e) & (t_e > 0) & (rb**2 + rw**2 <= p.radius**2) & (t_e < t_best)
        t_best[cap] = t_e[cap]
        n_cap = _rotate_out(p, np.array([np.sign(end), 0.0]))
        normal[cap, 0] = n_cap[0]
        normal[cap, 1] = n_cap[1]
        normal[cap, 2] = 0.0
    return t_best, normal


@dataclass
class SynthScene:
    """Everything needed to re-render a scene."""

    objects: list = field(default_factory=list)
    config: BinConfig = field(default_factory=BinConfig)
    seed: int = 0
    skipped: int = 0


def _random_color(rng) -> tuple:
    hue = rng.uniform(0, 1)
    sat = rng.uniform(0.5, 0.9)
    val = rng.uniform(0.6, 1.0)
    i = int(hue * 6) % 6
    f = hue * 6 - int(hue * 6)
    p, q, t = val * (1 - sat), val * (1 - f * sat), val * (1 - (1 - f) * sat)
    r, g, b = [(val, t, p), (q, val, p), (p, val, t), (p, q, val), (t, p, val), (val, p, q)][i]
    return (int(255 * r), int(255 * g), int(255 * b))


def _support_height(obj: Primitive, placed: list) -> float:
    X, Y = obj.footprint_samples()
    base = 0.0
    for other in placed:
        h = other.surface_height(X, Y)
        if h.size and np.isfinite(h).any():
            base = max(base, float(h[np.isfinite(h)].max()))
    return base


def _propose(rng, cfg: BinConfig) -> Primitive:
    if rng.uniform() < cfg.cylinder_fraction:
        lying = rng.uniform() < cfg.lying_fraction
        if lying:
            obj = Primitive(
                "cylinder", np.zeros(2), 0.0, radius=rng.uniform(0.02, 0.04),
                length=rng.uniform(0.08, 0.16), yaw=rng.uniform(0, np.pi), lying=True,
            )
        else:
            obj = Primitive(
                "cylinder", np.zeros(2), 0.0, radius=rng.uniform(0.025, 0.045),
                height=rng.uniform(0.04, 0.12),
            )
    else:
        obj = Primitive(
            "box", np.zeros(2), 0.0, height=rng.uniform(0.03, 0.10),
            half_extent=(rng.uniform(0.02, 0.06), rng.uniform(0.02, 0.06)),
            yaw=rng.uniform(0, np.pi),
        )
    obj.center = np.array([rng.uniform(-cfg.bin_half_x, cfg.bin_half_x), rng.uniform(-cfg.bin_half_y, cfg.bin_half_y)])
    obj.color = _random_color(rng)
    return obj


def layout_scene(seed: int, n_objects: int, cfg: BinConfig | None = None) -> SynthScene:
    """Drop ``n_objects`` random primitives into the bin."""
    if n_objects < 1:
        raise ValueError("n_objects must be at least 1")
    cfg = cfg or BinConfig()
    rng = np.random.default_rng(seed)
    placed: list[Primitive] = []
    skipped = 0
    for _ in range(n_objects):
        for _attempt in range(100):
            obj = _propose(rng, cfg)
            obj.base = _support_height(obj, placed)
            if obj.top <= cfg.max_stack_height:
                placed.append(obj)
                break
        else:
            skipped += 1
    if skipped:
        log.warning("seed %d: skipped %d unplaceable objects", seed, skipped)
    return SynthScene(placed, cfg, seed, skipped)


def pixel_rays(cfg: BinConfig) -> np.ndarray:
    k = cfg.intrinsics
    s = cfg.image_size
    v, u = np.mgrid[0:s, 0:s]
    d = np.empty((s * s, 3))
    d[:, 0] = ((u - k.cx) / k.fx).ravel()
    d[:, 1] = ((v - k.cy) / k.fy).ravel()
    d[:, 2] = -1.0
    return d


def render(scene: SynthScene):
    """Ray-cast the scene.

    Returns ``(depth, normals, object_id)``; ``object_id`` is -1 on the floor.
    """
    cfg = scene.config
    s = cfg.image_size
    origin = np.array([0.0, 0.0, cfg.camera_height])
    dirs = pixel_rays(cfg)
    depth = np.full(s * s, cfg.camera_height)  # bin floor
    normals = np.tile([0.0, 0.0, 1.0], (s * s, 1))
    ids = np.full(s * s, -1)
    for i, obj in enumerate(scene.objects):
        t, n = obj.intersect(origin, dirs)
        closer = t < depth
        depth[closer] = t[closer]
        normals[closer] = n[closer]
        ids[closer] = i
    return depth.reshape(s, s), normals.reshape(s, s, 3), ids.reshape(s, s)


def graspable_mask(depth, normals, ids, cfg: BinConfig) -> np.ndarray:
    """Object pixels facing up and flat over the suction cup disc.

    The disc is sampled with the pixels whose rays pass within
    ``cup_radius`` of the center pixel's point, measured at its depth.  Every
    such pixel must lie inside the image and within ``max_deviation`` in depth.
    """
    k = cfg.intrinsics
    s = cfg.image_size
    up = normals[..., 2] >= np.cos(np.deg2rad(cfg.max_normal_angle_deg))
    candidate = up & (ids >= 0)
    zmin = float(depth[candidate].min()) if candidate.any() else cfg.camera_height
    reach = int(np.ceil(cfg.cup_radius * max(k.fx, k.fy) / zmin))
    pad = reach
    big = np.pad(depth, pad, constant_values=np.nan)
    ok = candidate.copy()
    for dv in range(-reach, reach + 1):
        for du in range(-reach, reach + 1):
            # offset lies in the disc where (du/fx, dv/fy) * z <= cup radius
            r_needed = np.hypot(du / k.fx, dv / k.fy) * depth
            inside = r_needed <= cfg.cup_radius
            if not inside.any():
                continue
            shifted = big[pad + dv : pad + dv + s, pad + du : pad + du + s]
            dev = np.abs(shifted - depth)
            bad = inside & ~(dev <= cfg.max_deviation)  # NaN (off image) counts as bad
            ok &= ~bad
    return ok


def shade(scene: SynthScene, normals, ids, rng) -> np.ndarray:
    cfg = scene.config
    s = cfg.image_size
    colors = np.array([o.color for o in scene.objects] + [cfg.floor_color], dtype=float)
    base = colors[np.where(ids >= 0, ids, len(scene.objects))]
    light = np.array([0.3, -0.2, 0.93])
    light /= np.linalg.norm(light)
    lambert = np.clip(normals @ light, 0, 1)
    rgb = base * (0.35 + 0.65 * lambert)[..., None]
    rgb += rng.normal(0, cfg.color_noise, size=(s, s, 3))
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def generate_scene(seed: int, n_objects: int = 8, bin_cfg: BinConfig | None = None) -> SceneSample:
    """Lay out, render and label one synthetic scene."""
    scene = layout_scene(seed, n_objects, bin_cfg)
    cfg = scene.config
    depth, normals, ids = render(scene)
    mask = graspable_mask(depth, normals, ids, cfg)
    rng = np.random.default_rng([seed, 1])
    rgb = shade(scene, normals, ids, rng)
    if cfg.p_null > 0:
        dropout = rng.uniform(size=depth.shape) < cfg.p_null
        depth = np.where(dropout, 0.0, depth)
    return SceneSample(rgb=rgb, depth=depth, mask=mask.astype(np.uint8), intrinsics=cfg.intrinsics)


def generate_dataset(out_dir, count: int, seed: int = 0, n_objects: int = 8, cfg: BinConfig | None = None) -> list[Path]:
    """Write ``count`` scenes plus a ``manifest.txt`` under ``out_dir``."""
    cfg = cfg or BinConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(count - 1)))
    paths = []
    for i in range(count):
        sample = generate_scene(_scene_seed(seed, i), n_objects, cfg)
        paths.append(write_scene(out / f"scene_{i:0{width}d}", sample))
    lines = [f"seed={seed}", f"count={count}", f"objects={n_objects}"]
    lines += [f"{k}={v}" for k, v in asdict(cfg).items()]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
    return paths


def _scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0] >> 1)
