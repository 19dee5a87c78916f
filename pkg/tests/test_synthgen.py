import numpy as np
import pytest

from suction_unet.dataset import load_dataset
from suction_unet.synthgen import (
    BinConfig,
    Primitive,
    SynthScene,
    generate_dataset,
    generate_scene,
    graspable_mask,
    layout_scene,
    pixel_rays,
    render,
)


def single_cylinder(radius=0.04, height=0.10, center=(0.0, 0.0)):
    cfg = BinConfig(p_null=0.0)
    obj = Primitive("cylinder", np.array(center, float), 0.0, radius=radius, height=height)
    return SynthScene([obj], cfg)


def test_upright_cylinder_disc_oracle():
    scene = single_cylinder()
    cfg = scene.config
    obj = scene.objects[0]
    depth, normals, ids = render(scene)
    mask = graspable_mask(depth, normals, ids, cfg)

    z_top = cfg.camera_height - obj.top
    d = pixel_rays(cfg).reshape(cfg.image_size, cfg.image_size, 3)
    # distance from the axis of each pixel's ray where it crosses the top plane
    rho = np.hypot(z_top * d[..., 0] - obj.center[0], z_top * d[..., 1] - obj.center[1])
    px = z_top / cfg.fx  # one pixel at the top surface, meters
    eroded = obj.radius - cfg.cup_radius
    assert mask.any()
    assert np.all(mask[rho <= eroded - px])
    assert not np.any(mask[rho > eroded + px])
    # cap pixels have the analytic depth
    cap = rho <= obj.radius - px
    np.testing.assert_allclose(depth[cap], z_top, atol=1e-12)
    np.testing.assert_allclose(depth[rho > obj.radius + px], cfg.camera_height, atol=1e-12)


def test_cylinder_too_small_for_cup_has_empty_mask():
    scene = single_cylinder(radius=0.008)
    depth, normals, ids = render(scene)
    assert not graspable_mask(depth, normals, ids, scene.config).any()


def test_floor_never_graspable():
    cfg = BinConfig(p_null=0.0)
    scene = SynthScene([], cfg)
    depth, normals, ids = render(scene)
    assert np.all(depth == cfg.camera_height)
    assert not graspable_mask(depth, normals, ids, cfg).any()


def test_positive_depth_matches_analytic_surface():
    cfg = BinConfig(p_null=0.0)
    d = pixel_rays(cfg).reshape(cfg.image_size, cfg.image_size, 3)
    for seed in range(15):
        scene = layout_scene(seed, 8, cfg)
        depth, normals, ids = render(scene)
        mask = graspable_mask(depth, normals, ids, cfg)
        assert np.all(depth[mask] > 0)
        rows, cols = np.nonzero(mask)
        for r, c in zip(rows, cols):
            z = depth[r, c]
            X, Y = z * d[r, c, 0], z * d[r, c, 1]
            height = scene.objects[ids[r, c]].surface_height(np.array([X]), np.array([Y]))[0]
            assert abs((cfg.camera_height - z) - height) <= 1e-6


def test_box_and_lying_cylinder_hits():
    cfg = BinConfig(p_null=0.0)
    box = Primitive("box", np.array([0.05, -0.03]), 0.0, height=0.06, half_extent=(0.05, 0.03), yaw=0.4)
    lying = Primitive("cylinder", np.array([-0.08, 0.06]), 0.0, radius=0.03, length=0.12, yaw=1.1, lying=True)
    depth, normals, ids = render(SynthScene([box, lying], cfg))
    assert {-1, 0, 1} <= set(np.unique(ids))
    np.testing.assert_allclose(np.linalg.norm(normals, axis=-1), 1.0, atol=1e-9)
    # box top at the analytic depth
    assert np.isclose(depth[ids == 0].min(), cfg.camera_height - 0.06)
    assert depth[ids == 1].min() >= cfg.camera_height - 0.06 - 1e-12


def test_stacking_rests_on_support():
    scene = layout_scene(3, 12)
    for i, obj in enumerate(scene.objects):
        assert obj.top <= scene.config.max_stack_height
        X, Y = obj.footprint_samples()
        below = [o.surface_height(X, Y) for o in scene.objects[:i]]
        support = max([0.0] + [h[np.isfinite(h)].max() for h in below if np.isfinite(h).any()])
        assert obj.base == pytest.approx(support)


def test_deterministic_scene():
    a, b = generate_scene(11, 6), generate_scene(11, 6)
    for f in ("rgb", "depth", "mask"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    assert not np.array_equal(a.depth, generate_scene(12, 6).depth)


def test_dropout_rate():
    cfg = BinConfig(p_null=0.1)
    s = generate_scene(0, 8, cfg)
    assert 0.08 < np.mean(s.depth == 0) < 0.12
    assert np.all(generate_scene(0, 8, BinConfig(p_null=0.0)).depth > 0)


def test_zero_objects_rejected():
    with pytest.raises(ValueError):
        generate_scene(0, 0)


def test_masks_nonempty_over_200_seeds():
    nonempty = sum(generate_scene(seed, 8).mask.any() for seed in range(200))
    assert nonempty >= 190


def test_dataset_round_trip_and_determinism(tmp_path):
    generate_dataset(tmp_path / "a", 3, seed=7, n_objects=3)
    generate_dataset(tmp_path / "b", 3, seed=7, n_objects=3)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == 3 * 4 + 1
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    manifest = (tmp_path / "a" / "manifest.txt").read_text().splitlines()
    assert manifest[:3] == ["seed=7", "count=3", "objects=3"]
    assert "p_null=0.02" in manifest
    samples = load_dataset(tmp_path / "a")
    assert len(samples) == 3
    assert all(s.rgb.shape == (128, 128, 3) for s in samples)
