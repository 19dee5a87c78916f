import numpy as np
import pytest

from suction_unet import cli
from suction_unet.dataset import SceneSample, downsample_label, load_dataset, write_scene
from suction_unet.geometry import CameraIntrinsics
from suction_unet.training import prepare_arrays
from suction_unet.unet import build_unet, load_checkpoint, save_checkpoint


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert cli.main(["synth", "--out", str(d), "--count", "3", "--seed", "7", "--objects", "3"]) == 0
    return d


@pytest.fixture(scope="module")
def ckpt(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt") / "rgbp.ckpt"
    argv = ["train", "--data", data_dir, "--mode", "rgbp", "--epochs", "1", "--batch", "3", "--out", out]
    assert cli.main([str(a) for a in argv]) == 0
    return out


def test_synth_layout_and_determinism(data_dir, tmp_path, capsys):
    assert sorted(p.name for p in data_dir.iterdir()) == ["manifest.txt", "scene_0000", "scene_0001", "scene_0002"]
    other = tmp_path / "again"
    code, out, _ = run(["synth", "--out", other, "--count", "3", "--seed", "7", "--objects", "3"], capsys)
    assert code == 0 and "3 scenes" in out
    for f in data_dir.rglob("*"):
        if f.is_file():
            assert f.read_bytes() == (other / f.relative_to(data_dir)).read_bytes()


def test_usage_errors_exit_2(capsys):
    for argv in (
        ["synth", "--count", "2"],
        ["synth", "--out", "x", "--count", "0"],
        ["train", "--data", "d", "--mode", "xyz", "--epochs", "1", "--out", "c"],
        ["eval", "--ckpt", "c", "--data", "d", "--thresholds", "0.9,1.5"],
        [],
    ):
        with pytest.raises(SystemExit) as info:
            cli.main(argv)
        assert info.value.code == 2
    capsys.readouterr()


def test_train_outputs(ckpt, capsys):
    assert load_checkpoint(ckpt).input_mode == "rgbp"
    lines = (ckpt.parent / (ckpt.name + ".metrics.tsv")).read_text().splitlines()
    assert len(lines) == 1 and lines[0].startswith("0\t0.001\t")


def test_train_alpha_auto_and_determinism(data_dir, ckpt, tmp_path, capsys):
    out = tmp_path / "again.ckpt"
    argv = ["train", "--data", data_dir, "--mode", "rgbp", "--epochs", "1", "--batch", "3", "--out", out, "--alpha", "auto"]
    code, text, _ = run(argv, capsys)
    assert code == 0
    assert "alpha=2 " in text and "beta=0.0001" in text
    assert out.read_bytes() == ckpt.read_bytes()


def test_train_bad_data_exit_1(tmp_path, capsys):
    d = tmp_path / "d"
    s = SceneSample(np.zeros((8, 8, 3), np.uint8), np.zeros((8, 8)), np.zeros((8, 8), np.uint8), CameraIntrinsics(1, 1, 0, 0))
    write_scene(d / "scene_0", s)
    (d / "scene_0" / "intrinsics.txt").write_text("oops\n")
    code, _, err = run(["train", "--data", d, "--mode", "rgb", "--epochs", "1", "--out", tmp_path / "c"], capsys)
    assert code == 1 and "intrinsics.txt" in err
    code, _, err = run(["train", "--data", tmp_path / "empty", "--mode", "rgb", "--epochs", "1", "--out", tmp_path / "c"], capsys)
    assert code == 1


def test_predict_line_and_artifacts(ckpt, data_dir, tmp_path, capsys):
    scene = data_dir / "scene_0001"
    code, out, _ = run(["predict", "--ckpt", ckpt, "--scene", scene, "--emit-map", tmp_path / "a.pgm",
                        "--emit-raw", tmp_path / "a.f32"], capsys)
    assert code == 0
    fields = out.split()
    assert len(fields) == 8
    r, c, ir, ic = (int(f) for f in fields[:4])
    assert (ir, ic) == (2 * r, 2 * c)
    assert float(fields[7]) == 1.0
    code, out2, _ = run(["predict", "--ckpt", ckpt, "--scene", scene, "--no-smooth", "--mode", "RGB-Points",
                         "--emit-map", tmp_path / "b.pgm", "--emit-raw", tmp_path / "b.f32"], capsys)
    assert code == 0 and len(out2.split()) == 8
    # smoothing touches only post-processing
    assert (tmp_path / "a.f32").read_bytes() == (tmp_path / "b.f32").read_bytes()
    assert (tmp_path / "a.f32").stat().st_size == 64 * 64 * 4


def test_predict_all_null_depth(ckpt, data_dir, tmp_path, capsys):
    s = load_dataset(data_dir)[0]
    s.depth = np.zeros_like(s.depth)
    write_scene(tmp_path / "scene_null", s)
    code, out, _ = run(["predict", "--ckpt", ckpt, "--scene", tmp_path / "scene_null"], capsys)
    assert code == 0 and out.strip() == "NO_POINT"


def test_predict_mode_mismatch(ckpt, data_dir, capsys):
    code, _, err = run(["predict", "--ckpt", ckpt, "--scene", data_dir / "scene_0000", "--mode", "rgb"], capsys)
    assert code == 1 and "rgbp" in err and "rgb" in err


def test_predict_bad_checkpoint(tmp_path, data_dir, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    code, _, err = run(["predict", "--ckpt", bad, "--scene", data_dir / "scene_0000"], capsys)
    assert code == 1 and "magic" in err
    code, _, _ = run(["predict", "--ckpt", tmp_path / "none.ckpt", "--scene", data_dir / "scene_0000"], capsys)
    assert code == 1


class LabelOracle:
    """Returns each scene's own label map, keyed by the input bytes."""

    def __init__(self, mode, samples):
        self.input_mode = mode
        X, _ = prepare_arrays(samples, mode)
        self.table = {x.tobytes(): downsample_label(s.mask) for x, s in zip(X, samples)}

    def predict(self, X):
        return np.stack([self.table[x.tobytes()] for x in X])


def test_eval_oracle_table(data_dir, tmp_path, capsys, monkeypatch):
    samples = load_dataset(data_dir)
    oracles = {"rgb": LabelOracle("rgb", samples), "rgbp": LabelOracle("rgbp", samples)}
    monkeypatch.setattr(cli, "_open_checkpoint", lambda p: oracles[p.name])
    code, out, _ = run(["eval", "--ckpt", "rgb", "--ckpt", "rgbp", "--data", data_dir, "--out", tmp_path / "t.tsv",
                        "--no-smooth"], capsys)
    assert code == 0
    assert out.splitlines() == ["threshold\tRGB\tRGB-Points", "0.98\t1.0000\t1.0000", "0.85\t1.0000\t1.0000"]
    assert (tmp_path / "t.tsv").read_text() == out


def test_eval_real_checkpoint(ckpt, data_dir, capsys):
    code, out, _ = run(["eval", "--ckpt", ckpt, "--data", data_dir, "--thresholds", "0.9,0.5", "--metric", "literal"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "threshold\tRGB-Points" and [l.split("\t")[0] for l in lines[1:]] == ["0.9", "0.5"]


def test_eval_split_uses_held_out_part(ckpt, data_dir, capsys, monkeypatch):
    seen = []
    real = cli.evaluation.evaluate

    def spy(model, samples, cfg):
        seen.append([s.name for s in samples])
        return real(model, samples, cfg)

    monkeypatch.setattr(cli.evaluation, "evaluate", spy)
    code, _, _ = run(["eval", "--ckpt", ckpt, "--data", data_dir, "--split", "0.67"], capsys)
    assert code == 0 and len(seen[0]) == 1


def test_eval_empty_set(tmp_path, ckpt, capsys):
    (tmp_path / "empty").mkdir()
    code, _, err = run(["eval", "--ckpt", ckpt, "--data", tmp_path / "empty"], capsys)
    assert code == 1 and "empty" in err


def test_checkpoint_shared_between_api_and_cli(tmp_path, data_dir, capsys):
    path = tmp_path / "rgb.ckpt"
    save_checkpoint(build_unet("rgb", seed=4), path)
    code, out, _ = run(["predict", "--ckpt", path, "--scene", data_dir / "scene_0002"], capsys)
    assert code == 0 and len(out.split()) == 8
