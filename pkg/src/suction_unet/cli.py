"""Command line entry point: ``suction-unet {synth,train,predict,eval}``.

Exit codes: 0 success, 2 usage error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import evaluation, postprocess, synthgen, training
from .dataset import DatasetError, load_dataset, load_scene, split
from .unet import MODE_CHANNELS, CheckpointFormatError, build_unet, load_checkpoint, normalize_mode, save_checkpoint

log = logging.getLogger("suction_unet")


class CliError(Exception):
    """A runtime failure reported to the user with exit code 1."""


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _non_negative_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _fraction(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"must be in (0, 1), got {text}")
    return v


def _decay(text):
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"must be in (0, 1], got {text}")
    return v


def _mode(text):
    try:
        return normalize_mode(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _alpha(text):
    if text == "auto":
        return None
    return _positive_float(text)


def _thresholds(text):
    try:
        vals = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad threshold list {text!r}") from None
    if not vals or any(not 0 < t <= 1 for t in vals):
        raise argparse.ArgumentTypeError("thresholds must be a comma list of values in (0, 1]")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="suction-unet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--count", required=True, type=_positive_int)
    s.add_argument("--seed", type=_non_negative_int, default=0)
    s.add_argument("--objects", type=_positive_int, default=8)
    s.add_argument("--p-null", type=float, default=synthgen.BinConfig.p_null, help="depth dropout probability")

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--data", required=True, type=Path)
    t.add_argument("--mode", required=True, type=_mode, help="rgb, rgbd or rgbp")
    t.add_argument("--epochs", required=True, type=_non_negative_int)
    t.add_argument("--out", required=True, type=Path, help="checkpoint path")
    t.add_argument("--lr", type=_positive_float, default=0.001)
    t.add_argument("--decay", type=_decay, default=0.8)
    t.add_argument("--decay-every", type=_positive_int, default=5)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    t.add_argument("--alpha", type=_alpha, default=None, help="positive-class weight, or 'auto' (5/4/2 by mode)")
    t.add_argument("--beta", type=float, default=training.DEFAULT_BETA)
    t.add_argument("--batch", type=_positive_int, default=8)
    t.add_argument("--seed", type=_non_negative_int, default=0)
    t.add_argument("--no-augment", action="store_true")
    _add_split_args(t)

    pr = sub.add_parser("predict", help="pick the suction point for one scene")
    pr.add_argument("--ckpt", required=True, type=Path)
    pr.add_argument("--scene", required=True, type=Path)
    pr.add_argument("--mode", type=_mode, default=None, help="expected input mode; must match the checkpoint")
    pr.add_argument("--emit-map", type=Path, default=None, help="processed map as 8-bit PGM")
    pr.add_argument("--emit-raw", type=Path, default=None, help="raw network map as little-endian float32")
    pr.add_argument("--no-smooth", action="store_true")

    e = sub.add_parser("eval", help="precision table over a dataset")
    e.add_argument("--ckpt", required=True, type=Path, action="append", help="repeat for one column per mode")
    e.add_argument("--data", required=True, type=Path)
    e.add_argument("--thresholds", type=_thresholds, default=evaluation.DEFAULT_THRESHOLDS)
    e.add_argument("--metric", choices=("standard", "literal"), default="standard")
    e.add_argument("--no-smooth", action="store_true")
    e.add_argument("--out", type=Path, default=None, help="also write the table here")
    _add_split_args(e)
    return p


def _add_split_args(p):
    p.add_argument("--split", type=_fraction, default=None, help="train fraction; train uses that part, eval the rest")
    p.add_argument("--split-seed", type=_non_negative_int, default=0)


def _load(path: Path, split_fraction, split_seed, part):
    samples = load_dataset(path)
    if split_fraction is not None:
        train_part, eval_part = split(samples, split_fraction, split_seed)
        samples = train_part if part == "train" else eval_part
    return samples


def cmd_synth(args) -> int:
    cfg = synthgen.BinConfig(p_null=args.p_null)
    synthgen.generate_dataset(args.out, args.count, args.seed, args.objects, cfg)
    print(f"wrote {args.count} scenes to {args.out}")
    return 0


def cmd_train(args) -> int:
    samples = _load(args.data, args.split, args.split_seed, "train")
    if not samples:
        raise CliError(f"no scenes found under {args.data}")
    loss_cfg = training.LossConfig(
        alpha=args.alpha if args.alpha is not None else training.DEFAULT_ALPHA[args.mode], beta=args.beta
    )
    train_cfg = training.TrainConfig(
        lr0=args.lr, decay=args.decay, decay_every=args.decay_every, momentum=args.momentum,
        batch_size=args.batch, epochs=args.epochs, seed=args.seed, optimizer=args.optimizer,
        augment=not args.no_augment,
    )
    model = build_unet(args.mode, seed=args.seed)
    metrics = Path(str(args.out) + ".metrics.tsv")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    records = training.train(model, samples, train_cfg, loss_cfg, metrics_path=metrics)
    save_checkpoint(model, args.out)
    if not records:
        training.write_metrics(metrics, [])
    print(f"alpha={loss_cfg.alpha:g} beta={loss_cfg.beta:g} epochs={len(records)} checkpoint={args.out}")
    return 0


def _open_checkpoint(path: Path):
    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        raise CliError(f"checkpoint {path} not found") from None
    except CheckpointFormatError as exc:
        raise CliError(f"{path}: {exc}") from None


def cmd_predict(args) -> int:
    model = _open_checkpoint(args.ckpt)
    if args.mode is not None and args.mode != model.input_mode:
        raise CliError(
            f"checkpoint was trained on {model.input_mode} ({MODE_CHANNELS[model.input_mode]} channels), "
            f"requested {args.mode} ({MODE_CHANNELS[args.mode]} channels)"
        )
    scene = load_scene(args.scene)
    x = training.scene_input(scene, model.input_mode)[None]
    raw = model.predict(x)[0]
    processed = postprocess.process_map(raw, smooth=not args.no_smooth)
    if args.emit_map is not None:
        postprocess.write_pgm(args.emit_map, processed)
    if args.emit_raw is not None:
        postprocess.write_raw(args.emit_raw, raw)
    result = postprocess.select_suction_point(processed, scene.depth, scene.intrinsics)
    print(result.line())
    return 0


def cmd_eval(args) -> int:
    samples = _load(args.data, args.split, args.split_seed, "eval")
    if not samples:
        raise CliError(f"evaluation set under {args.data} is empty")
    cfg = evaluation.EvalConfig(thresholds=args.thresholds, metric=args.metric, use_gaussian=not args.no_smooth)
    columns = {}
    for path in args.ckpt:
        model = _open_checkpoint(path)
        res = evaluation.evaluate(model, samples, cfg)
        columns[model.input_mode] = res.gaussian if cfg.use_gaussian else res.raw
    table = evaluation.format_table(columns, cfg.thresholds)
    sys.stdout.write(table)
    if args.out is not None:
        args.out.write_text(table)
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "predict": cmd_predict, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (CliError, DatasetError, training.TrainingError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
