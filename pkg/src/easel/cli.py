"""Command-line surface: train, plan, paint, calibrate.

Every command is deterministic under a fixed --seed and writes only the
declared artifacts (no timestamps), so reruns are byte-identical.
Option precedence: command-line flag > --config file entry > built-in
default.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import calibration, objectives, planner, strokes
from .executor import Executor, NoiseModel
from .objectives import BuiltinExtractor, ObjectiveConfig
from .planner import PlannerConfig, init_plan, optimize, paint, save_plan
from .renderer import DEFAULT_CANVAS_WIDTH_M, Canvas, render_plan
from .stroke_model import (TrainConfig, learning_curve, load_model, save_model,
                           train_param2stroke)


class CommandError(Exception):
    """User-facing failure: printed to stderr with a nonzero exit."""


def _add_common(p):
    p.add_argument("--seed", type=int, default=0, help="master RNG seed")
    p.add_argument("--out", default=".", help="output file (train) or directory")
    p.add_argument("--config", default=None,
                   help="JSON file of option defaults (flags still win)")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="easel",
        description="Differentiable stroke-painting planner and simulator.")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    t = subparsers["train"] = sub.add_parser(
        "train", help="train the shape-to-stamp model")
    t.add_argument("--dataset", help="stroke dataset directory (index.tsv)")
    t.add_argument("--generate", type=int, metavar="N",
                   help="generate N oracle strokes instead of loading")
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--sweep", help="comma list of dataset sizes for a "
                                   "learning-curve study")
    t.add_argument("--folds", type=int, default=5,
                   help="validation rotations per sweep size")
    _add_common(t)

    p = subparsers["plan"] = sub.add_parser(
        "plan", help="optimize a stroke plan for targets")
    _add_plan_args(p)
    _add_common(p)

    q = subparsers["paint"] = sub.add_parser(
        "paint", help="plan, execute in batches, and replan")
    _add_plan_args(q)
    q.add_argument("--batch", type=int, default=30, help="strokes per execution batch")
    q.add_argument("--noise", type=float, default=1.0,
                   help="scale on the default execution noise (0 = exact)")
    q.add_argument("--exec-render", choices=("oracle", "model"), default="oracle",
                   help="how the executor paints strokes")
    q.add_argument("--no-replan", action="store_true",
                   help="skip re-optimization between batches")
    _add_common(q)

    c = subparsers["calibrate"] = sub.add_parser(
        "calibrate", help="fit homography / color transforms")
    c.add_argument("--dots", help="correspondence file: sx sy dx dy per line")
    c.add_argument("--checker", help="color checker file: mr mg mb rr rg rb")
    _add_common(c)
    return parser, subparsers


def _add_plan_args(p):
    p.add_argument("--model", required=False, help="trained model file (.p2s)")
    p.add_argument("--target", help="target image (P6) for print/semantic")
    p.add_argument("--style", help="style image (P6)")
    p.add_argument("--text", help="text goal, or a FEAT1 embedding file")
    p.add_argument("--objective", default="print",
                   help="comma list of print|semantic|style|text")
    p.add_argument("--weights", default=None,
                   help="comma list of weights matching --objective")
    p.add_argument("--strokes", type=int, default=100)
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--replan-iters", type=int, default=100)
    p.add_argument("--palette-k", type=int, default=None,
                   help="discretize colors to K paints")
    p.add_argument("--width-m", type=float, default=DEFAULT_CANVAS_WIDTH_M,
                   help="physical canvas width in meters")


def _apply_config_file(subparsers, argv):
    # manual pre-scan so --config values become defaults, not overrides;
    # defaults must land on the subcommand parser because subcommands parse
    # into a fresh namespace
    if "--config" not in argv or not argv:
        return
    path = argv[argv.index("--config") + 1]
    try:
        with open(path, encoding="utf-8") as f:
            entries = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise CommandError(f"cannot read config file {path}: {exc}") from None
    defaults = {key.replace("-", "_"): value for key, value in entries.items()}
    if argv[0] in subparsers:
        subparsers[argv[0]].set_defaults(**defaults)


def _ensure_outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _load_canvas(path, width_m):
    if not os.path.exists(path):
        raise CommandError(f"image file not found: {path}")
    return Canvas.load(path, width_m=width_m)


def _objective_config(args, extractor):
    names = [n.strip() for n in args.objective.split(",") if n.strip()]
    valid = {"print", "semantic", "style", "text"}
    for n in names:
        if n not in valid:
            raise CommandError(f"unknown objective {n!r}; choose from {sorted(valid)}")
    if args.weights is not None:
        weights = [float(w) for w in args.weights.split(",")]
        if len(weights) != len(names):
            raise CommandError(
                f"--weights lists {len(weights)} values for {len(names)} objectives")
    else:
        weights = [1.0] * len(names)

    config = ObjectiveConfig()
    for name, weight in zip(names, weights):
        if name == "print":
            config.w_print = weight
        elif name == "semantic":
            config.w_semantic = weight
        elif name == "style":
            config.w_style = weight
        elif name == "text":
            config.w_text = weight

    if config.w_print or config.w_semantic:
        if not args.target:
            raise CommandError("print/semantic objectives need --target")
        config.target = _load_canvas(args.target, args.width_m)
    if config.w_style:
        if not args.style:
            raise CommandError("style objective needs --style")
        config.style = _load_canvas(args.style, args.width_m)
    if config.w_text:
        if not args.text:
            raise CommandError("text objective needs --text")
        if os.path.exists(args.text):
            config.text_embedding = objectives.load_features(args.text)
        else:
            config.text = args.text
    try:
        config.validate()
    except ValueError as exc:
        raise CommandError(str(exc)) from None
    return config


def _planner_config(args, objective_config):
    try:
        return PlannerConfig(
            n_strokes=args.strokes,
            batch_size=getattr(args, "batch", 30),
            iterations=args.iters,
            replan_iterations=args.replan_iters,
            objectives=objective_config,
            palette_size=args.palette_k,
            replan=not getattr(args, "no_replan", False),
            seed=args.seed,
        ).validate()
    except ValueError as exc:
        raise CommandError(str(exc)) from None


def _base_canvas(config: ObjectiveConfig, args):
    for ref in (config.target, config.style):
        if ref is not None:
            return Canvas.blank(*ref.shape, width_m=args.width_m)
    return Canvas.blank(128, 160, width_m=args.width_m)


def _require_model(args):
    if not args.model:
        raise CommandError("this command needs --model (a trained .p2s file)")
    if not os.path.exists(args.model):
        raise CommandError(f"model file not found: {args.model}")
    try:
        return load_model(args.model)
    except ValueError as exc:
        raise CommandError(str(exc)) from None


def cmd_train(args):
    if args.dataset:
        try:
            dataset = strokes.load_dataset(args.dataset)
        except (OSError, ValueError) as exc:
            raise CommandError(f"cannot read dataset {args.dataset}: {exc}") from None
    elif args.generate:
        dataset = strokes.generate_dataset(args.generate, seed=args.seed)
    else:
        raise CommandError("train needs --dataset DIR or --generate N")

    out = args.out if args.out != "." else "model.p2s"
    outdir = os.path.dirname(os.path.abspath(out))
    os.makedirs(outdir, exist_ok=True)

    if args.sweep:
        sizes = tuple(int(s) for s in args.sweep.split(","))
        rows = learning_curve(sizes=sizes, folds=args.folds, seed=args.seed,
                              config=TrainConfig(epochs=args.epochs, seed=args.seed))
        with open(os.path.join(outdir, "learning_curve.csv"), "w",
                  encoding="ascii") as f:
            f.write("dataset_size,median_test_mae\n")
            for size, median, _ in rows:
                f.write(f"{size},{median!r}\n")

    model, history = train_param2stroke(
        dataset, TrainConfig(epochs=args.epochs, seed=args.seed))
    save_model(model, out)
    with open(os.path.join(outdir, "training_history.csv"), "w",
              encoding="ascii") as f:
        f.write("epoch,train_loss,val_loss\n")
        for epoch, train, val in history:
            f.write(f"{epoch},{train!r},{'' if val is None else repr(val)}\n")
    print(f"wrote {out}")
    return 0


def cmd_plan(args):
    model = _require_model(args)
    extractor = BuiltinExtractor(seed=args.seed)
    objective_config = _objective_config(args, extractor)
    config = _planner_config(args, objective_config)
    outdir = _ensure_outdir(args.out)

    base = _base_canvas(objective_config, args)
    rng = np.random.default_rng(config.seed)
    plan = init_plan(config, rng, base)
    plan, history = optimize(plan, base, model, config, extractor)
    if config.palette_size is not None:
        plan, _ = planner.discretize_colors(plan, config.palette_size, config.seed)
        plan = planner.sort_light_to_dark(plan)

    save_plan(plan, os.path.join(outdir, "plan.txt"))
    render_plan(plan, base, model).save(os.path.join(outdir, "sim.ppm"))
    planner.write_history_csv(os.path.join(outdir, "loss.csv"), history,
                              "iteration,loss")
    print(f"wrote {outdir}/plan.txt (final loss {min(history):.6f})")
    return 0


def cmd_paint(args):
    model = _require_model(args)
    extractor = BuiltinExtractor(seed=args.seed)
    objective_config = _objective_config(args, extractor)
    config = _planner_config(args, objective_config)
    outdir = _ensure_outdir(args.out)

    base = _base_canvas(objective_config, args)
    noise = NoiseModel(seed=args.seed).scaled(args.noise)
    executor = Executor(base, model=model, noise=noise,
                        render_mode=args.exec_render)
    result = paint(model, config, extractor, executor)

    result.final_canvas.save(os.path.join(outdir, "final.ppm"))
    result.predicted_final.save(os.path.join(outdir, "sim.ppm"))
    save_plan(result.initial_plan, os.path.join(outdir, "plan.txt"))
    save_plan(result.initial_plan, os.path.join(outdir, "executed.txt"),
              realized=[r for _, r in executor.log])
    planner.write_history_csv(os.path.join(outdir, "loss.csv"),
                              result.initial_history, "iteration,loss")
    planner.write_history_csv(os.path.join(outdir, "deviation.csv"),
                              result.deviations, "batch,deviation")
    for i, painting_round in enumerate(result.rounds):
        painting_round.perceived.save(os.path.join(outdir, f"batch_{i:03d}.ppm"))
    print(f"wrote {outdir}/final.ppm ({len(result.rounds)} batches)")
    return 0


def cmd_calibrate(args):
    if not args.dots and not args.checker:
        raise CommandError("calibrate needs --dots and/or --checker")
    outdir = _ensure_outdir(args.out)
    try:
        if args.dots:
            src, dst = calibration.load_correspondences(args.dots)
            h = calibration.fit_homography(src, dst)
            calibration.save_homography(os.path.join(outdir, "homography.txt"), h)
            print(f"wrote {outdir}/homography.txt")
        if args.checker:
            measured, reference = calibration.load_checker(args.checker)
            t = calibration.fit_color_transform(measured, reference)
            calibration.save_color_transform(
                os.path.join(outdir, "color_transform.txt"), t)
            print(f"wrote {outdir}/color_transform.txt")
    except (OSError, ValueError) as exc:
        raise CommandError(str(exc)) from None
    return 0


_COMMANDS = {"train": cmd_train, "plan": cmd_plan, "paint": cmd_paint,
             "calibrate": cmd_calibrate}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = _build_parser()
    try:
        _apply_config_file(subparsers, argv)
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except CommandError as exc:
        print(f"easel: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
