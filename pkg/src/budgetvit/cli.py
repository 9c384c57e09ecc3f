"""Command-line surface: train, eval, schedule, gradcheck, bench.

Every command is non-interactive and exits with a documented code:

    0  success
    1  check failure (gradcheck found a bad gradient)
    2  validation error (config, schedule, data, checkpoint mismatch)
    3  runtime abort (non-finite training loss)

All CSV output uses ',' delimiters, '.' decimal points, LF line endings, and
a mandatory header row. Report commands render a matplotlib figure next to
the delimited output (``--figure`` / the run directory).
"""

import argparse
import os
import sys
from pathlib import Path

from . import config as config_mod
from . import curriculum as cur
from . import gradcheck as gc
from . import plots
from .checkpoint import load_checkpoint
from .data import load_dataset, synthetic_dataset
from .errors import ArgumentError, BudgetVitError, CheckpointError, ConfigError, DataError, NonFiniteLossError
from .trainer import eval_view, evaluate, throughput_bench, train

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_VALIDATION = 2
EXIT_ABORT = 3


def _fail(message: str, code: int = EXIT_VALIDATION) -> int:
    for line in message.split("; "):
        print(f"error: {line}", file=sys.stderr)
    return code


def cmd_train(args) -> int:
    try:
        cfg = config_mod.parse_config(args.config, tuple(args.override))
    except ConfigError as exc:
        return _fail(str(exc))
    if args.run_dir:
        cfg.raw["run"]["run_dir"] = args.run_dir
    elif os.environ.get("RUN_DIR"):
        cfg.raw["run"]["run_dir"] = os.environ["RUN_DIR"]
    try:
        train_ds, val_ds = cfg.load_datasets()
    except (DataError, ArgumentError) as exc:
        return _fail(str(exc))

    run_dir = cfg.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    config_mod.write_frozen_config(cfg, run_dir / "config.ini")
    o = cfg.raw["optim"]
    print(f"train: run_dir={run_dir} seed={cfg.seed} precision={cfg.raw['run']['precision']}")
    print(f"train: lr={o['lr']} batch_size={o['batch_size']} beta1={o['beta1']} "
          f"label_smoothing={o['label_smoothing']} weight_decay={o['weight_decay']} warmup=none")
    print(f"train: schedule initial={cfg.schedule.initial_size} increment={cfg.schedule.increment} "
          f"period={cfg.schedule.period_epochs} final={cfg.schedule.final_size}")
    try:
        result = train(cfg.model, train_ds, val_ds, cfg.budget, cfg.schedule,
                       cfg.train_options(), resume_from=args.resume)
    except NonFiniteLossError as exc:
        print(f"abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (ConfigError, CheckpointError) as exc:
        return _fail(str(exc))

    if result.metrics and not args.no_figure:
        plots.save_metrics_figure(result.metrics, run_dir / "metrics.png")
    if result.metrics:
        last = result.metrics[-1]
        print(f"train: finished epoch={last.epoch} wall_clock_s={last.wall_clock_s:.1f} "
              f"val_top1={last.val_top1:.2f}")
    else:
        print("train: budget expired before the first step completed")
    return EXIT_OK


def _dataset_from_args(args):
    fmt = args.format
    if fmt == "synthetic":
        spec = dict(kv.split("=", 1) for kv in args.data.split(",") if kv)
        try:
            return synthetic_dataset(int(spec["classes"]), int(spec["per_class"]),
                                     int(spec["base_size"]), int(spec["seed"]), split="val")
        except KeyError as exc:
            raise ArgumentError(f"synthetic data spec needs classes,per_class,base_size,seed; missing {exc}")
    if fmt is None:
        path = Path(args.data)
        if path.is_dir() and any(path.glob("*.bin")):
            fmt = "binary-record"
        elif path.is_file() and path.suffix == ".bin":
            fmt = "binary-record"
        else:
            fmt = "image-directory"
    return load_dataset(args.data, fmt, "val")


def cmd_eval(args) -> int:
    try:
        bundle = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        return _fail(str(exc))
    model = bundle.model
    try:
        ds = _dataset_from_args(args)
    except (DataError, ArgumentError) as exc:
        return _fail(str(exc))
    if ds.num_classes != model.config.num_classes:
        return _fail(f"checkpoint expects {model.config.num_classes} classes but dataset has {ds.num_classes}")
    eval_size = args.eval_size if args.eval_size else model.current_grid * model.config.patch_size
    if eval_size % model.config.patch_size != 0:
        return _fail(f"eval size {eval_size} not divisible by patch size {model.config.patch_size}")
    view = eval_view(model, eval_size)
    top1 = evaluate(view, ds, eval_size, args.batch_size, args.normalization)
    print(f"top1={top1}")
    print(f"samples={len(ds)}")
    return EXIT_OK


def cmd_schedule(args) -> int:
    try:
        cfg = config_mod.parse_config(args.config, tuple(args.override))
    except ConfigError as exc:
        return _fail(str(exc))
    schedule = cfg.schedule
    max_epochs = args.max_epochs
    if max_epochs is None:
        if schedule.increment > 0:
            growth = -(-(schedule.final_size - schedule.initial_size) // schedule.increment)
            max_epochs = schedule.period_epochs * (growth + 1)
        else:
            max_epochs = schedule.period_epochs
    print("epoch,image_size,num_patches")
    for epoch in range(max_epochs):
        print(f"{epoch},{cur.size_for_epoch(schedule, epoch)},{cur.num_patches(schedule, epoch)}")
    if args.figure:
        plots.save_schedule_figure(schedule, max_epochs, args.figure)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cases = gc.primitive_checks()
    if args.scope == "model":
        cases = cases + gc.model_checks()
    reports = gc.run_checks(cases)
    print("op_name,max_rel_err,passed")
    for r in reports:
        print(f"{r.op_name},{r.max_rel_err:.6e},{'true' if r.passed else 'false'}")
    failures = [r for r in reports if not r.passed]
    if failures:
        worst = max(failures, key=lambda r: r.max_rel_err)
        print(f"gradient check failed: worst op {worst.op_name} "
              f"(max relative error {worst.max_rel_err:.3e})", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        cfg = config_mod.parse_config(args.config, tuple(args.override))
    except ConfigError as exc:
        return _fail(str(exc))
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s]
    except ValueError:
        return _fail(f"could not parse sizes {args.sizes!r}")
    if not sizes:
        return _fail("no sizes given")
    bad = [s for s in sizes if s % cfg.model.patch_size != 0]
    if bad:
        return _fail(f"sizes {bad} not divisible by patch size {cfg.model.patch_size}")
    results = throughput_bench(cfg.model, sizes, args.steps, args.batch_size,
                               seed=cfg.seed, dtype=cfg.dtype)
    print("image_size,tokens,step_time_ms")
    for s in sizes:
        r = results[s]
        print(f"{s},{r['tokens']},{r['step_time_ms']!r}")
    s_min, s_max = min(sizes), max(sizes)
    ratio = results[s_max]["step_time_ms"] / results[s_min]["step_time_ms"]
    print(f"step_time({s_max})/step_time({s_min}) = {ratio:.2f}", file=sys.stderr)
    if args.figure:
        plots.save_bench_figure(results, args.figure)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="budgetvit",
                                     description="Budgeted vision-Transformer training")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a budgeted training job from a config file")
    p_train.add_argument("-c", "--config", required=True)
    p_train.add_argument("--override", action="append", default=[],
                         metavar="SECTION.KEY=VALUE", help="repeatable config override")
    p_train.add_argument("--run-dir", default=None, help="overrides RUN_DIR env and config run_dir")
    p_train.add_argument("--resume", default=None, help="checkpoint to resume from")
    p_train.add_argument("--no-figure", action="store_true", help="skip metrics.png rendering")
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="top-1 accuracy of a checkpoint on a validation set")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("--data", required=True,
                        help="dataset path, or synthetic spec classes=..,per_class=..,base_size=..,seed=..")
    p_eval.add_argument("--format", choices=["image-directory", "binary-record", "synthetic"], default=None)
    p_eval.add_argument("--eval-size", type=int, default=None)
    p_eval.add_argument("--batch-size", type=int, default=256)
    p_eval.add_argument("--normalization", default="half")
    p_eval.set_defaults(fn=cmd_eval)

    p_sched = sub.add_parser("schedule", help="print the epoch -> image size table as CSV")
    p_sched.add_argument("-c", "--config", required=True)
    p_sched.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p_sched.add_argument("--max-epochs", type=int, default=None)
    p_sched.add_argument("--figure", default=None, help="also render the schedule staircase to this file")
    p_sched.set_defaults(fn=cmd_schedule)

    p_gc = sub.add_parser("gradcheck", help="certify analytic gradients against finite differences")
    p_gc.add_argument("--scope", choices=["primitives", "model"], default="primitives")
    p_gc.set_defaults(fn=cmd_gradcheck)

    p_bench = sub.add_parser("bench", help="per-image-size training step throughput")
    p_bench.add_argument("-c", "--config", required=True)
    p_bench.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p_bench.add_argument("--sizes", default="32,64,96,128,160,192,224")
    p_bench.add_argument("--steps", type=int, default=5)
    p_bench.add_argument("--batch-size", type=int, default=8)
    p_bench.add_argument("--figure", default=None, help="also render step time vs size to this file")
    p_bench.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except BudgetVitError as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
