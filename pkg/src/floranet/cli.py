"""Command-line entry point: train, sweep, eval, paramcount, serve, bench, synth.

Exit status: 0 on success, 1 on usage errors (synopsis printed), 2 on runtime
failures. Every verb prints its resolved configuration before acting.
FLORA_LOG={error,info,debug} controls log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from pathlib import Path

from .arch import ARCH_NAMES, FULL_SIZE, HEADS, apply_freeze, build_architecture
from .arch import count_layers, count_parameters
from .data import (
    DEFAULT_AUGMENT,
    DatasetIndex,
    scan_dataset,
    save_synth_dataset,
    split_dataset,
    synth_dataset,
    write_exclusion_report,
)
from .optim import OPTIMIZER_KINDS, OptimizerConfig
from .train import (
    TrainConfig,
    evaluate,
    load_checkpoint,
    run_sweep,
    save_checkpoint,
    train,
)

log = logging.getLogger("floranet")


class UsageError(Exception):
    def __init__(self, message: str, parser: argparse.ArgumentParser):
        super().__init__(message)
        self.parser = parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, self)


def _default_side(arch: str) -> int:
    if arch == "xception":
        return 299
    return 224 if arch in FULL_SIZE else 32


def resolve_data(spec: str, seed: int) -> DatasetIndex:
    """A dataset argument is either `synth:<classes>x<per_class>x<size>` or a
    class-per-directory root path."""
    if spec.startswith("synth:"):
        try:
            c, n, s = (int(v) for v in spec[len("synth:"):].split("x"))
        except ValueError:
            raise ValueError(
                f"bad synth spec {spec!r}; expected synth:<classes>x<per_class>x<size>")
        return synth_dataset(c, n, s, seed)
    return scan_dataset(spec)


def _print_config(verb: str, args: argparse.Namespace) -> None:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    print(f"[floranet {verb}] resolved configuration:")
    print(json.dumps(cfg, indent=2, default=str))


def _csv_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


# --- verbs -------------------------------------------------------------------

def cmd_paramcount(args) -> int:
    side = args.input_size or _default_side(args.arch)
    desc = build_architecture(args.arch, (side, side, 3), args.classes, args.head)
    plan = apply_freeze(desc, args.freeze) if args.freeze else None
    counts = count_parameters(desc, plan)
    print(f"architecture : {args.arch} ({side}x{side}x3, head={args.head}, "
          f"classes={args.classes})")
    print(f"base layers  : {count_layers(desc)}")
    if plan:
        print(f"frozen layers: {len(plan.frozen_node_indices)} (ratio {args.freeze})")
    print(f"total params         : {counts['total']:,}")
    print(f"trainable params     : {counts['trainable']:,}")
    print(f"non-trainable params : {counts['non_trainable']:,}")
    if args.arch == "xception" and args.head == "flatten":
        final = desc.output_shapes()[desc.base_len - 1]
        print(f"note: flatten head sized for a {final[0]}x{final[1]}x{final[2]} final "
              f"map at {side} input; the published flatten total corresponds to a "
              f"224 input (7x7x2048), not the canonical 299 (10x10x2048).")
    return 0


def cmd_train(args) -> int:
    index = resolve_data(args.data, args.seed)
    if index.exclusions:
        log.warning("%d undecodable files excluded", len(index.exclusions))
        report = Path(args.out).with_suffix(".exclusions.txt")
        report.parent.mkdir(parents=True, exist_ok=True)
        write_exclusion_report(index, report)
    synth = args.data.startswith("synth:")
    if synth:
        # synthetic data is a memorization harness: train on all of it
        train_index, val_index = index, None
    else:
        train_index, val_index, _ = split_dataset(index, seed=args.seed)
    side = args.input_size or _default_side(args.arch)
    desc = build_architecture(args.arch, (side, side, 3), index.num_classes, args.head)
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        optimizer=OptimizerConfig(args.optimizer, learning_rate=args.lr),
        freeze_ratio=args.freeze,
        seed=args.seed,
        augment=DEFAULT_AUGMENT if args.augment else None,
    )
    result = train(desc, train_index, val_index, config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, result.model, index.class_names, config, result.history)
    from .report import save_history_figure, write_history_csv

    write_history_csv(result.history, out.with_suffix(".history.csv"))
    save_history_figure(result.history, out.with_suffix(".history.png"))
    print(f"final train accuracy : {result.history['train_acc'][-1]:.4f}")
    print(f"final train loss     : {result.history['train_loss'][-1]:.4f}")
    print(f"checkpoint written   : {out}")
    print(f"history              : {out.with_suffix('.history.csv')}, "
          f"{out.with_suffix('.history.png')}")
    return 0


def cmd_sweep(args) -> int:
    archs = _csv_list(args.archs)
    kinds = list(OPTIMIZER_KINDS) if args.optimizers == "all" \
        else _csv_list(args.optimizers)
    for kind in kinds:
        if kind not in OPTIMIZER_KINDS:
            raise ValueError(f"unknown optimizer {kind!r}; valid: "
                             f"{', '.join(OPTIMIZER_KINDS)}")
    ratios = [float(v) for v in _csv_list(args.freezes)]
    heads = _csv_list(args.heads)
    index = resolve_data(args.data, args.seed)
    splits = split_dataset(index, seed=args.seed)
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                         optimizer=OptimizerConfig("sgd"), seed=args.seed)
    side = args.input_size or min(_default_side(a) for a in archs)
    rows = run_sweep(archs, kinds, ratios, heads, splits, config,
                     input_shape=(side, side, 3))

    from .report import render_sweep_table, save_sweep_figure, write_sweep_csv

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(rows, out)
    table = render_sweep_table(rows)
    out.with_suffix(".txt").write_text(table)
    save_sweep_figure(rows, out.with_suffix(".png"))
    print(table, end="")
    print(f"sweep table written: {out} (+ .txt, .png)")
    return 0


def cmd_eval(args) -> int:
    loaded = load_checkpoint(args.ckpt)
    index = resolve_data(args.data, args.seed)
    if args.split != "all":
        parts = dict(zip(("train", "val", "test"), split_dataset(index, seed=args.seed)))
        index = parts[args.split]
    if index.num_classes != loaded.model.desc.num_classes:
        raise ValueError(
            f"dataset has {index.num_classes} classes but the checkpoint model "
            f"has {loaded.model.desc.num_classes} outputs")
    result = evaluate(loaded.model, index, args.batch_size, collect_records=True)

    from .metrics import dump_misclassified, render_report
    from .report import save_confusion_figure

    names = loaded.class_names or index.class_names
    report = render_report(result.cm, names, loss=result.loss)
    print(report, end="")
    if args.report_dir:
        rd = Path(args.report_dir)
        rd.mkdir(parents=True, exist_ok=True)
        (rd / "metrics.txt").write_text(report)
        save_confusion_figure(result.cm, names, rd / "confusion_matrix.png")
        print(f"report written to {rd}")
    if args.dump_misclassified:
        rows = dump_misclassified(result.records, names)
        with open(args.dump_misclassified, "w", encoding="utf-8") as f:
            for r in rows:
                f.write(f"{r['sample_id']}\t{r['actual']}\t{r['predicted']}\t"
                        f"{r['confidence']:.4f}\n")
        print(f"{len(rows)} misclassified samples -> {args.dump_misclassified}")
    return 0


def cmd_serve(args) -> int:
    from .serve import run_server

    run_server(args.ckpt, host=args.host, port=args.port)
    return 0


def cmd_bench(args) -> int:
    from .serve import benchmark, load_model

    handle = load_model(args.ckpt)
    stats = benchmark(handle, runs=args.runs, warmup=args.warmup)
    print(f"device : {platform.node() or 'localhost'} ({platform.machine()})")
    print(f"model  : {handle.arch_name} @ {handle.input_hw[0]}x{handle.input_hw[1]}")
    print(f"runs   : {stats['runs']} (warmup {stats['warmup']})")
    print(f"avg execute time (ms) : {stats['avg_ms']:.2f}")
    print(f"p50 (ms)              : {stats['p50_ms']:.2f}")
    print(f"p95 (ms)              : {stats['p95_ms']:.2f}")
    return 0


def cmd_synth(args) -> int:
    index = synth_dataset(args.classes, args.per_class, args.size, args.seed)
    save_synth_dataset(index, args.out_dir)
    print(f"{len(index)} images in {args.classes} classes -> {args.out_dir}")
    return 0


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="floranet",
                     description="CNN flower-classification toolkit")
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_data(p):
        p.add_argument("--data", required=True,
                       help="dataset root directory or synth:<C>x<N>x<S>")

    p = sub.add_parser("train", parents=[], help="train one model",
                       description="Train one architecture and write a checkpoint. "
                       "Directory datasets are split 80/10/10; synth: data is "
                       "trained on in full.")
    p.add_argument("--arch", required=True, choices=ARCH_NAMES)
    add_data(p)
    p.add_argument("--optimizer", default="sgd", choices=OPTIMIZER_KINDS)
    p.add_argument("--lr", type=float, default=None,
                   help="learning rate (default: per-optimizer)")
    p.add_argument("--freeze", type=float, default=0.0,
                   help="freeze ratio in [0, 1) (default 0)")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--head", default="gap", choices=HEADS)
    p.add_argument("--input-size", type=int, default=None,
                   help="square input side (default: per-architecture)")
    p.add_argument("--augment", action="store_true",
                   help="apply the standard augmentation ranges")
    p.add_argument("--out", default="model.ckpt", help="checkpoint output path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="optimizer x freeze-ratio grid",
                       description="Train every grid cell from one seed and "
                       "tabulate test metrics.")
    p.add_argument("--archs", required=True, help="comma-separated architectures")
    p.add_argument("--optimizers", default="all",
                   help=f"comma-separated kinds or 'all' ({', '.join(OPTIMIZER_KINDS)})")
    p.add_argument("--freezes", default="0", help="comma-separated ratios")
    p.add_argument("--heads", default="gap", help="comma-separated heads")
    add_data(p)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--input-size", type=int, default=None)
    p.add_argument("--out", default="sweep.csv", help="output table path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    add_data(p)
    p.add_argument("--split", default="all", choices=("all", "train", "val", "test"),
                   help="evaluate on one 80/10/10 split part (default: all)")
    p.add_argument("--seed", type=int, default=0, help="split seed")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--dump-misclassified", default=None,
                   help="write misclassified samples to this path")
    p.add_argument("--report-dir", default=None,
                   help="write metrics.txt and confusion_matrix.png here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("paramcount", help="layer/parameter accounting")
    p.add_argument("--arch", required=True, choices=ARCH_NAMES)
    p.add_argument("--head", default="gap", choices=HEADS)
    p.add_argument("--classes", type=int, default=16)
    p.add_argument("--freeze", type=float, default=0.0)
    p.add_argument("--input-size", type=int, default=None)
    p.set_defaults(func=cmd_paramcount)

    p = sub.add_parser("serve", help="run the HTTP inference service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("bench", help="forward-pass latency statistics")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--warmup", type=int, default=10)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="materialize a synthetic dataset to disk")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    return parser


def _setup_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO,
             "debug": logging.DEBUG}.get(os.environ.get("FLORA_LOG", "info"), logging.INFO)
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def dispatch(argv: list[str]) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        exc.parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    _print_config(args.verb, args)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 2
    except Exception as exc:
        log.error("%s", exc, exc_info=os.environ.get("FLORA_LOG") == "debug")
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
