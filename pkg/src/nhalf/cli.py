"""Command-line front end: compile, infer, eval, inspect, stats.

Exit codes: 0 success, 1 operational failure, 2 usage or input errors.
stdout carries machine-parseable CSV or key=value lines only; warnings and
diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import engine, io, model as model_mod
from .errors import InputError, NHalfError

RECOMMENDED_CLIP = 31


def _default_threads() -> int:
    env = os.environ.get("NHALF_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _print_report(fused: model_mod.FusedModel) -> None:
    print("block,kind,taps,accumulator_bits,stored_activation_bits,threshold_bits")
    for row in fused.report.blocks:
        print(
            f"{row.index},{row.kind},{row.taps},{row.accumulator_bits},"
            f"{row.stored_activation_bits},{row.threshold_bits}"
        )
    print(f"float_op_count={fused.report.float_op_count}")
    print(f"boundary_ties={fused.boundary_tie_count}")


def cmd_compile(args) -> int:
    path = Path(args.checkpoint)
    if not path.is_file():
        print(f"error: checkpoint not found: {path}", file=sys.stderr)
        return 2
    ckpt = io.load_checkpoint(path)
    if args.clip is not None:
        if args.clip < RECOMMENDED_CLIP:
            print(
                f"warning: clip {args.clip} is small; accuracy degrades sharply "
                f"below clip {RECOMMENDED_CLIP}",
                file=sys.stderr,
            )
        ckpt = model_mod.with_clip(ckpt, args.clip)
    fused = model_mod.compile_checkpoint(ckpt)
    io.save_fused(fused, args.output)
    _print_report(fused)
    if fused.boundary_tie_count:
        print(
            f"note: {fused.boundary_tie_count} channel branch(es) quantized a "
            "zero crossing that sits on an integer boundary",
            file=sys.stderr,
        )
    return 0


def cmd_infer(args) -> int:
    path = Path(args.model)
    if not path.is_file():
        print(f"error: model not found: {path}", file=sys.stderr)
        return 2
    fused = io.load_fused(path)
    cfg = engine.PreprocessConfig(target_size=fused.config.input_size)
    successes = 0
    for image_path in args.images:
        try:
            scores = engine.forward_fused(fused, engine.preprocess(image_path, cfg))
        except NHalfError as exc:
            print(f"error: {image_path}: {exc}", file=sys.stderr)
            continue
        successes += 1
        top = ";".join(f"{c}:{s}" for c, s in scores.top(3))
        print(f"{image_path},{scores.predicted},{top}")
    return 0 if successes else 1


def cmd_eval(args) -> int:
    model_path = Path(args.model)
    if not model_path.is_file():
        print(f"error: model not found: {model_path}", file=sys.stderr)
        return 2
    if not Path(args.manifest).is_file():
        print(f"error: manifest not found: {args.manifest}", file=sys.stderr)
        return 2
    fused = io.load_fused(model_path)
    result = engine.evaluate(fused, args.manifest, threads=args.threads)
    for line in result.errors:
        print(f"warning: skipped {line}", file=sys.stderr)
    print(f"total={result.total}")
    print(f"correct={result.correct}")
    print(f"skipped={result.skipped}")
    print(f"accuracy={result.accuracy:.6f}")
    print(f"float_ops={result.counters.float_ops}")
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            fh.write(",".join(str(c) for c in range(fused.config.class_count)) + "\n")
            for row in result.confusion:
                fh.write(",".join(str(int(v)) for v in row) + "\n")
    return 0


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if not path.is_file():
        print(f"error: file not found: {path}", file=sys.stderr)
        return 2
    kind = io.sniff_container(path)
    if kind == "checkpoint":
        config = io.load_checkpoint(path).config
        print("container=checkpoint")
    else:
        fused = io.load_fused(path)
        config = fused.config
        print("container=fused")
    per_block, total = model_mod.count_params(config)
    print("block,kind,weights")
    for i, (spec, count) in enumerate(zip(config.blocks, per_block)):
        print(f"{i},{spec.kind},{count}")
    report = model_mod.storage_report(config)
    print(f"params_total={total}")
    print(f"clip={config.clip}")
    print(f"weight_kib={report.weight_kib:.2f}")
    if args.stated_params:
        stated = model_mod.storage_report(config, param_count=args.stated_params)
        print(f"stated_params={args.stated_params}")
        print(f"stated_weight_kib={stated.weight_kib:.2f}")
    print(f"threshold_table_bytes={report.threshold_table_bytes}")
    print(f"float32_equivalent_kib={report.float32_kib:.2f}")
    print(f"float32_ratio={report.float32_ratio:g}")
    print(f"int8_ratio={report.int8_ratio:g}")
    print(f"stored_activation_bits={report.activation_bits}")
    print(f"intermediate_ratio={report.intermediate_ratio:g}")
    if kind == "fused":
        _print_report(fused)
    return 0


def cmd_stats(args) -> int:
    for name, p in (("model", args.model), ("checkpoint", args.checkpoint)):
        if not Path(p).is_file():
            print(f"error: {name} not found: {p}", file=sys.stderr)
            return 2
    fused = io.load_fused(args.model)
    ckpt = io.load_checkpoint(args.checkpoint)
    cfg = engine.PreprocessConfig(target_size=fused.config.input_size)
    image_dir = Path(args.images)
    if image_dir.is_dir():
        paths = sorted(p for p in image_dir.iterdir() if p.is_file())
    else:
        paths = [image_dir]
    samples = []
    for p in paths:
        try:
            samples.append(engine.preprocess(p, cfg))
        except InputError as exc:
            print(f"warning: skipped {p}: {exc}", file=sys.stderr)
    if not samples:
        print("error: no readable sample images", file=sys.stderr)
        return 2
    series = engine.distribution_stats(fused, ckpt, samples)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            engine.write_stats_csv(series, fh)
    else:
        engine.write_stats_csv(series, sys.stdout)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nhalf",
        description="Integer-only inference engine and fusion compiler for the N+Half BNN",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=_default_threads(),
        help="worker threads for evaluation (env NHALF_THREADS)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="fold a checkpoint into a fused model")
    p.add_argument("checkpoint")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--clip", type=int, default=None, help="override the HardTanh bound")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("infer", help="classify images with a fused model")
    p.add_argument("model")
    p.add_argument("images", nargs="+")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="evaluate a fused model over a manifest")
    p.add_argument("model")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="write the confusion matrix CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="report sizes and bit widths of a container")
    p.add_argument("path")
    p.add_argument(
        "--stated-params",
        type=int,
        default=None,
        help="also report sizes for this externally stated parameter count",
    )
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("stats", help="emit distribution histograms as CSV")
    p.add_argument("model")
    p.add_argument("checkpoint")
    p.add_argument("images", help="sample image file or directory")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NHalfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
