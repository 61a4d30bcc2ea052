"""nhalf-train: toy-dataset generation, training, checkpoint export, clip sweep."""

from __future__ import annotations

import argparse
import sys

from .config import TrainConfig, paper_architecture, toy_architecture
from .data import load_split, make_toy_dataset, manifest_from_directory
from .export import ExportError, export_checkpoint
from .train import TrainError, sweep_clip, train, write_metrics, write_sweep


def _load(args, architecture):
    train_data = load_split(args.train_manifest, architecture.input_size)
    test_data = load_split(args.test_manifest, architecture.input_size)
    return train_data, test_data


def _config(args) -> TrainConfig:
    arch = paper_architecture(args.classes, args.clip) if args.arch == "paper" else toy_architecture(args.classes, args.clip)
    return TrainConfig(
        architecture=arch,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        use_clip=not args.no_clip,
        use_half_block=not args.no_half_block,
        seed=args.seed,
    )


def cmd_toy(args) -> int:
    train_manifest, test_manifest = make_toy_dataset(
        args.out, per_class=args.per_class, noise=args.noise, seed=args.seed
    )
    print(f"train_manifest={train_manifest}")
    print(f"test_manifest={test_manifest}")
    return 0


def cmd_manifest(args) -> int:
    out = manifest_from_directory(args.dir, args.out)
    print(f"manifest={out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    train_data, test_data = _load(args, cfg.architecture)
    result = train(cfg, train_data, test_data)
    if args.metrics:
        write_metrics(result.metrics, args.metrics)
    for m in result.metrics:
        print(f"epoch={m.epoch} train_acc={m.train_acc:.4f} test_acc={m.test_acc:.4f} loss={m.loss:.4f}")
    print(f"best_test_acc={result.best_test_acc:.4f}")
    if args.out:
        try:
            export_checkpoint(result.net, args.out)
        except ExportError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        print(f"checkpoint={args.out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    train_data, test_data = _load(args, cfg.architecture)
    clips = [int(c) for c in args.clips.split(",")]
    rows = sweep_clip(cfg, train_data, test_data, clips)
    write_sweep(rows, args.out)
    for clip, train_acc, test_acc in rows:
        print(f"clip={clip} train_acc={train_acc:.4f} test_acc={test_acc:.4f}")
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--test-manifest", required=True)
    p.add_argument("--arch", choices=["toy", "paper"], default="toy")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--clip", type=int, default=31)
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--no-clip", action="store_true", help="disable HardTanh (RH toggle)")
    p.add_argument("--no-half-block", action="store_true", help="full final block (IB toggle)")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nhalf-train")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toy", help="generate the synthetic 3-class dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--noise", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser("manifest", help="build a manifest from a directory-per-class tree")
    p.add_argument("--dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_manifest)

    p = sub.add_parser("train", help="train and export a checkpoint")
    _add_common(p)
    p.add_argument("--out", default=None, help="checkpoint output path (.nhb)")
    p.add_argument("--metrics", default=None, help="metrics CSV output path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train once per clip value")
    _add_common(p)
    p.add_argument("--clips", default="8,15,31,63")
    p.add_argument("--out", required=True, help="sweep CSV output path")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (TrainError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
