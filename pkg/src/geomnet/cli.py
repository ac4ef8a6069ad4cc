"""``geomnet`` command-line entry point.

Exit codes: 0 success, 1 usage error, 2 I/O or format error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import CLASS_NAMES, gradcheck
from .errors import ConfigError, ContractError, FormatError, GenerationError
from .model import load_checkpoint, predict, save_checkpoint
from .shapegen import build_datasets, read_idx, read_images, images_path, write_idx
from .train import TrainConfig, evaluate, metrics_csv, train

log = logging.getLogger("geomnet")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_VERIFY = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _counts_line(name, ds):
    counts = " ".join(f"{c}={k}" for c, k in zip(CLASS_NAMES, ds.class_counts()))
    return f"{name}: N={len(ds)} {counts}"


def cmd_gen(args):
    train_set, test_set = build_datasets(args.seed, n_test=args.n_test, aug_factor=args.aug_factor,
                                         holdout=args.holdout)
    write_idx(train_set, args.out, "train")
    write_idx(test_set, args.out, "test")
    print(_counts_line("train", train_set))
    print(_counts_line("test", test_set))
    return EXIT_OK


def cmd_train(args):
    config = TrainConfig(epochs=args.epochs, lr=args.lr, momentum=args.momentum, batch_size=args.batch_size,
                         seed=args.seed, activation=args.activation)
    train_set = read_idx(args.data, "train")
    test_path = images_path(args.data, "test")
    test_set = read_idx(args.data, "test") if test_path.exists() else None
    model, metrics = train(config, train_set, test_set)
    save_checkpoint(model, args.model)
    Path(args.metrics).write_text(metrics_csv(metrics), newline="\n")
    last = [m for m in metrics if m.epoch == config.epochs]
    for m in last:
        print(f"epoch {m.epoch} {m.split}: loss {m.mean_loss:.6f} accuracy {m.accuracy:.6f}")
    return EXIT_OK


def cmd_eval(args):
    model = load_checkpoint(args.model)
    dataset = read_idx(args.data, args.split)
    _, accuracy, confusion = evaluate(model, dataset)
    print(json.dumps({"accuracy": accuracy, "confusion": confusion.tolist()}))
    return EXIT_OK


def cmd_predict(args):
    model = load_checkpoint(args.model)
    path = Path(args.data)
    images = read_images(images_path(path, args.split) if path.is_dir() else path)
    if not 0 <= args.index < len(images):
        log.error("index %d out of range for %d images", args.index, len(images))
        return EXIT_USAGE
    label, probs = predict(model, images[args.index])
    print(CLASS_NAMES[label])
    print(" ".join(f"{name}={p:.6f}" for name, p in zip(CLASS_NAMES, probs)))
    return EXIT_OK


def cmd_gradcheck(args):
    failed = []
    for r in gradcheck.run_all(args.seed):
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name:<24} max_rel_error={r.max_rel_error:.3e} checked={r.checked} skipped={r.skipped}")
        if not r.passed:
            failed.append(r.name)
    if failed:
        log.error("gradient check failed for: %s", ", ".join(failed))
        return EXIT_VERIFY
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="geomnet", description="LeNet-5 triangle/circle/square classifier.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate the IDX dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--n-test", type=int, default=300)
    p.add_argument("--aug-factor", type=int, default=7)
    p.add_argument("--holdout", action="store_true", help="train on fresh images instead of augmented test images")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train LeNet-5, write a checkpoint and metrics CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--model", default="model.geo")
    p.add_argument("--metrics", default="metrics.csv")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--activation", choices=("relu", "tanh"), default="relu")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy and confusion matrix as JSON")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one image")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="images IDX file, or a dataset directory")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--index", type=int, default=0)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, GenerationError) as e:
        log.error("%s", e)
        return EXIT_USAGE
    except (OSError, FormatError, ContractError) as e:
        log.error("%s", e)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
