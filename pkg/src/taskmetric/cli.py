"""Command-line entry point.

Subcommands: train, eval, verify-lemma, sweep-alpha, split-fc100,
report-ten. All artifacts are CSV or plain text, written atomically.
Exit codes: 0 success, 1 usage error, 2 runtime or numerical failure.
The environment variable TASKMETRIC_DATA overrides the dataset directory.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import List, Optional

import numpy as np

from . import data as datamod
from . import training
from .autodiff import NumericalError
from .config import ConfigError, RunConfig, load_config
from .data import (atomic_write_text, fc100_split, load_cifar100,
                   load_checkpoint, save_checkpoint, synth_dataset)
from .model import FewShotModel
from .verify import LARGE_ALPHAS, SMALL_ALPHAS, lemma_report


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _data_dir(flag_value: Optional[str], cfg_path: str = "") -> str:
    path = flag_value or os.environ.get("TASKMETRIC_DATA") or cfg_path
    if not path:
        raise UsageError("no data directory (use --data or TASKMETRIC_DATA)")
    return path


def build_splits(cfg: RunConfig, data_flag: Optional[str] = None):
    if cfg.data.source == "synth":
        _, splits = synth_dataset(cfg.data.synth)
        return splits
    path = _data_dir(data_flag, cfg.data.path)
    store = load_cifar100(path, downsample_to=cfg.data.downsample or None)
    return fc100_split(store)


def build_model(cfg: RunConfig, train_split=None) -> FewShotModel:
    aux_classes = None
    if cfg.train.aux_enabled:
        if train_split is None:
            raise UsageError("aux co-training needs a training split")
        aux_classes = len(train_split.class_ids)
    return FewShotModel.build(cfg.extractor, head=cfg.head,
                              use_ten=cfg.use_ten, aux_classes=aux_classes,
                              ten_l2=cfg.ten_l2, seed=cfg.model_seed)


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    print(cfg.echo())
    splits = build_splits(cfg, args.data)
    model = build_model(cfg, splits["train"])
    model, log = training.train(model, cfg.train, splits["train"], splits["val"])
    os.makedirs(args.out_dir, exist_ok=True)
    log.to_csv(os.path.join(args.out_dir, "metrics.csv"))
    save_checkpoint(model, os.path.join(args.out_dir, "model.ckpt"),
                    train_config=cfg.train.__dict__.copy())
    best = max((r.val_acc for r in log.rows), default=float("nan"))
    print(f"best validation accuracy: {best:.4f}")
    print(f"artifacts written to {args.out_dir}")
    return 0


def _cmd_eval(args) -> int:
    cfg = load_config(args.config)
    splits = build_splits(cfg, args.data)
    model = load_checkpoint(args.checkpoint)
    rng = np.random.default_rng(args.seed)
    acc, ci, _ = training.evaluate(model, splits[args.split], cfg.train.k_ways,
                                   cfg.train.m_shots, n_tasks=args.tasks,
                                   n_queries=args.queries,
                                   restarts=args.restarts, rng=rng)
    print(f"{args.split} accuracy: {acc:.4f} +/- {ci:.4f} "
          f"({args.tasks} tasks x {args.restarts} restarts)")
    return 0


def _cmd_verify_lemma(args) -> int:
    rows = lemma_report(args.trials, args.seed)
    lines = ["trial,alpha,side,rel_error"]
    for trial, alpha, side, err in rows:
        lines.append(f"{trial},{alpha:g},{side},{err:.6e}")
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    worst_small = max(e for _, a, s, e in rows
                      if s == "small" and a == min(SMALL_ALPHAS))
    worst_large = max(e for _, a, s, e in rows
                      if s == "large" and a == max(LARGE_ALPHAS))
    print(f"report written to {args.out}")
    print(f"worst small-side error at alpha={min(SMALL_ALPHAS):g}: {worst_small:.3e}")
    print(f"worst large-side error at alpha={max(LARGE_ALPHAS):g}: {worst_large:.3e}")
    if worst_small > 1e-3 or worst_large > 1e-3:
        print("limit verification FAILED", file=sys.stderr)
        return 2
    return 0


def _cmd_sweep_alpha(args) -> int:
    cfg = load_config(args.config)
    splits = build_splits(cfg, args.data)
    grid = [float(a) for a in args.grid.split(",") if a]

    def make_model(alpha: float) -> FewShotModel:
        model = build_model(cfg, splits["train"])
        model.set_alpha(alpha)
        return model

    rows = training.sweep_alpha(make_model, cfg.train, splits["train"],
                                splits["val"], grid,
                                n_eval_tasks=args.eval_tasks,
                                train_each=not args.no_train)
    lines = ["alpha,val_acc,val_ci"]
    for alpha, acc, ci in rows:
        lines.append(f"{alpha:g},{acc:.6f},{ci:.6f}")
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    best = training.sweep_argmax(rows)
    print(f"sweep written to {args.out}")
    print(f"best alpha: {best[0]:g} (val acc {best[1]:.4f} +/- {best[2]:.4f})")
    return 0


def _cmd_split_fc100(args) -> int:
    store = load_cifar100(_data_dir(args.data))
    splits = fc100_split(store)
    datamod.export_split_manifest(splits, args.out)
    sizes = {name: len(split.class_ids) for name, split in splits.items()}
    print(f"manifest written to {args.out} "
          f"(train/val/test classes: {sizes['train']}/{sizes['val']}/{sizes['test']})")
    return 0


def _cmd_report_ten(args) -> int:
    model = load_checkpoint(args.checkpoint)
    report = model.ten_magnitude_report()
    lines = ["layer,abs_gamma0,abs_beta0"]
    for i, (g, b) in enumerate(report):
        lines.append(f"{i},{g:.6e},{b:.6e}")
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    print(f"report written to {args.out} ({len(report)} conditioned layers)")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="taskmetric")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--out-dir", default="runs")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--tasks", type=int, default=500)
    p.add_argument("--queries", type=int, default=100)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("verify-lemma",
                       help="check the temperature-limit gradients numerically")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="lemma_report.csv")
    p.set_defaults(func=_cmd_verify_lemma)

    p = sub.add_parser("sweep-alpha", help="cross-validate the temperature")
    p.add_argument("--config", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--grid", default="0.01,0.1,1,10,100")
    p.add_argument("--eval-tasks", type=int, default=500)
    p.add_argument("--no-train", action="store_true",
                   help="evaluate fresh models without training (cheap mode)")
    p.add_argument("--out", default="alpha_sweep.csv")
    p.set_defaults(func=_cmd_sweep_alpha)

    p = sub.add_parser("split-fc100",
                       help="export the superclass split manifest")
    p.add_argument("--data", default=None)
    p.add_argument("--out", default="manifest.csv")
    p.set_defaults(func=_cmd_split_fc100)

    p = sub.add_parser("report-ten",
                       help="per-layer conditioning post-multiplier magnitudes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default="ten_report.csv")
    p.set_defaults(func=_cmd_report_ten)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (UsageError, ConfigError) as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except (NumericalError, training.TrainingDivergedError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 2
    except (OSError, ValueError, datamod.FormatError,
            datamod.CheckpointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
