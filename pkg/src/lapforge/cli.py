"""``lapforge`` command line: generate, train, solve, bench (alias eval).

Exit codes: 0 success, 1 usage error, 2 bad or missing data, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .bench import (
    METHODS,
    BenchReport,
    ablation_suite,
    environment_echo,
    evaluate_method,
    generalization_suite,
    load_bench_config,
    make_solver,
    runtime_profile,
)
from .core import matrix_to_permutation, total_cost
from .datagen import DatasetFormatError, DatasetSpec, default_filename, generate, load, parse_record, save, scale_values, split
from .losses import LossConfig
from .model import ModelConfig
from .solvers import DegenerateInstanceError, SinkhornConfig
from .trainer import CheckpointError, TrainConfig, TrainingError, load_checkpoint, save_checkpoint, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("lapforge")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_sizes(text: str) -> tuple[int, ...]:
    """``"10:150:10"`` (inclusive range) or ``"10,20,40"``."""
    try:
        if ":" in text:
            parts = [int(x) for x in text.split(":")]
            if len(parts) == 2:
                parts.append(1)
            lo, hi, step = parts
            if step < 1 or hi < lo:
                raise ValueError
            return tuple(range(lo, hi + 1, step))
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size list {text!r}; use lo:hi:step or a,b,c") from None


def resolve_threads(value: int | None) -> int:
    if value is not None:
        return max(1, value)
    env = os.environ.get("LAPFORGE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"LAPFORGE_THREADS must be an integer, got {env!r}") from None
    return 1


def default_config() -> dict:
    return {
        "dataset": {**asdict(DatasetSpec()), "sizes": list(DatasetSpec().sizes), "eval_fraction": 0.3},
        "model": ModelConfig().to_dict(),
        "train": TrainConfig().to_dict(),
        "loss": asdict(LossConfig()),
        "sinkhorn": asdict(SinkhornConfig()),
    }


# --- subcommands ------------------------------------------------------------


def cmd_generate(args) -> int:
    spec = DatasetSpec(
        sizes=args.sizes,
        samples_per_size=args.per_size,
        value_upper_bound=args.upper,
        seed=args.seed,
    )
    data = generate(spec, threads=args.threads)
    if args.scale_values:
        data = scale_values(data, seed=args.seed)
    out = Path(args.out)
    if out.is_dir():
        out = out / default_filename(spec)
    save(data, out)
    print(f"wrote {len(data)} records to {out} (sha256 {data.digest()[:16]})")
    return EXIT_OK


def _model_cfg(args) -> ModelConfig:
    return ModelConfig(
        latent_dim=args.latent_dim,
        conv_iterations=args.conv_iters,
        t=args.t,
        hidden_width=args.hidden_width,
        ablate_channel_attention=args.ablate_attention,
        ablate_aggregation_weights=args.ablate_weights,
        cost_scaling=args.cost_scaling,
    )


def _train_cfg(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        lr_initial=args.lr,
        lr_decay=args.lr_decay,
        alpha_step=args.alpha_step,
        w=args.w,
        use_l1=not args.no_l1,
        use_l2=not args.no_l2,
        seed=args.seed,
    )


def cmd_train(args) -> int:
    data = load(args.data)
    train_set, eval_set = split(data, args.eval_fraction, seed=args.split_seed)
    out = Path(args.out)
    history_path = Path(args.history) if args.history else out.with_name(out.name + ".history.jsonl")
    resume = load_checkpoint(args.resume) if args.resume else None

    def on_epoch(ckpt):
        save_checkpoint(ckpt, out)
        with history_path.open("w", encoding="utf-8") as fh:
            for row in ckpt.history:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        row = ckpt.history[-1]
        print(
            f"epoch {row['epoch']:2d}  lr {row['lr']:.6g}  alpha {row['alpha']:.2f}  "
            f"loss {row['mean_loss']:.4f}  eval {row['eval_precision']}"
        )

    train(
        train_set,
        eval_set,
        _model_cfg(args),
        _train_cfg(args),
        resume=resume,
        stop_after_epoch=args.stop_after,
        on_epoch_end=on_epoch,
    )
    print(f"checkpoint: {out}\nhistory: {history_path}")
    return EXIT_OK


def _read_matrix(path) -> np.ndarray:
    lines = [ln for ln in Path(path).read_text(encoding="ascii").splitlines() if ln.strip() and not ln.startswith("#")]
    if len(lines) != 1:
        raise DatasetFormatError(f"{path}: expected exactly one record, found {len(lines)}")
    return parse_record(lines[0], 1, require_label=False).cost


def cmd_solve(args) -> int:
    C = _read_matrix(args.input)
    methods = list(METHODS) if args.method == "all" else [args.method]
    params = None
    if "glan" in methods:
        if not args.checkpoint:
            if args.method == "glan":
                raise UsageError("--method glan needs --checkpoint")
            methods.remove("glan")
        else:
            params = load_checkpoint(args.checkpoint).params
    for method in methods:
        X = make_solver(method, params, seed=args.seed)(C, 0)
        perm = matrix_to_permutation(X)
        print(f"{method}: {' '.join(str(int(j)) for j in perm)}  cost {total_cost(C, X):.17g}")
    return EXIT_OK


BENCH_DEFAULTS = {
    "suite": "precision",
    "methods": ["sinkhorn"],
    "repeats": 3,
    "seed": 0,
    "sizes": (200, 300, 400),
    "per_size": 20,
    "epochs": TrainConfig().epochs,
    "eval_fraction": 0.3,
}


def _merge_bench_args(args) -> None:
    """Explicit flags win over the config file, which wins over defaults."""
    cfg = load_bench_config(args.config) if args.config else {}
    if "sizes" in cfg:
        cfg["sizes"] = parse_sizes(cfg["sizes"])
    if "threads" in cfg and args.threads is None:
        args.threads = cfg["threads"]
    for key in ("dataset", "checkpoint", "out", *BENCH_DEFAULTS):
        if getattr(args, key, None) is None:
            setattr(args, key, cfg.get(key, BENCH_DEFAULTS.get(key)))
    bad = [m for m in args.methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown method(s) {bad}; choose from {list(METHODS)}")


def cmd_bench(args) -> int:
    threads = args.threads
    sh_cfg = SinkhornConfig()
    params = load_checkpoint(args.checkpoint).params if args.checkpoint else None
    suite = args.suite

    if suite == "precision":
        if not args.dataset:
            raise UsageError("bench --suite precision needs --dataset")
        data = load(args.dataset)
        report = BenchReport("precision by size")
        for method in args.methods:
            if method == "glan" and params is None:
                raise UsageError("method glan needs --checkpoint")
            report.rows += evaluate_method(
                method, data, params, sh_cfg, seed=args.seed, repeats=args.repeats, max_size=args.max_size
            )
        report.provenance = {
            "dataset": {"path": str(args.dataset), "sha256": data.digest()},
            "checkpoint": args.checkpoint,
            "sinkhorn_config": asdict(sh_cfg),
            "model_config": params.config.to_dict() if params else None,
            "environment": environment_echo(threads),
        }
    elif suite == "runtime":
        report = BenchReport("runtime by size")
        for method in args.methods:
            if method == "glan" and params is None:
                raise UsageError("method glan needs --checkpoint")
            report.rows += runtime_profile(method, args.sizes, params, args.per_size, args.repeats, args.seed, sh_cfg)
        report.provenance = {"sizes": list(args.sizes), "environment": environment_echo(threads)}
    elif suite == "ablation":
        if not args.dataset:
            raise UsageError("bench --suite ablation needs --dataset")
        data = load(args.dataset)
        train_set, eval_set = split(data, args.eval_fraction, seed=args.seed)
        report = ablation_suite(train_set, eval_set, ModelConfig(), TrainConfig(epochs=args.epochs, seed=args.seed), args.seed)
        report.provenance["dataset"] = {"path": str(args.dataset), "sha256": data.digest()}
    elif suite == "generalization":
        if params is None:
            raise UsageError("bench --suite generalization needs --checkpoint")
        base = None
        if args.dataset:
            base = split(load(args.dataset), args.eval_fraction, seed=args.seed)[1]
        report = generalization_suite(
            params,
            large_sizes=args.sizes,
            samples_per_size=args.per_size,
            seed=args.seed,
            base_dataset=base,
            sinkhorn_cfg=sh_cfg,
            threads=threads,
        )
    else:  # pragma: no cover - argparse restricts choices
        raise UsageError(f"unknown suite {suite}")

    print(report.render(), end="")
    if args.out:
        tsv, txt = report.write(args.out)
        print(f"report: {tsv} {txt}")
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def _add_model_flags(p):
    d = ModelConfig()
    p.add_argument("--t", type=int, default=d.t, help="edges kept per agent")
    p.add_argument("--conv-iters", type=int, default=d.conv_iterations)
    p.add_argument("--latent-dim", type=int, default=d.latent_dim)
    p.add_argument("--hidden-width", type=int, default=d.hidden_width)
    p.add_argument("--cost-scaling", choices=("retained_mean", "max", "none"), default=d.cost_scaling)
    p.add_argument("--ablate-attention", action="store_true")
    p.add_argument("--ablate-weights", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    tc = TrainConfig()
    parser = _Parser(prog="lapforge", description="Learned and classical linear assignment solvers.")
    parser.add_argument("--show-config", action="store_true", help="print default settings as JSON and exit")
    parser.add_argument("--threads", type=int, default=None, help="worker cap (default: $LAPFORGE_THREADS or 1)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--sizes", type=parse_sizes, default=DatasetSpec().sizes)
    g.add_argument("--per-size", type=int, default=DatasetSpec().samples_per_size)
    g.add_argument("--upper", type=float, default=1.0, help="costs drawn from uniform(0, upper)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--scale-values", action="store_true", help="multiply each matrix by a factor in [1, 10)")
    g.add_argument("--out", required=True, help="file, or directory for the default name")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model on a dataset file")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path, rewritten after every epoch")
    t.add_argument("--history", help="JSON-lines history (default: <out>.history.jsonl)")
    t.add_argument("--eval-fraction", type=float, default=0.3)
    t.add_argument("--split-seed", type=int, default=0)
    t.add_argument("--seed", type=int, default=tc.seed)
    t.add_argument("--epochs", type=int, default=tc.epochs)
    t.add_argument("--lr", type=float, default=tc.lr_initial)
    t.add_argument("--lr-decay", type=float, default=tc.lr_decay)
    t.add_argument("--alpha-step", type=float, default=tc.alpha_step)
    t.add_argument("--w", type=float, default=tc.w, help="positive-class weight")
    t.add_argument("--no-l1", action="store_true")
    t.add_argument("--no-l2", action="store_true")
    t.add_argument("--resume", help="continue from this checkpoint")
    t.add_argument("--stop-after", type=int, help="stop once this many epochs are done")
    _add_model_flags(t)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("solve", help="solve one matrix file")
    s.add_argument("input")
    s.add_argument("--method", choices=(*METHODS, "all"), default="hungarian")
    s.add_argument("--checkpoint")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_solve)

    for name in ("bench", "eval"):
        # defaults live in BENCH_DEFAULTS so a --config file can fill unset flags
        b = sub.add_parser(name, help="run an evaluation suite")
        b.add_argument("--config", help="key = value benchmark config file")
        b.add_argument("--suite", choices=("precision", "runtime", "ablation", "generalization"))
        b.add_argument("--dataset")
        b.add_argument("--checkpoint")
        b.add_argument("--methods", type=lambda x: [m.strip() for m in x.split(",") if m.strip()])
        b.add_argument("--repeats", type=int)
        b.add_argument("--seed", type=int)
        b.add_argument("--sizes", type=parse_sizes)
        b.add_argument("--per-size", type=int)
        b.add_argument("--epochs", type=int)
        b.add_argument("--eval-fraction", type=float)
        b.add_argument("--max-size", type=int)
        b.add_argument("--out", help="write <out>.tsv and <out>.txt")
        b.set_defaults(func=cmd_bench)
    for p in {*sub.choices.values()}:
        # accepted after the subcommand too; SUPPRESS keeps a global value intact
        p.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker cap")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.show_config:
        print(json.dumps(default_config(), indent=2, sort_keys=True))
        return EXIT_OK
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        if args.func is cmd_bench:
            _merge_bench_args(args)
        args.threads = resolve_threads(args.threads)
        return args.func(args)
    except UsageError as exc:
        print(f"lapforge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetFormatError, CheckpointError, FileNotFoundError, IsADirectoryError, UnicodeDecodeError) as exc:
        print(f"lapforge: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, DegenerateInstanceError, FloatingPointError) as exc:
        print(f"lapforge: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"lapforge: invalid input: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
