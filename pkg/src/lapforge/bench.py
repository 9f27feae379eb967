"""Evaluation harness: per-size precision tables plus timing and model studies.

Timings cover the whole solve, from raw cost matrix to permutation
(graph construction and rounding included).  Data loading is never timed.
"""
from __future__ import annotations

import csv
import io
import json
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from .core import greedy_discretize, permutation_to_matrix, precision, total_cost
from .datagen import Dataset, DatasetSpec, generate, scale_values
from .model import ModelConfig, ModelParameters, forward
from .solvers import SinkhornConfig, hungarian_permutation, sinkhorn
from .trainer import TrainConfig, train

__all__ = [
    "METHODS",
    "BenchRow",
    "BenchReport",
    "make_solver",
    "evaluate_method",
    "runtime_profile",
    "ablation_variants",
    "ablation_suite",
    "generalization_suite",
    "load_bench_config",
    "environment_echo",
]

METHODS = ("glan", "sinkhorn", "hungarian", "random")

TIMING_NOTE = (
    "time_ms: per-instance median over repeated end-to-end solves, averaged per size; "
    "graph construction and rounding are timed, data loading is not"
)


@dataclass(frozen=True)
class BenchRow:
    size: int
    method: str
    precision: float
    time_ms: float
    samples: int
    variant: str = ""
    part: str = ""


@dataclass
class BenchReport:
    title: str
    rows: list[BenchRow] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    FIELDS = ("part", "variant", "method", "size", "samples", "precision", "time_ms")

    def mean_precision(self, method: str | None = None, variant: str | None = None, part: str | None = None) -> float:
        """Unweighted mean of per-size precisions over the selected rows."""
        sel = [
            r.precision
            for r in self.rows
            if (method is None or r.method == method)
            and (variant is None or r.variant == variant)
            and (part is None or r.part == part)
        ]
        return float(np.mean(sel)) if sel else float("nan")

    def precision_figures(self) -> list[tuple]:
        return [(r.part, r.variant, r.method, r.size, r.precision) for r in self.rows]

    def to_delimited(self, delimiter: str = "\t") -> str:
        buf = io.StringIO()
        for key, value in self.provenance.items():
            buf.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
        writer = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
        writer.writerow(self.FIELDS)
        for r in self.rows:
            writer.writerow([r.part, r.variant, r.method, r.size, r.samples, repr(r.precision), f"{r.time_ms:.4f}"])
        return buf.getvalue()

    def render(self) -> str:
        header = ["part", "variant", "method", "n", "samples", "precision %", "time ms"]
        body = [
            [r.part or "-", r.variant or "-", r.method, str(r.size), str(r.samples), f"{100 * r.precision:.1f}", f"{r.time_ms:.2f}"]
            for r in self.rows
        ]
        widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(header)]
        lines = [self.title, "  ".join(h.rjust(w) for h, w in zip(header, widths))]
        lines.append("  ".join("-" * w for w in widths))
        lines += ["  ".join(c.rjust(w) for c, w in zip(b, widths)) for b in body]
        lines.append("")
        lines.append(TIMING_NOTE)
        for key, value in self.provenance.items():
            lines.append(f"{key}: {json.dumps(value, sort_keys=True)}")
        return "\n".join(lines) + "\n"

    def write(self, prefix) -> tuple[Path, Path]:
        """Write ``<prefix>.tsv`` and ``<prefix>.txt``."""
        prefix = Path(prefix)
        tsv = prefix.with_name(prefix.name + ".tsv")
        txt = prefix.with_name(prefix.name + ".txt")
        tsv.write_text(self.to_delimited(), encoding="utf-8")
        txt.write_text(self.render(), encoding="utf-8")
        return tsv, txt


def environment_echo(threads: int = 1) -> dict:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "machine": platform.machine(),
        "threads": threads,
    }


def make_solver(
    method: str,
    params: ModelParameters | None = None,
    sinkhorn_cfg: SinkhornConfig | None = None,
    seed: int = 0,
) -> Callable[[np.ndarray, int], np.ndarray]:
    """Return ``solve(C, index) -> permutation matrix`` for ``method``.

    ``index`` only matters for the random baseline, whose draw for record
    ``index`` comes from its own stream so results do not depend on order.
    """
    if method == "glan":
        if params is None:
            raise ValueError("method 'glan' needs trained parameters")
        return lambda C, i: greedy_discretize(forward(C, params)[1])
    if method == "sinkhorn":
        cfg = sinkhorn_cfg or SinkhornConfig()
        return lambda C, i: greedy_discretize(sinkhorn(C, cfg))
    if method == "hungarian":
        return lambda C, i: permutation_to_matrix(hungarian_permutation(C))
    if method == "random":
        return lambda C, i: permutation_to_matrix(np.random.default_rng([seed, i]).permutation(C.shape[0]))
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def _record_precision(method: str, C: np.ndarray, X: np.ndarray, ref: np.ndarray) -> float:
    p = precision(X, ref)
    if method == "hungarian" and p < 1.0 and total_cost(C, X) == total_cost(C, ref):
        # alternate optimum under cost ties: judge by cost, not by agreement
        return 1.0
    return p


def evaluate_method(
    method: str,
    dataset: Dataset,
    params: ModelParameters | None = None,
    sinkhorn_cfg: SinkhornConfig | None = None,
    seed: int = 0,
    repeats: int = 3,
    max_size: int | None = None,
    timing: bool = True,
    threads: int = 1,
    variant: str = "",
    part: str = "",
) -> list[BenchRow]:
    """Mean precision and time per size for one method.

    With ``timing`` every solve is repeated ``repeats`` times on a single
    BLAS thread and the median is kept.  Without it records may be spread
    over ``threads`` workers.
    """
    if max_size is not None and any(r.n > max_size for r in dataset):
        raise ValueError(f"dataset contains sizes above the configured limit {max_size}")
    solve = make_solver(method, params, sinkhorn_cfg, seed)
    records = list(dataset)

    def one(i: int) -> tuple[float, float]:
        rec = records[i]
        times = []
        X = None
        for _ in range(max(1, repeats) if timing else 1):
            t0 = time.perf_counter()
            X = solve(rec.cost, i)
            times.append(time.perf_counter() - t0)
        return _record_precision(method, rec.cost, X, rec.optimal_matrix), float(np.median(times))

    if timing:
        with threadpool_limits(1):
            results = [one(i) for i in range(len(records))]
    elif threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(len(records))))
    else:
        results = [one(i) for i in range(len(records))]

    by_size: dict[int, list[tuple[float, float]]] = {}
    for rec, res in zip(records, results):
        by_size.setdefault(rec.n, []).append(res)
    rows = []
    for n in sorted(by_size):
        prec = [p for p, _ in by_size[n]]
        secs = [s for _, s in by_size[n]]
        rows.append(BenchRow(n, method, float(np.mean(prec)), 1e3 * float(np.mean(secs)), len(prec), variant, part))
    return rows


def runtime_profile(
    method: str,
    sizes,
    params: ModelParameters | None = None,
    instances: int = 20,
    repeats: int = 3,
    seed: int = 0,
    sinkhorn_cfg: SinkhornConfig | None = None,
) -> list[BenchRow]:
    """Median end-to-end solve time per size over ``instances`` uniform(0, 1) matrices."""
    if instances < 1:
        raise ValueError("instances must be >= 1")
    solve = make_solver(method, params, sinkhorn_cfg, seed)
    rows = []
    with threadpool_limits(1):
        for n in sizes:
            rng = np.random.default_rng([seed, int(n), 0x7157])
            mats = [rng.uniform(size=(n, n)) for _ in range(instances)]
            solve(mats[0], 0)  # warm caches and lazy imports
            per_instance = []
            for i, C in enumerate(mats):
                reps = []
                for _ in range(max(1, repeats)):
                    t0 = time.perf_counter()
                    solve(C, i)
                    reps.append(time.perf_counter() - t0)
                per_instance.append(float(np.median(reps)))
            rows.append(BenchRow(int(n), method, float("nan"), 1e3 * float(np.median(per_instance)), instances))
    return rows


def ablation_variants(base_model: ModelConfig, base_train: TrainConfig) -> list[tuple[str, str, ModelConfig, TrainConfig]]:
    """(family, name, model config, train config) for the eight compared variants.

    The full model appears once per family; both entries share one training run.
    """
    m, tr = base_model, base_train
    arch = [
        ("full", m),
        ("-C", replace(m, ablate_channel_attention=True)),
        ("-W", replace(m, ablate_aggregation_weights=True)),
        ("-C-W", replace(m, ablate_channel_attention=True, ablate_aggregation_weights=True)),
    ]
    loss = [
        ("full", tr),
        ("-L1", replace(tr, use_l1=False)),
        ("-L2", replace(tr, use_l2=False)),
        ("-L1-L2", replace(tr, use_l1=False, use_l2=False)),
    ]
    out = [("architecture", name, cfg, tr) for name, cfg in arch]
    out += [("loss", name, m, cfg) for name, cfg in loss]
    return out


def ablation_suite(
    train_set: Dataset,
    eval_set: Dataset,
    base_model: ModelConfig | None = None,
    base_train: TrainConfig | None = None,
    seed: int = 0,
    include_random: bool = True,
) -> BenchReport:
    """Train every variant with identical seeds and report per-size precision."""
    base_model = base_model or ModelConfig()
    base_train = base_train or TrainConfig()
    report = BenchReport("ablation")
    trained: dict[tuple, ModelParameters] = {}
    for family, name, mcfg, tcfg in ablation_variants(base_model, base_train):
        key = (json.dumps(mcfg.to_dict(), sort_keys=True), json.dumps(tcfg.to_dict(), sort_keys=True))
        if key not in trained:
            trained[key] = train(train_set, None, mcfg, tcfg)[0]
        report.rows += evaluate_method("glan", eval_set, trained[key], timing=False, variant=name, part=family)
    if include_random:
        report.rows += evaluate_method("random", eval_set, seed=seed, timing=False, variant="random", part="baseline")
    report.provenance = {
        "train_digest": train_set.digest(),
        "eval_digest": eval_set.digest(),
        "model_config": base_model.to_dict(),
        "train_config": base_train.to_dict(),
        "seed": seed,
    }
    return report


def generalization_suite(
    params: ModelParameters,
    base_sizes=tuple(range(10, 151, 10)),
    large_sizes=(200, 300, 400),
    samples_per_size: int = 20,
    seed: int = 0,
    methods=("glan", "sinkhorn"),
    base_dataset: Dataset | None = None,
    sinkhorn_cfg: SinkhornConfig | None = None,
    timing: bool = False,
    threads: int = 1,
) -> BenchReport:
    """Evaluate on in-distribution data, larger sizes, scaled values, and both.

    Scaled parts reuse the unscaled records multiplied per matrix by a factor
    from uniform(1, 10), so only the value scale changes.
    """
    base = base_dataset if base_dataset is not None else generate(
        DatasetSpec(sizes=tuple(base_sizes), samples_per_size=samples_per_size, seed=seed), threads
    )
    large = generate(DatasetSpec(sizes=tuple(large_sizes), samples_per_size=samples_per_size, seed=seed + 1), threads)
    parts = {
        "base": base,
        "larger": large,
        "scaled": scale_values(base, seed=seed),
        "larger+scaled": scale_values(large, seed=seed),
    }
    report = BenchReport("generalization")
    for part, data in parts.items():
        for method in methods:
            report.rows += evaluate_method(
                method, data, params, sinkhorn_cfg, seed=seed, timing=timing, repeats=1, threads=threads, part=part
            )
    report.provenance = {
        "digests": {k: v.digest() for k, v in parts.items()},
        "model_config": params.config.to_dict(),
        "sinkhorn_config": asdict(sinkhorn_cfg or SinkhornConfig()),
        "seed": seed,
    }
    return report


def load_bench_config(path) -> dict:
    """Parse a ``key = value`` benchmark config; ``#`` starts a comment.

    Recognized keys: ``dataset``, ``checkpoint``, ``methods`` (comma list),
    ``repeats``, ``seed``, ``suite``, ``out``, ``threads``.
    """
    known = {"dataset", "checkpoint", "methods", "repeats", "seed", "suite", "out", "threads", "sizes", "per_size"}
    out: dict = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip().replace("-", "_"), value.strip()
        if not sep or key not in known:
            raise ValueError(f"{path}:{lineno}: cannot parse {raw!r}")
        if key == "methods":
            out[key] = [m.strip() for m in value.split(",") if m.strip()]
        elif key in ("repeats", "seed", "threads", "per_size"):
            out[key] = int(value)
        else:
            out[key] = value
    return out

