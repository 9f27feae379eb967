"""Synthetic uniform-cost datasets with exact solutions, plus splitting and file I/O.

File layout (text, one record per line)::

    #lapforge-dataset 1 {"sizes": [...], ...}
    <n> <n*n costs, row-major, %.17g> | <job index of each agent>
"""
from __future__ import annotations

import hashlib
import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import check_cost_matrix, permutation_to_matrix, validate_permutation
from .solvers import hungarian_permutation

__all__ = [
    "DatasetSpec",
    "SampleRecord",
    "Dataset",
    "DatasetFormatError",
    "generate",
    "scale_values",
    "split",
    "save",
    "load",
    "default_filename",
]

FORMAT_TAG = "#lapforge-dataset"
FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    sizes: tuple[int, ...] = tuple(range(10, 151, 10))
    samples_per_size: int = 100
    value_upper_bound: float = 1.0
    value_scale: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if not self.sizes:
            raise ValueError("sizes must be non-empty")
        if any(s < 1 for s in self.sizes):
            raise ValueError("sizes must be >= 1")
        if self.samples_per_size < 1:
            raise ValueError("samples_per_size must be >= 1")
        if not self.value_upper_bound > 0:
            raise ValueError("value_upper_bound must be positive")


@dataclass(frozen=True, eq=False)
class SampleRecord:
    cost: np.ndarray
    optimal: np.ndarray  # job index per agent

    @property
    def n(self) -> int:
        return int(self.cost.shape[0])

    @property
    def optimal_matrix(self) -> np.ndarray:
        return permutation_to_matrix(self.optimal)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SampleRecord):
            return NotImplemented
        return np.array_equal(self.cost, other.cost) and np.array_equal(self.optimal, other.optimal)


@dataclass(eq=False)
class Dataset:
    records: list[SampleRecord]
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return len(self) == len(other) and all(a == b for a, b in zip(self.records, other.records))

    def size_histogram(self) -> dict[int, int]:
        return dict(sorted(Counter(r.n for r in self.records).items()))

    def by_size(self) -> dict[int, list[SampleRecord]]:
        out: dict[int, list[SampleRecord]] = {}
        for r in self.records:
            out.setdefault(r.n, []).append(r)
        return dict(sorted(out.items()))

    def digest(self) -> str:
        h = hashlib.sha256()
        for r in self.records:
            h.update(np.int64(r.n).tobytes())
            h.update(np.ascontiguousarray(r.cost).tobytes())
            h.update(np.ascontiguousarray(r.optimal).tobytes())
        return h.hexdigest()


def _record_rng(seed: int, n: int, k: int) -> np.random.Generator:
    # independent stream per record so generation order never matters
    return np.random.default_rng([int(seed), int(n), int(k)])


def _make_record(spec: DatasetSpec, n: int, k: int) -> SampleRecord:
    rng = _record_rng(spec.seed, n, k)
    cost = rng.uniform(0.0, spec.value_upper_bound, size=(n, n))
    if spec.value_scale:
        cost = cost * rng.uniform(1.0, 10.0)
    return SampleRecord(cost, hungarian_permutation(cost))


def generate(spec: DatasetSpec, threads: int = 1) -> Dataset:
    """Records ordered by size, then sample index; identical for any ``threads``."""
    keys = [(n, k) for n in spec.sizes for k in range(spec.samples_per_size)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(lambda nk: _make_record(spec, *nk), keys))
    else:
        records = [_make_record(spec, n, k) for n, k in keys]
    return Dataset(records, meta={"spec": _spec_dict(spec)})


def _spec_dict(spec: DatasetSpec) -> dict:
    d = asdict(spec)
    d["sizes"] = list(spec.sizes)
    return d


def scale_values(dataset: Dataset, seed: int = 0, low: float = 1.0, high: float = 10.0) -> Dataset:
    """Multiply every cost matrix by its own factor drawn from ``uniform(low, high)``.

    Positive scaling keeps every optimum, so stored solutions are reused.
    """
    rng = np.random.default_rng([int(seed), 0x5CA1E])
    factors = rng.uniform(low, high, size=len(dataset))
    records = [SampleRecord(r.cost * f, r.optimal) for r, f in zip(dataset.records, factors)]
    meta = dict(dataset.meta)
    meta["value_scale"] = {"seed": int(seed), "low": low, "high": high}
    return Dataset(records, meta=meta)


def split(dataset: Dataset, eval_fraction: float = 0.3, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Per-size random split; ``floor(fraction * count)`` records go to eval."""
    if not 0.0 < eval_fraction < 1.0:
        raise ValueError("eval_fraction must lie strictly between 0 and 1")
    train, held = [], []
    for n, recs in dataset.by_size().items():
        rng = np.random.default_rng([int(seed), int(n), 0x5917])
        order = rng.permutation(len(recs))
        n_eval = int(np.floor(eval_fraction * len(recs)))
        held.extend(recs[i] for i in sorted(order[:n_eval]))
        train.extend(recs[i] for i in sorted(order[n_eval:]))
    meta = dict(dataset.meta)
    return (
        Dataset(train, meta={**meta, "split": {"part": "train", "eval_fraction": eval_fraction, "seed": seed}}),
        Dataset(held, meta={**meta, "split": {"part": "eval", "eval_fraction": eval_fraction, "seed": seed}}),
    )


def default_filename(spec: DatasetSpec) -> str:
    u = spec.value_upper_bound
    u_txt = str(int(u)) if float(u).is_integer() else repr(u)
    if spec.value_scale:
        u_txt = str(int(u * 10)) if float(u * 10).is_integer() else repr(u * 10)
    return f"syndata_u{u_txt}_{min(spec.sizes)}_{max(spec.sizes)}.lap"


def _fmt(values: np.ndarray) -> str:
    return " ".join(format(float(x), ".17g") for x in values)


def save(dataset: Dataset, path) -> None:
    path = Path(path)
    with path.open("w", encoding="ascii") as fh:
        fh.write(f"{FORMAT_TAG} {FORMAT_VERSION} {json.dumps(dataset.meta, sort_keys=True)}\n")
        for r in dataset.records:
            fh.write(f"{r.n} {_fmt(r.cost.ravel())} | {' '.join(str(int(j)) for j in r.optimal)}\n")


def parse_record(line: str, lineno: int = 0, require_label: bool = True) -> SampleRecord:
    head, sep, tail = line.partition("|")
    fields = head.split()
    if not fields:
        raise DatasetFormatError(f"line {lineno}: empty record")
    try:
        n = int(fields[0])
        values = np.array([float(x) for x in fields[1:]], dtype=np.float64)
    except ValueError as exc:
        raise DatasetFormatError(f"line {lineno}: {exc}") from None
    if n < 1 or values.size != n * n:
        raise DatasetFormatError(f"line {lineno}: expected {n * n} cost values, found {values.size}")
    cost = values.reshape(n, n)
    try:
        check_cost_matrix(cost)
    except ValueError as exc:
        raise DatasetFormatError(f"line {lineno}: {exc}") from None
    if not sep:
        if require_label:
            raise DatasetFormatError(f"line {lineno}: missing assignment field")
        return SampleRecord(cost, hungarian_permutation(cost))
    try:
        perm = np.array([int(x) for x in tail.split()], dtype=np.int64)
    except ValueError as exc:
        raise DatasetFormatError(f"line {lineno}: {exc}") from None
    if perm.size == 0 and not require_label:
        return SampleRecord(cost, hungarian_permutation(cost))
    if perm.size != n or np.any(perm < 0) or np.any(perm >= n) or not validate_permutation(permutation_to_matrix(perm)):
        raise DatasetFormatError(f"line {lineno}: assignment is not a permutation of 0..{n - 1}")
    return SampleRecord(cost, perm)


def load(path, require_label: bool = True) -> Dataset:
    path = Path(path)
    text = path.read_text(encoding="ascii")
    lines = text.split("\n")
    if not lines or not lines[0].startswith(FORMAT_TAG):
        raise DatasetFormatError(f"{path}: missing {FORMAT_TAG} header")
    parts = lines[0].split(" ", 2)
    try:
        version = int(parts[1])
    except (IndexError, ValueError):
        raise DatasetFormatError(f"{path}: malformed header") from None
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported format version {version}")
    try:
        meta = json.loads(parts[2]) if len(parts) > 2 and parts[2].strip() else {}
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: bad header metadata: {exc}") from None
    if not text.endswith("\n"):
        raise DatasetFormatError(f"{path}: truncated file (no trailing newline)")
    records = [
        parse_record(line, lineno, require_label)
        for lineno, line in enumerate(lines[1:], start=2)
        if line.strip()
    ]
    return Dataset(records, meta=meta)
