"""Training loop with its optimizer and schedules; checkpoint files."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff import Tape
from .bigraph import build_graph, ground_truth_labels
from .core import greedy_discretize, precision
from .datagen import Dataset
from .losses import LossConfig, combined_loss
from .model import ModelConfig, ModelParameters, forward, forward_graph

__all__ = [
    "TrainConfig",
    "TrainingError",
    "CheckpointError",
    "Adam",
    "learning_rate",
    "alpha_at",
    "train",
    "evaluate_precision",
    "save_checkpoint",
    "load_checkpoint",
    "Checkpoint",
]

log = logging.getLogger(__name__)


class TrainingError(ArithmeticError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr_initial: float = 0.003
    lr_decay: float = 0.95
    lr_decay_every: int = 5
    alpha_initial: float = 0.0
    alpha_step: float = 0.01
    w: float = 0.9
    use_l1: bool = True
    use_l2: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 10.0
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    return cfg.lr_initial * cfg.lr_decay ** (epoch // cfg.lr_decay_every)


def alpha_at(cfg: TrainConfig, epoch: int) -> float:
    return cfg.alpha_initial + cfg.alpha_step * epoch


class Adam:
    def __init__(self, params: ModelParameters, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.named_parameters()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.named_parameters()}

    def step(self, lr: float) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for name, t in self.params.named_parameters():
            if t.grad is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * t.grad
            v *= b2
            v += (1.0 - b2) * t.grad * t.grad
            t.data = t.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _clip_gradients(params: ModelParameters, max_norm: float) -> float:
    grads = [t.grad for _, t in params.named_parameters() if t.grad is not None]
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for _, t in params.named_parameters():
            if t.grad is not None:
                t.grad = t.grad * factor
    return norm


def evaluate_precision(params: ModelParameters, dataset: Dataset) -> float:
    if len(dataset) == 0:
        return float("nan")
    scores = []
    for rec in dataset:
        _, Y = forward(rec.cost, params)
        scores.append(precision(greedy_discretize(Y), rec.optimal_matrix))
    return float(np.mean(scores))


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    params: ModelParameters
    epoch: int = 0
    optimizer: Adam | None = None
    history: list[dict] = field(default_factory=list)


def train(
    train_set: Dataset,
    eval_set: Dataset | None,
    model_cfg: ModelConfig | None = None,
    train_cfg: TrainConfig | None = None,
    resume: Checkpoint | None = None,
    stop_after_epoch: int | None = None,
    on_epoch_end: Callable[[Checkpoint], None] | None = None,
) -> tuple[ModelParameters, list[dict]]:
    """Fit model parameters, one graph per optimizer step.

    Each epoch shuffles with a stream derived from ``(seed, epoch)``, so a
    run resumed from an epoch checkpoint replays the same order.
    """
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    if resume is not None:
        model_cfg, train_cfg = resume.model_config, resume.train_config
        params, opt = resume.params, resume.optimizer
        start, history = resume.epoch, list(resume.history)
        if opt is None:
            opt = Adam(params, train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps)
    else:
        model_cfg = model_cfg or ModelConfig()
        train_cfg = train_cfg or TrainConfig()
        params = ModelParameters(model_cfg, seed=train_cfg.seed)
        opt = Adam(params, train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps)
        start, history = 0, []

    graphs = [build_graph(r.cost, model_cfg.t) for r in train_set]
    labels = [ground_truth_labels(g, r.optimal_matrix)[0] for g, r in zip(graphs, train_set)]
    last = train_cfg.epochs if stop_after_epoch is None else min(train_cfg.epochs, stop_after_epoch)

    for epoch in range(start, last):
        lr = learning_rate(train_cfg, epoch)
        alpha = alpha_at(train_cfg, epoch)
        loss_cfg = LossConfig(w=train_cfg.w, alpha=alpha, use_l1=train_cfg.use_l1, use_l2=train_cfg.use_l2)
        order = np.random.default_rng([train_cfg.seed, epoch]).permutation(len(train_set))
        sums = {"bce": 0.0, "constraint": 0.0, "loss": 0.0}
        clipped = 0
        for idx in order:
            g, ygt = graphs[idx], labels[idx]
            params.zero_grad()
            parts: dict = {}
            with Tape() as tape:
                y, Y = forward_graph(g, params)
                loss = combined_loss(y, ygt, Y, loss_cfg, parts=parts)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, record {int(idx)} (n={g.n}): "
                    f"bce={parts.get('bce')} constraint={parts.get('constraint')}"
                )
            tape.backward(loss)
            if _clip_gradients(params, train_cfg.grad_clip) > train_cfg.grad_clip:
                clipped += 1
            opt.step(lr)
            sums["bce"] += parts["bce"]
            sums["constraint"] += parts["constraint"]
            sums["loss"] += value
        if clipped:
            log.info("epoch %d: gradient norm clipped on %d steps", epoch, clipped)
        count = len(train_set)
        row = {
            "epoch": epoch,
            "lr": lr,
            "alpha": alpha,
            "mean_loss": sums["loss"] / count,
            "mean_bce": sums["bce"] / count,
            "mean_constraint": sums["constraint"] / count,
            "clipped_steps": clipped,
            "eval_precision": evaluate_precision(params, eval_set) if eval_set is not None and len(eval_set) else None,
        }
        history.append(row)
        log.info("epoch %(epoch)d lr=%(lr).6g alpha=%(alpha).2f loss=%(mean_loss).4f eval=%(eval_precision)s", row)
        if on_epoch_end is not None:
            on_epoch_end(Checkpoint(model_cfg, train_cfg, params, epoch + 1, opt, list(history)))
    return params, history


# --- checkpoint files -----------------------------------------------------

CKPT_TAG = "#lapforge-checkpoint"
CKPT_VERSION = 1


def _write_tensor(fh, name: str, arr: np.ndarray) -> None:
    shape = ",".join(str(d) for d in arr.shape)
    values = " ".join(format(float(x), ".17g") for x in arr.ravel())
    fh.write(f"tensor {name} {shape}\n{values}\n")


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    header = {
        "model_config": ckpt.model_config.to_dict(),
        "train_config": ckpt.train_config.to_dict(),
        "epoch": ckpt.epoch,
        "history": ckpt.history,
        "adam_steps": ckpt.optimizer.step_count if ckpt.optimizer else None,
    }
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="ascii") as fh:
        fh.write(f"{CKPT_TAG} {CKPT_VERSION}\n")
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for name, arr in ckpt.params.state_dict().items():
            _write_tensor(fh, name, arr)
        if ckpt.optimizer is not None:
            for name in ckpt.optimizer.m:
                _write_tensor(fh, f"adam.m.{name}", ckpt.optimizer.m[name])
                _write_tensor(fh, f"adam.v.{name}", ckpt.optimizer.v[name])
        fh.write("end\n")
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        lines = path.read_text(encoding="ascii").split("\n")
    except UnicodeDecodeError:
        raise CheckpointError(f"{path}: not a text checkpoint") from None
    if not lines or lines[0].split(" ")[0] != CKPT_TAG:
        raise CheckpointError(f"{path}: missing {CKPT_TAG} header")
    try:
        version = int(lines[0].split(" ")[1])
    except (IndexError, ValueError):
        raise CheckpointError(f"{path}: malformed header") from None
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(lines[1])
        model_cfg = ModelConfig(**header["model_config"])
        train_cfg = TrainConfig(**header["train_config"])
    except (IndexError, KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad config block: {exc}") from None
    tensors: dict[str, np.ndarray] = {}
    i = 2
    ended = False
    while i < len(lines):
        line = lines[i]
        if line == "end":
            ended = True
            break
        parts = line.split(" ")
        if len(parts) != 3 or parts[0] != "tensor" or i + 1 >= len(lines):
            raise CheckpointError(f"{path}:{i + 1}: malformed tensor record")
        try:
            shape = tuple(int(d) for d in parts[2].split(",") if d)
            values = np.array([float(x) for x in lines[i + 1].split()], dtype=np.float64)
            tensors[parts[1]] = values.reshape(shape)
        except ValueError as exc:
            raise CheckpointError(f"{path}:{i + 2}: {exc}") from None
        i += 2
    if not ended:
        raise CheckpointError(f"{path}: truncated checkpoint (no end marker)")
    params = ModelParameters(model_cfg, seed=train_cfg.seed)
    state = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    try:
        params.load_state_dict(state)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    opt = None
    if header.get("adam_steps") is not None:
        opt = Adam(params, train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps)
        opt.step_count = int(header["adam_steps"])
        for name in opt.m:
            try:
                opt.m[name] = tensors[f"adam.m.{name}"].copy()
                opt.v[name] = tensors[f"adam.v.{name}"].copy()
            except KeyError:
                raise CheckpointError(f"{path}: missing optimizer state for {name}") from None
    return Checkpoint(model_cfg, train_cfg, params, int(header.get("epoch", 0)), opt, header.get("history", []))
