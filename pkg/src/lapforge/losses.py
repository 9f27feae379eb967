"""Training objectives: class-balanced edge BCE plus one-to-one penalties."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = ["LossConfig", "balanced_bce", "constraint_l1", "constraint_l2", "combined_loss"]


@dataclass(frozen=True)
class LossConfig:
    w: float = 0.9
    alpha: float = 0.0
    epsilon_log: float = 1e-12
    use_l1: bool = True
    use_l2: bool = True

    def __post_init__(self):
        if not 0.0 < self.w < 1.0:
            raise ValueError("w must lie in (0, 1)")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not self.epsilon_log > 0:
            raise ValueError("epsilon_log must be positive")


def balanced_bce(y, ygt, cfg: LossConfig | None = None) -> Tensor:
    """Sum over edges of ``-[w*g*log(y) + (1-w)*(1-g)*log(1-y)]``."""
    cfg = cfg or LossConfig()
    y = y if isinstance(y, Tensor) else Tensor(y)
    ygt = np.asarray(ygt, dtype=np.float64)
    if y.shape != ygt.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {ygt.shape}")
    eps = cfg.epsilon_log
    yc = ad.clip(y, eps, 1.0 - eps)
    pos = ad.mul(ad.log(yc), cfg.w * ygt)
    neg = ad.mul(ad.log(ad.sub(1.0, yc)), (1.0 - cfg.w) * (1.0 - ygt))
    return ad.scale(ad.sum(ad.add(pos, neg)), -1.0)


def constraint_l1(Y) -> Tensor:
    """Distance of row sums and column sums from one."""
    Y = Y if isinstance(Y, Tensor) else Tensor(Y)
    rows = ad.l2_norm(ad.sub(1.0, ad.sum(Y, axis=1)))
    cols = ad.l2_norm(ad.sub(1.0, ad.sum(Y, axis=0)))
    return ad.add(rows, cols)


def constraint_l2(Y) -> Tensor:
    """Distance of row and column 2-norms from one; favors one-hot rows."""
    Y = Y if isinstance(Y, Tensor) else Tensor(Y)
    rows = ad.l2_norm(ad.sub(1.0, ad.l2_norm(Y, axis=1)))
    cols = ad.l2_norm(ad.sub(1.0, ad.l2_norm(Y, axis=0)))
    return ad.add(rows, cols)


def combined_loss(y, ygt, Y, cfg: LossConfig | None = None, parts: dict | None = None) -> Tensor:
    """``L_A + alpha * (L1 + L2)``; individual terms are written to ``parts``."""
    cfg = cfg or LossConfig()
    la = balanced_bce(y, ygt, cfg)
    total = la
    l1 = constraint_l1(Y) if cfg.use_l1 else None
    l2 = constraint_l2(Y) if cfg.use_l2 else None
    lc = None
    for term in (l1, l2):
        if term is not None:
            lc = term if lc is None else ad.add(lc, term)
    if lc is not None and cfg.alpha != 0.0:
        total = ad.add(la, ad.scale(lc, cfg.alpha))
    if parts is not None:
        parts["bce"] = float(la.data)
        parts["constraint"] = 0.0 if lc is None else float(lc.data)
    return total
