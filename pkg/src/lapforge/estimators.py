"""Scikit-learn style wrappers around the assignment solvers.

Every estimator consumes a sequence of square cost matrices (sizes may
differ) and predicts one permutation per matrix, encoded as the job index of
each agent.  ``score`` returns mean assignment precision against reference
permutations.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import check_cost_matrix, greedy_discretize, matrix_to_permutation, permutation_to_matrix, precision
from .datagen import Dataset, SampleRecord
from .model import ModelConfig, forward
from .solvers import SinkhornConfig, hungarian_permutation, sinkhorn
from .trainer import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train

__all__ = [
    "check_instances",
    "check_targets",
    "GLANAssigner",
    "SinkhornAssigner",
    "HungarianAssigner",
    "RandomAssigner",
]


def check_instances(X) -> list[np.ndarray]:
    """Validate a batch of cost matrices.

    Accepts one 2-D matrix or any stack/sequence of square matrices;
    always returns a list of float64 arrays.
    """
    if isinstance(X, Dataset):
        return [r.cost for r in X]
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    if isinstance(X, (str, bytes)) or not hasattr(X, "__len__"):
        raise TypeError("expected a sequence of cost matrices")
    if len(X) == 0:
        raise ValueError("no cost matrices given")
    return [check_cost_matrix(C, name=f"instance {i}") for i, C in enumerate(X)]


def check_targets(y, instances: list[np.ndarray]) -> list[np.ndarray]:
    """Reference assignments as permutation vectors, one per instance."""
    if isinstance(y, Dataset):
        y = [r.optimal for r in y]
    if len(y) != len(instances):
        raise ValueError(f"got {len(y)} targets for {len(instances)} instances")
    out = []
    for i, (target, C) in enumerate(zip(y, instances)):
        target = np.asarray(target)
        n = C.shape[0]
        if target.ndim == 2:
            target = matrix_to_permutation(target)
        target = target.astype(np.int64)
        if target.shape != (n,) or sorted(target.tolist()) != list(range(n)):
            raise ValueError(f"target {i} is not a permutation of 0..{n - 1}")
        out.append(target)
    return out


class _AssignerMixin:
    """Shared predict/score plumbing; subclasses implement ``_scores``."""

    def decision_function(self, X) -> list[np.ndarray]:
        check_is_fitted(self)
        return [self._scores(C) for C in check_instances(X)]

    def predict_matrix(self, X) -> list[np.ndarray]:
        return [greedy_discretize(S) for S in self.decision_function(X)]

    def predict(self, X) -> list[np.ndarray]:
        return [matrix_to_permutation(P) for P in self.predict_matrix(X)]

    def score(self, X, y) -> float:
        """Mean assignment precision of ``predict(X)`` against ``y``."""
        instances = check_instances(X)
        targets = check_targets(y, instances)
        preds = self.predict_matrix(instances)
        return float(np.mean([precision(P, permutation_to_matrix(t)) for P, t in zip(preds, targets)]))


class GLANAssigner(_AssignerMixin, BaseEstimator):
    """Learned assignment solver: graph message passing over a pruned bipartite graph.

    Parameters
    ----------
    latent_dim, conv_iterations, t, hidden_width :
        Network shape; see :class:`lapforge.model.ModelConfig`.
    ablate_channel_attention, ablate_aggregation_weights : bool
        Replace the attention gates or the neighbor weights with ones.
    cost_scaling : {"retained_mean", "max", "none"}
        Per-instance normalization of edge costs before encoding.
    epochs, lr_initial, lr_decay, lr_decay_every, alpha_step, w, use_l1, use_l2, grad_clip :
        Training schedule and objective; see :class:`lapforge.trainer.TrainConfig`.
    random_state : int
        Seeds initialization and shuffling.

    Attributes
    ----------
    params_ : ModelParameters
    history_ : list of dict
        One row per epoch.
    """

    def __init__(
        self,
        latent_dim=16,
        conv_iterations=5,
        t=8,
        hidden_width=32,
        ablate_channel_attention=False,
        ablate_aggregation_weights=False,
        cost_scaling="retained_mean",
        epochs=20,
        lr_initial=0.003,
        lr_decay=0.95,
        lr_decay_every=5,
        alpha_step=0.01,
        w=0.9,
        use_l1=True,
        use_l2=True,
        grad_clip=10.0,
        random_state=0,
    ):
        self.latent_dim = latent_dim
        self.conv_iterations = conv_iterations
        self.t = t
        self.hidden_width = hidden_width
        self.ablate_channel_attention = ablate_channel_attention
        self.ablate_aggregation_weights = ablate_aggregation_weights
        self.cost_scaling = cost_scaling
        self.epochs = epochs
        self.lr_initial = lr_initial
        self.lr_decay = lr_decay
        self.lr_decay_every = lr_decay_every
        self.alpha_step = alpha_step
        self.w = w
        self.use_l1 = use_l1
        self.use_l2 = use_l2
        self.grad_clip = grad_clip
        self.random_state = random_state

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            latent_dim=self.latent_dim,
            conv_iterations=self.conv_iterations,
            t=self.t,
            hidden_width=self.hidden_width,
            ablate_channel_attention=self.ablate_channel_attention,
            ablate_aggregation_weights=self.ablate_aggregation_weights,
            cost_scaling=self.cost_scaling,
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            lr_initial=self.lr_initial,
            lr_decay=self.lr_decay,
            lr_decay_every=self.lr_decay_every,
            alpha_step=self.alpha_step,
            w=self.w,
            use_l1=self.use_l1,
            use_l2=self.use_l2,
            grad_clip=self.grad_clip,
            seed=self.random_state,
        )

    def fit(self, X, y=None, eval_set=None):
        """Train on cost matrices ``X``.

        Without ``y`` the reference assignments are solved exactly first.
        ``eval_set`` is an optional ``(X, y)`` pair scored after every epoch.
        """
        instances = check_instances(X)
        targets = check_targets(y, instances) if y is not None else [hungarian_permutation(C) for C in instances]
        train_set = Dataset([SampleRecord(C, t) for C, t in zip(instances, targets)])
        held = None
        if eval_set is not None:
            ex = check_instances(eval_set[0])
            held = Dataset([SampleRecord(C, t) for C, t in zip(ex, check_targets(eval_set[1], ex))])
        self.params_, self.history_ = train(train_set, held, self._model_config(), self._train_config())
        return self

    def _scores(self, C: np.ndarray) -> np.ndarray:
        return forward(C, self.params_)[1]

    def save(self, path) -> None:
        check_is_fitted(self)
        save_checkpoint(
            Checkpoint(self.params_.config, self._train_config(), self.params_, self.epochs, None, self.history_),
            path,
        )

    @classmethod
    def from_checkpoint(cls, path: str | Path) -> "GLANAssigner":
        ckpt = load_checkpoint(path)
        m, tc = ckpt.model_config, ckpt.train_config
        est = cls(
            latent_dim=m.latent_dim,
            conv_iterations=m.conv_iterations,
            t=m.t,
            hidden_width=m.hidden_width,
            ablate_channel_attention=m.ablate_channel_attention,
            ablate_aggregation_weights=m.ablate_aggregation_weights,
            cost_scaling=m.cost_scaling,
            epochs=tc.epochs,
            lr_initial=tc.lr_initial,
            lr_decay=tc.lr_decay,
            lr_decay_every=tc.lr_decay_every,
            alpha_step=tc.alpha_step,
            w=tc.w,
            use_l1=tc.use_l1,
            use_l2=tc.use_l2,
            grad_clip=tc.grad_clip,
            random_state=tc.seed,
        )
        est.params_ = ckpt.params
        est.history_ = ckpt.history
        return est


class SinkhornAssigner(_AssignerMixin, BaseEstimator):
    """Alternating row/column normalization of a cost-derived kernel; nothing to learn."""

    def __init__(self, temperature=0.1, max_iterations=100, tolerance=1e-6, kernel="linear"):
        self.temperature = temperature
        self.max_iterations = max_iterations
        self.tolerance = tolerance
        self.kernel = kernel

    def fit(self, X=None, y=None):
        self.config_ = SinkhornConfig(self.temperature, self.max_iterations, self.tolerance, self.kernel)
        return self

    def _scores(self, C):
        return sinkhorn(C, self.config_)


class HungarianAssigner(_AssignerMixin, BaseEstimator):
    """Exact minimum-cost assignment."""

    def fit(self, X=None, y=None):
        self.fitted_ = True
        return self

    def _scores(self, C):
        return permutation_to_matrix(hungarian_permutation(C)).astype(np.float64)


class RandomAssigner(_AssignerMixin, BaseEstimator):
    """Uniformly random permutations; the chance-level reference."""

    def __init__(self, random_state=0):
        self.random_state = random_state

    def fit(self, X=None, y=None):
        self.rng_ = np.random.default_rng(self.random_state)
        return self

    def _scores(self, C):
        return permutation_to_matrix(self.rng_.permutation(C.shape[0])).astype(np.float64)
