"""Linear assignment toolkit: a learned graph solver alongside exact and Sinkhorn baselines."""
from .bigraph import BipartiteGraph, build_graph, edge_index, ground_truth_labels, labels_to_score_matrix
from .core import (
    check_cost_matrix,
    greedy_discretize,
    matrix_to_permutation,
    permutation_to_matrix,
    precision,
    total_cost,
    validate_permutation,
)
from .datagen import Dataset, DatasetSpec, SampleRecord, generate, load, save, scale_values, split
from .estimators import GLANAssigner, HungarianAssigner, RandomAssigner, SinkhornAssigner
from .losses import LossConfig, balanced_bce, combined_loss, constraint_l1, constraint_l2
from .model import ModelConfig, ModelParameters, forward
from .solvers import SinkhornConfig, brute_force, hungarian, hungarian_permutation, sinkhorn
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "BipartiteGraph",
    "build_graph",
    "edge_index",
    "ground_truth_labels",
    "labels_to_score_matrix",
    "check_cost_matrix",
    "greedy_discretize",
    "matrix_to_permutation",
    "permutation_to_matrix",
    "precision",
    "total_cost",
    "validate_permutation",
    "Dataset",
    "DatasetSpec",
    "SampleRecord",
    "generate",
    "load",
    "save",
    "scale_values",
    "split",
    "GLANAssigner",
    "HungarianAssigner",
    "RandomAssigner",
    "SinkhornAssigner",
    "LossConfig",
    "balanced_bce",
    "combined_loss",
    "constraint_l1",
    "constraint_l2",
    "ModelConfig",
    "ModelParameters",
    "forward",
    "SinkhornConfig",
    "brute_force",
    "hungarian",
    "hungarian_permutation",
    "sinkhorn",
    "TrainConfig",
    "load_checkpoint",
    "save_checkpoint",
    "train",
]
