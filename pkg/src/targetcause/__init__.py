"""Targeted cause discovery: find every variable that causally influences a chosen target.

Synthetic causal systems (analytic SCMs and a single-cell expression
simulator), an axial-attention scorer trained on them, ensembled local
inference that scales linearly in the number of variables, and ranking
metrics against ground-truth ancestry.
"""

from .data import LabeledDataset, ObservationSet, load_dataset, save_dataset
from .engine import InferenceConfig, TrainConfig, infer, score_matrix, train
from .evaluation import CauseScoreVector, MetricReport, evaluate_scores, evaluate_targets
from .graph import CausalGraph, GraphKind, ancestors, cause_labels, generate_graph, marginalize, parents
from .model import ModelConfig, count_params, init_params, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "CausalGraph", "CauseScoreVector", "GraphKind", "InferenceConfig", "LabeledDataset", "MetricReport",
    "ModelConfig", "ObservationSet", "TrainConfig", "ancestors", "cause_labels", "count_params",
    "evaluate_scores", "evaluate_targets", "generate_graph", "infer", "init_params", "load_checkpoint",
    "load_dataset", "marginalize", "parents", "save_checkpoint", "save_dataset", "score_matrix", "train",
]
