"""Test-input prioritization for graph node classifiers.

Pipeline: extract model-aware and model-agnostic per-node attributes,
enhance them by aggregating over closed neighborhoods, and rank unlabeled
nodes with an iteratively trained boosted-tree binary classifier. Ships the
standard uncertainty baselines and a TRC/ATRC evaluation harness.
"""

from .graph import Graph, SbmParams, Split, build_graph, generate_sbm
from .models import PredictionBundle, TrainConfig
from .ranker import GbdtHyper, LabeledPool, SelectionResult
from .evaluation import EvalReport, atrc, budget_grid, trc

__version__ = "0.1.0"

__all__ = [
    "Graph",
    "SbmParams",
    "Split",
    "build_graph",
    "generate_sbm",
    "PredictionBundle",
    "TrainConfig",
    "GbdtHyper",
    "LabeledPool",
    "SelectionResult",
    "EvalReport",
    "trc",
    "atrc",
    "budget_grid",
    "__version__",
]
