"""Neighbour-uncertainty active querying and source-free adaptation on
feature embeddings."""
from .data import FeatureSet, load_feature_set, normalize_rows, save_feature_set
from .graph import NeighborGraph, build_graph, nearest, neighbor_label_distribution
from .kernels import BACKEND
from .model import AdaptModel
from .pseudo import PseudoLabels, cluster_assign
from .query import (SelectionResult, UncertaintyScores, baseline_select, compute_nau,
                    ndr_select, neighbor_affinity, neighbor_purity, one_shot_query)
from .synth import ShiftSpec, generate, train_source_head
from .train import LossBreakdown, RunOptions, TrainConfig, run_mhpl

__version__ = "0.1.0"
