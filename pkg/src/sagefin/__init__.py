"""Semi-supervised fraud detection on bipartite transaction graphs."""
from .baseline import LogisticBaseline, logistic_baseline
from .data import (
    EllipticSchema,
    GroundTruth,
    SyntheticConfig,
    export_csv,
    generate_synthetic,
    load_elliptic,
    summarize_degrees,
)
from .estimator import SageFinDetector, TrainReport
from .explain import (
    EdgeScore,
    ExplainConfig,
    Explanation,
    baseline_loss,
    explain,
    export_explanation,
    fidelity,
    score_edges,
    select_subgraph,
)
from .graph import BipartiteGraph, build_graph, n_hop_neighborhood, neighbors, remove_edge_view
from .metrics import Metrics, evaluate, format_table
from .network import LossBreakdown, SageFinConfig, SageFinNetwork, sample_negative_edges
from .preprocessing import GraphStandardizer, SplitMasks, make_splits, standardize

__version__ = "0.1.0"

__all__ = [
    "BipartiteGraph", "EdgeScore", "EllipticSchema", "ExplainConfig", "Explanation",
    "GraphStandardizer", "GroundTruth", "LogisticBaseline", "LossBreakdown", "Metrics",
    "SageFinConfig", "SageFinDetector", "SageFinNetwork", "SplitMasks", "SyntheticConfig",
    "TrainReport", "baseline_loss", "build_graph", "evaluate", "explain", "export_csv",
    "export_explanation", "fidelity", "format_table", "generate_synthetic", "load_elliptic",
    "logistic_baseline", "make_splits", "n_hop_neighborhood", "neighbors", "remove_edge_view",
    "sample_negative_edges", "score_edges", "select_subgraph", "standardize",
    "summarize_degrees",
]
