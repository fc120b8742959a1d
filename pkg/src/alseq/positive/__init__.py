from .reduce import ReduceParams, reduce_semisupervised
from .cluster import ClusterAssignment, ClusterParams, cluster_density
from .pipeline import (
    PositiveIdParams,
    PositiveSet,
    build_positive_set,
    identify_positive_tokens,
    positive_set_metrics,
)

__all__ = [
    "ReduceParams",
    "reduce_semisupervised",
    "ClusterAssignment",
    "ClusterParams",
    "cluster_density",
    "PositiveIdParams",
    "PositiveSet",
    "build_positive_set",
    "identify_positive_tokens",
    "positive_set_metrics",
]
