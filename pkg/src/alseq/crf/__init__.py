from .features import FeatureRegistry, FeaturizedBatch, featurize, keyed_features
from .model import CrfModel, MarginalTable, ViterbiResult, forward_backward, viterbi
from .train import TrainConfig, objective_and_gradient, train
from .evaluate import evaluate, span_f1

__all__ = [
    "FeatureRegistry",
    "FeaturizedBatch",
    "featurize",
    "keyed_features",
    "CrfModel",
    "MarginalTable",
    "ViterbiResult",
    "forward_backward",
    "viterbi",
    "TrainConfig",
    "objective_and_gradient",
    "train",
    "evaluate",
    "span_f1",
]
