"""Likely-positive token identification for query scoring.

Per query iteration: embed the train-split tokens into 2-D (supervised by
whatever labels have been acquired), cluster, call the largest cluster the
negative one, take every other cluster as the positive core P, and widen it
with the top-percentile outliers T. The predicted positive set is P' = P u T.

Class imbalance is what makes the largest-cluster rule work: negatives
dominate, so they form the biggest dense group.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..corpus import Corpus
from .cluster import ClusterAssignment, ClusterParams, cluster_density
from .reduce import ReduceParams, reduce_semisupervised


@dataclass(frozen=True)
class PositiveIdParams:
    """Knobs for the reduce -> cluster -> select pipeline.

    Tuned once per experiment (at the first iteration) rather than per query
    round; re-tuning every round buys little and costs a lot.
    """

    n_neighbors: int = 15
    min_cluster_size: int | None = None  # default max(15, ceil(0.002 n))
    min_samples: int | None = None  # default = min_cluster_size
    outlier_fraction: float = 0.01
    noise_in_positive: bool = False  # noise points join P (ablation switch)
    outliers_within_largest_only: bool = False  # restrict T to the largest cluster
    n_epochs: int | None = None

    def resolved_min_cluster_size(self, n: int) -> int:
        if self.min_cluster_size is not None:
            return self.min_cluster_size
        return max(15, math.ceil(0.002 * n))


@dataclass(frozen=True)
class PositiveSet:
    """P: tokens outside the largest cluster; T: top-percentile outliers."""

    core: frozenset  # P, keyed by global token index
    outliers: frozenset  # T
    largest_cluster: int
    no_clusters: bool = False

    @property
    def tokens(self) -> frozenset:
        return self.core | self.outliers

    def __contains__(self, token_index: int) -> bool:
        return token_index in self.core or token_index in self.outliers

    def __len__(self) -> int:
        return len(self.tokens)


def build_positive_set(
    assignment: ClusterAssignment,
    outlier_scores: np.ndarray,
    outlier_fraction: float = 0.01,
    token_indices: np.ndarray | None = None,
    noise_in_positive: bool = False,
    outliers_within_largest_only: bool = False,
) -> PositiveSet:
    """Apply the largest-cluster-negative rule plus top-outlier widening.

    ``token_indices`` maps clustering rows to global token indices (identity
    when omitted). |T| = ceil(outlier_fraction * n), ties broken by row index.
    """
    n = len(assignment.labels)
    if token_indices is None:
        token_indices = np.arange(n, dtype=np.int64)
    largest = assignment.largest_cluster()
    no_clusters = largest == -1
    if no_clusters:
        warnings.warn("no density clusters found; positive core is empty",
                      RuntimeWarning)
        core_rows = np.empty(0, dtype=np.int64)
    elif noise_in_positive:
        core_rows = np.nonzero(assignment.labels != largest)[0]
    else:
        core_rows = np.nonzero(
            (assignment.labels != largest) & (assignment.labels != -1)
        )[0]

    n_outliers = math.ceil(outlier_fraction * n)
    eligible = np.arange(n, dtype=np.int64)
    if outliers_within_largest_only and not no_clusters:
        eligible = np.nonzero(assignment.labels == largest)[0]
    # Descending score, ascending row index on ties.
    order = np.lexsort((eligible, -outlier_scores[eligible]))
    top_rows = eligible[order[:n_outliers]]

    return PositiveSet(
        core=frozenset(int(token_indices[r]) for r in core_rows),
        outliers=frozenset(int(token_indices[r]) for r in top_rows),
        largest_cluster=largest,
        no_clusters=no_clusters,
    )


@dataclass
class PositiveIdResult:
    positive_set: PositiveSet
    coords: np.ndarray
    assignment: ClusterAssignment
    outlier_scores: np.ndarray
    token_indices: np.ndarray
    params: PositiveIdParams = field(default=PositiveIdParams())

    def export_csv(self, path: str | Path) -> None:
        """Per-token diagnostics (x, y, cluster, outlier score, in positive set)."""
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["token_index", "x", "y", "cluster", "outlier_score", "in_positive_set"])
            pset = self.positive_set
            for row, gidx in enumerate(self.token_indices):
                writer.writerow(
                    [
                        int(gidx),
                        f"{self.coords[row, 0]:.6f}",
                        f"{self.coords[row, 1]:.6f}",
                        int(self.assignment.labels[row]),
                        f"{self.outlier_scores[row]:.6f}",
                        int(int(gidx) in pset),
                    ]
                )


def identify_positive_tokens(
    token_vectors: np.ndarray,
    supervision_labels: np.ndarray | None,
    token_indices: np.ndarray,
    params: PositiveIdParams = PositiveIdParams(),
    seed: int = 0,
) -> PositiveIdResult:
    """Full pipeline over the train-split tokens.

    ``supervision_labels``: class index per row (0 = outside class), -1 where
    the token's sentence has not been labeled yet. Deterministic in
    (vectors, labels, params, seed).
    """
    n = token_vectors.shape[0]
    coords = reduce_semisupervised(
        token_vectors,
        supervision_labels,
        ReduceParams(n_neighbors=params.n_neighbors, n_epochs=params.n_epochs),
        seed=seed,
    )
    mcs = params.resolved_min_cluster_size(n)
    assignment, scores = cluster_density(
        coords, ClusterParams(min_cluster_size=mcs, min_samples=params.min_samples)
    )
    positive = build_positive_set(
        assignment,
        scores,
        outlier_fraction=params.outlier_fraction,
        token_indices=token_indices,
        noise_in_positive=params.noise_in_positive,
        outliers_within_largest_only=params.outliers_within_largest_only,
    )
    return PositiveIdResult(
        positive_set=positive,
        coords=coords,
        assignment=assignment,
        outlier_scores=scores,
        token_indices=np.asarray(token_indices, dtype=np.int64),
        params=params,
    )


def positive_set_metrics(
    positive: PositiveSet | frozenset,
    corpus: Corpus,
    token_indices: np.ndarray | None = None,
) -> dict[str, float]:
    """Diagnostics against gold labels (simulation mode only).

    precision_neg: how pure the predicted-negative set is of gold-O tokens;
    recall_pos / precision_pos: coverage and purity of the predicted set
    against gold positives; f1 combines the latter two.
    """
    predicted = positive.tokens if isinstance(positive, PositiveSet) else positive
    if token_indices is None:
        considered = np.arange(corpus.n_tokens, dtype=np.int64)
    else:
        considered = np.asarray(token_indices, dtype=np.int64)

    gold_positive = set()
    for sent in corpus.sentences:
        for tok in sent.tokens:
            if tok.gold_tag != 0:
                gold_positive.add(tok.global_index)

    considered_set = set(int(i) for i in considered)
    predicted = {int(i) for i in predicted} & considered_set
    gold_pos = gold_positive & considered_set
    gold_neg = considered_set - gold_pos
    pred_neg = considered_set - predicted

    tp = len(predicted & gold_pos)
    precision_pos = tp / len(predicted) if predicted else 0.0
    recall_pos = tp / len(gold_pos) if gold_pos else 0.0
    precision_neg = len(pred_neg & gold_neg) / len(pred_neg) if pred_neg else 0.0
    f1 = (
        2 * precision_pos * recall_pos / (precision_pos + recall_pos)
        if precision_pos + recall_pos
        else 0.0
    )
    return {
        "precision_neg": precision_neg,
        "recall_pos": recall_pos,
        "precision_pos": precision_pos,
        "f1": f1,
    }
