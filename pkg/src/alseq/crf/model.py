"""Linear-chain CRF model and exact inference in log space.

Potentials are unary state scores (sparse features times weights) plus a
single M x M transition matrix; sentence boundaries are handled by sentinel
features rather than dedicated start/end vectors. All recursions use
log-sum-exp, so sentences of a few hundred tokens are no problem.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..corpus import LabelScheme, Sentence
from ..embeddings import EmbeddingMatrix
from .features import FeatureRegistry, FeaturizedBatch, featurize_batch


class InferenceError(RuntimeError):
    """Non-finite potentials; usually a sign of corrupt weights."""


def _lse(a: np.ndarray, axis: int) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    out = m.squeeze(axis) + np.log(np.exp(a - m).sum(axis=axis))
    return out


@dataclass
class MarginalTable:
    """Per-position and pairwise tag posteriors of one sentence."""

    unary: np.ndarray  # (n, M) P(y_i = j | x)
    pairwise: np.ndarray  # (n-1, M, M) P(y_{i-1}=a, y_i=b | x)
    log_partition: float

    @property
    def n_positions(self) -> int:
        return self.unary.shape[0]


@dataclass
class ViterbiResult:
    path: np.ndarray  # (n,) tag indices
    joint_log_prob: float  # log p(path | x) <= 0
    assigned_marginals: np.ndarray  # (n,) P(y_i = path_i | x)


@dataclass
class CrfModel:
    label_scheme: LabelScheme
    registry: FeatureRegistry
    state_weights: np.ndarray  # (n_features, M)
    trans_weights: np.ndarray  # (M, M)
    has_pos: bool
    train_status: dict = field(default_factory=dict)

    @property
    def n_tags(self) -> int:
        return self.label_scheme.n_tags

    def unary_scores(self, batch: FeaturizedBatch) -> np.ndarray:
        scores = batch.X @ self.state_weights
        if not np.isfinite(scores).all():
            raise InferenceError("non-finite unary potentials")
        return scores

    def featurize(self, sentences: list[Sentence], embeddings: EmbeddingMatrix,
                  keyed_cache: dict | None = None) -> FeaturizedBatch:
        return featurize_batch(
            sentences, embeddings, self.registry, self.has_pos, keyed_cache
        )


def forward_scores(unary: np.ndarray, trans: np.ndarray) -> tuple[np.ndarray, float]:
    n, M = unary.shape
    alpha = np.empty((n, M))
    alpha[0] = unary[0]
    for i in range(1, n):
        alpha[i] = unary[i] + _lse(alpha[i - 1][:, None] + trans, axis=0)
    return alpha, float(_lse(alpha[-1][None, :], axis=1)[0])


def backward_scores(unary: np.ndarray, trans: np.ndarray) -> np.ndarray:
    n, M = unary.shape
    beta = np.zeros((n, M))
    for i in range(n - 2, -1, -1):
        beta[i] = _lse(trans + (unary[i + 1] + beta[i + 1])[None, :], axis=1)
    return beta


def marginals_from_scores(unary: np.ndarray, trans: np.ndarray) -> MarginalTable:
    if not (np.isfinite(unary).all() and np.isfinite(trans).all()):
        raise InferenceError("non-finite potentials")
    n, M = unary.shape
    alpha, log_z = forward_scores(unary, trans)
    beta = backward_scores(unary, trans)
    unary_marg = np.exp(alpha + beta - log_z)
    pairwise = np.empty((max(n - 1, 0), M, M))
    for i in range(1, n):
        pairwise[i - 1] = np.exp(
            alpha[i - 1][:, None] + trans + (unary[i] + beta[i])[None, :] - log_z
        )
    return MarginalTable(unary=unary_marg, pairwise=pairwise, log_partition=log_z)


def viterbi_from_scores(
    unary: np.ndarray, trans: np.ndarray, marginals: MarginalTable | None = None
) -> ViterbiResult:
    """Best path; ties resolve to the lowest tag index at every step."""
    if not (np.isfinite(unary).all() and np.isfinite(trans).all()):
        raise InferenceError("non-finite potentials")
    n, M = unary.shape
    delta = unary[0].copy()
    backptr = np.empty((n, M), dtype=np.int64)
    for i in range(1, n):
        scores = delta[:, None] + trans
        backptr[i] = np.argmax(scores, axis=0)
        delta = unary[i] + scores[backptr[i], np.arange(M)]
    last = int(np.argmax(delta))
    path = np.empty(n, dtype=np.int64)
    path[-1] = last
    for i in range(n - 1, 0, -1):
        path[i - 1] = backptr[i, path[i]]
    if marginals is None:
        marginals = marginals_from_scores(unary, trans)
    joint = float(delta[last] - marginals.log_partition)
    assigned = marginals.unary[np.arange(n), path]
    return ViterbiResult(path=path, joint_log_prob=joint, assigned_marginals=assigned)


def forward_backward(model: CrfModel, batch: FeaturizedBatch) -> list[MarginalTable]:
    """Marginal tables for every sentence in the featurized batch."""
    unary = model.unary_scores(batch)
    return [
        marginals_from_scores(unary[batch.rows_of(i)], model.trans_weights)
        for i in range(batch.n_sentences)
    ]


def viterbi(model: CrfModel, batch: FeaturizedBatch) -> list[ViterbiResult]:
    unary = model.unary_scores(batch)
    out = []
    for i in range(batch.n_sentences):
        u = unary[batch.rows_of(i)]
        marg = marginals_from_scores(u, model.trans_weights)
        out.append(viterbi_from_scores(u, model.trans_weights, marg))
    return out


def _bucket_indices(lengths: np.ndarray) -> dict[int, np.ndarray]:
    buckets: dict[int, list[int]] = {}
    for i, n in enumerate(lengths):
        buckets.setdefault(int(n), []).append(i)
    return {n: np.asarray(ix, dtype=np.int64) for n, ix in buckets.items()}


def batch_posteriors(
    model: CrfModel, batch: FeaturizedBatch, want_pairwise: bool = False
) -> tuple[list[MarginalTable], list[ViterbiResult]]:
    """Marginals and Viterbi paths for many sentences, bucketed by length.

    Sentences of equal length run through one vectorized recursion, which is
    what makes whole-pool scoring cheap.
    """
    unary_all = model.unary_scores(batch)
    T = model.trans_weights
    M = model.n_tags
    n_sent = batch.n_sentences
    marginals: list[MarginalTable | None] = [None] * n_sent
    paths: list[ViterbiResult | None] = [None] * n_sent

    for length, idx in _bucket_indices(batch.lengths).items():
        B = len(idx)
        U = np.empty((B, length, M))
        for b, i in enumerate(idx):
            U[b] = unary_all[batch.rows_of(int(i))]

        alpha = np.empty((B, length, M))
        alpha[:, 0] = U[:, 0]
        delta = U[:, 0].copy()
        backptr = np.empty((B, length, M), dtype=np.int64)
        for i in range(1, length):
            prev = alpha[:, i - 1][:, :, None] + T[None, :, :]
            mx = prev.max(axis=1)
            alpha[:, i] = U[:, i] + mx + np.log(
                np.exp(prev - mx[:, None, :]).sum(axis=1)
            )
            v_scores = delta[:, :, None] + T[None, :, :]
            bp = np.argmax(v_scores, axis=1)
            backptr[:, i] = bp
            delta = U[:, i] + np.take_along_axis(v_scores, bp[:, None, :], axis=1)[
                :, 0, :
            ]

        beta = np.zeros((B, length, M))
        for i in range(length - 2, -1, -1):
            nxt = T[None, :, :] + (U[:, i + 1] + beta[:, i + 1])[:, None, :]
            mx = nxt.max(axis=2)
            beta[:, i] = mx + np.log(np.exp(nxt - mx[:, :, None]).sum(axis=2))

        mx = alpha[:, -1].max(axis=1)
        log_z = mx + np.log(np.exp(alpha[:, -1] - mx[:, None]).sum(axis=1))
        unary_marg = np.exp(alpha + beta - log_z[:, None, None])

        last = np.argmax(delta, axis=1)
        best_score = np.take_along_axis(delta, last[:, None], axis=1)[:, 0]
        paths_arr = np.empty((B, length), dtype=np.int64)
        paths_arr[:, -1] = last
        for i in range(length - 1, 0, -1):
            paths_arr[:, i - 1] = np.take_along_axis(
                backptr[:, i], paths_arr[:, i][:, None], axis=1
            )[:, 0]

        for b, i in enumerate(idx):
            if want_pairwise:
                pw = np.empty((length - 1, M, M))
                for p in range(1, length):
                    pw[p - 1] = np.exp(
                        alpha[b, p - 1][:, None]
                        + T
                        + (U[b, p] + beta[b, p])[None, :]
                        - log_z[b]
                    )
            else:
                pw = np.empty((0, M, M))
            marg = MarginalTable(
                unary=unary_marg[b], pairwise=pw, log_partition=float(log_z[b])
            )
            marginals[int(i)] = marg
            assigned = unary_marg[b][np.arange(length), paths_arr[b]]
            paths[int(i)] = ViterbiResult(
                path=paths_arr[b].copy(),
                joint_log_prob=float(best_score[b] - log_z[b]),
                assigned_marginals=assigned,
            )
    return marginals, paths  # type: ignore[return-value]


def save_model(model: CrfModel, path) -> None:
    """Versioned binary snapshot (npz): registry keys, weights, scheme."""
    keys_json = json.dumps([list(k) for k in model.registry.keys()])
    np.savez(
        path,
        version=np.int64(1),
        state_weights=model.state_weights,
        trans_weights=model.trans_weights,
        registry_keys=np.frombuffer(keys_json.encode("utf-8"), dtype=np.uint8),
        entity_classes=json.dumps(list(model.label_scheme.entity_classes)),
        embedding_dim=np.int64(model.registry.embedding_dim),
        has_pos=np.bool_(model.has_pos),
        train_status=json.dumps(model.train_status),
    )


def load_model(path) -> CrfModel:
    with np.load(path, allow_pickle=False) as data:
        if int(data["version"]) != 1:
            raise ValueError(f"unsupported model version {int(data['version'])}")
        keys = json.loads(bytes(data["registry_keys"]).decode("utf-8"))
        registry = FeatureRegistry.from_keys(
            [tuple(k) for k in keys],
            int(data["embedding_dim"]),
            bool(data["has_pos"]),
        )
        scheme = LabelScheme(tuple(json.loads(str(data["entity_classes"]))))
        return CrfModel(
            label_scheme=scheme,
            registry=registry,
            state_weights=data["state_weights"],
            trans_weights=data["trans_weights"],
            has_pos=bool(data["has_pos"]),
            train_status=json.loads(str(data["train_status"])),
        )
