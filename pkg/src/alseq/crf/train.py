"""Regularized maximum-likelihood training of the linear-chain model.

The loss is the negative penalized log-likelihood

    -sum_s log p(y_s | x_s) + c1 * ||w||_1 + c2 * ||w||_2^2

minimized with the limited-memory quasi-Newton loop in :mod:`alseq.optim`
(orthant-wise when c1 > 0). The L2 term carries no 1/2 factor, so weights
are directly comparable across runs with the same coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ..corpus import LabelScheme, Sentence
from ..embeddings import EmbeddingMatrix
from ..optim import OptimizerConfig, minimize
from .features import FeatureRegistry, FeaturizedBatch, featurize_batch
from .model import CrfModel


@dataclass(frozen=True)
class TrainConfig:
    max_iterations: int = 100
    epsilon: float = 1e-5
    stop_period: int = 10
    stop_delta: float = 1e-5
    c1: float = 0.1
    c2: float = 0.1
    line_search_max_trials: int = 20
    allow_unobserved: bool = True  # keep weights for (feature, tag) pairs never seen in gold
    memory: int = 6
    use_l1: bool = True  # False forces c1 to 0 (recorded in the train status)


def _gold_index_arrays(batch: FeaturizedBatch, gold: list[np.ndarray]):
    """Flat gold tags plus (prev, cur) transition index pairs."""
    flat = np.concatenate(gold) if gold else np.empty(0, dtype=np.int64)
    prev_idx = []
    cur_idx = []
    for i, tags in enumerate(gold):
        base = int(batch.offsets[i])
        n = len(tags)
        if n > 1:
            prev_idx.append(tags[:-1])
            cur_idx.append(tags[1:])
    prev = np.concatenate(prev_idx) if prev_idx else np.empty(0, dtype=np.int64)
    cur = np.concatenate(cur_idx) if cur_idx else np.empty(0, dtype=np.int64)
    return flat, prev, cur


@njit(cache=True)
def _fb_statistics_kernel(unary_all, offsets, trans):
    """Forward-backward over every sentence in one compiled pass.

    Returns per-sentence logZ total, per-position unary marginals, and the
    summed pairwise (transition) expectations.
    """
    M = unary_all.shape[1]
    n_sentences = offsets.shape[0] - 1
    unary_marg = np.empty_like(unary_all)
    expected_trans = np.zeros((M, M))
    total_log_z = 0.0
    max_len = 0
    for s in range(n_sentences):
        n = offsets[s + 1] - offsets[s]
        if n > max_len:
            max_len = n
    alpha = np.empty((max_len, M))
    beta = np.empty((max_len, M))

    for s in range(n_sentences):
        lo = offsets[s]
        n = offsets[s + 1] - lo
        for j in range(M):
            alpha[0, j] = unary_all[lo, j]
        for i in range(1, n):
            for j in range(M):
                mx = alpha[i - 1, 0] + trans[0, j]
                for k in range(1, M):
                    v = alpha[i - 1, k] + trans[k, j]
                    if v > mx:
                        mx = v
                acc = 0.0
                for k in range(M):
                    acc += np.exp(alpha[i - 1, k] + trans[k, j] - mx)
                alpha[i, j] = unary_all[lo + i, j] + mx + np.log(acc)
        for j in range(M):
            beta[n - 1, j] = 0.0
        for i in range(n - 2, -1, -1):
            for j in range(M):
                mx = trans[j, 0] + unary_all[lo + i + 1, 0] + beta[i + 1, 0]
                for k in range(1, M):
                    v = trans[j, k] + unary_all[lo + i + 1, k] + beta[i + 1, k]
                    if v > mx:
                        mx = v
                acc = 0.0
                for k in range(M):
                    acc += np.exp(
                        trans[j, k] + unary_all[lo + i + 1, k] + beta[i + 1, k] - mx
                    )
                beta[i, j] = mx + np.log(acc)

        mx = alpha[n - 1, 0]
        for j in range(1, M):
            if alpha[n - 1, j] > mx:
                mx = alpha[n - 1, j]
        acc = 0.0
        for j in range(M):
            acc += np.exp(alpha[n - 1, j] - mx)
        log_z = mx + np.log(acc)
        total_log_z += log_z

        for i in range(n):
            for j in range(M):
                unary_marg[lo + i, j] = np.exp(alpha[i, j] + beta[i, j] - log_z)
        for i in range(1, n):
            for a in range(M):
                for b in range(M):
                    expected_trans[a, b] += np.exp(
                        alpha[i - 1, a]
                        + trans[a, b]
                        + unary_all[lo + i, b]
                        + beta[i, b]
                        - log_z
                    )
    return total_log_z, unary_marg, expected_trans


def _train_statistics(
    unary_all: np.ndarray,
    batch: FeaturizedBatch,
    trans: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Total logZ, per-position unary marginals, summed pairwise expectations."""
    total_log_z, unary_marg, expected_trans = _fb_statistics_kernel(
        np.ascontiguousarray(unary_all),
        np.ascontiguousarray(batch.offsets, dtype=np.int64),
        np.ascontiguousarray(trans),
    )
    if not np.isfinite(total_log_z):
        raise FloatingPointError("non-finite partition function during training")
    return float(total_log_z), unary_marg, expected_trans


class _Objective:
    """Smooth part of the loss as a function of the packed weight vector."""

    def __init__(self, batch: FeaturizedBatch, gold: list[np.ndarray], n_tags: int,
                 c2: float, state_free: np.ndarray | None, trans_free: np.ndarray | None):
        self.batch = batch
        self.n_tags = n_tags
        self.c2 = c2
        self.n_features = batch.X.shape[1]
        self.state_free = state_free  # bool masks; None means everything free
        self.trans_free = trans_free
        flat, prev, cur = _gold_index_arrays(batch, gold)
        self.gold_flat = flat
        onehot = np.zeros((batch.n_positions, n_tags))
        onehot[np.arange(batch.n_positions), flat] = 1.0
        self.emp_state = (batch.X.T @ onehot).astype(np.float64)
        self.emp_trans = np.zeros((n_tags, n_tags))
        np.add.at(self.emp_trans, (prev, cur), 1.0)
        self._onehot = onehot

    def unpack(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        K, M = self.n_features, self.n_tags
        W = theta[: K * M].reshape(K, M)
        T = theta[K * M :].reshape(M, M)
        if self.state_free is not None:
            W = np.where(self.state_free, W, 0.0)
        if self.trans_free is not None:
            T = np.where(self.trans_free, T, 0.0)
        return W, T

    def pack(self, W: np.ndarray, T: np.ndarray) -> np.ndarray:
        return np.concatenate([W.ravel(), T.ravel()])

    def log_likelihood_parts(self, W, T):
        unary_all = self.batch.X @ W
        gold_unary = float(
            unary_all[np.arange(self.batch.n_positions), self.gold_flat].sum()
        )
        gold_trans = float((self.emp_trans * T).sum())
        log_z, unary_marg, expected_trans = _train_statistics(unary_all, self.batch, T)
        ll = gold_unary + gold_trans - log_z
        grad_state = (self.batch.X.T @ (unary_marg - self._onehot)).astype(np.float64)
        grad_trans = expected_trans - self.emp_trans
        return ll, grad_state, grad_trans

    def __call__(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        W, T = self.unpack(theta)
        ll, grad_state, grad_trans = self.log_likelihood_parts(W, T)
        value = -ll + self.c2 * float(theta @ theta)
        grad = self.pack(grad_state, grad_trans) + 2.0 * self.c2 * theta
        if self.state_free is not None:
            grad[: self.n_features * self.n_tags][
                ~self.state_free.ravel()
            ] = 0.0
        if self.trans_free is not None:
            grad[self.n_features * self.n_tags :][~self.trans_free.ravel()] = 0.0
        return value, grad


def objective_and_gradient(
    model: CrfModel,
    batch: FeaturizedBatch,
    gold: list[np.ndarray],
    c1: float = 0.1,
    c2: float = 0.1,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Penalized log-likelihood and its (sub)gradient at the model's weights.

    Returns ``(value, grad_state, grad_trans)`` for
    value = sum log p(y|x) - c1 ||w||_1 - c2 ||w||_2^2. The L1 subgradient
    uses sign(w) with sign(0) = 0.
    """
    obj = _Objective(batch, gold, model.n_tags, c2=0.0, state_free=None, trans_free=None)
    W, T = model.state_weights, model.trans_weights
    ll, grad_state, grad_trans = obj.log_likelihood_parts(W, T)
    theta = obj.pack(W, T)
    value = ll - c1 * float(np.abs(theta).sum()) - c2 * float(theta @ theta)
    grad_state = -grad_state - c1 * np.sign(W) - 2.0 * c2 * W
    grad_trans = -grad_trans - c1 * np.sign(T) - 2.0 * c2 * T
    return value, grad_state, grad_trans


def train(
    sentences: list[Sentence],
    embeddings: EmbeddingMatrix,
    label_scheme: LabelScheme,
    config: TrainConfig = TrainConfig(),
    has_pos: bool = False,
    keyed_cache: dict | None = None,
) -> CrfModel:
    """Train from scratch on the labeled sentences. Deterministic.

    Line-search failure and hitting the iteration cap do not raise; the best
    iterate is returned and the condition recorded in ``train_status``.
    """
    if not sentences:
        raise ValueError("need at least one labeled sentence")
    registry = FeatureRegistry.build(sentences, embeddings, has_pos)
    batch = featurize_batch(sentences, embeddings, registry, has_pos, keyed_cache)
    gold = [np.asarray(s.tag_ids, dtype=np.int64) for s in sentences]
    M = label_scheme.n_tags

    state_free = trans_free = None
    if not config.allow_unobserved:
        onehot = np.zeros((batch.n_positions, M))
        onehot[np.arange(batch.n_positions), np.concatenate(gold)] = 1.0
        observed = np.abs(batch.X).T @ onehot
        state_free = observed != 0
        trans_free = np.zeros((M, M), dtype=bool)
        for tags in gold:
            trans_free[tags[:-1], tags[1:]] = True

    c1 = config.c1 if config.use_l1 else 0.0
    objective = _Objective(batch, gold, M, config.c2, state_free, trans_free)
    theta0 = np.zeros(len(registry) * M + M * M)
    result = minimize(
        objective,
        theta0,
        OptimizerConfig(
            max_iterations=config.max_iterations,
            epsilon=config.epsilon,
            stop_period=config.stop_period,
            stop_delta=config.stop_delta,
            memory=config.memory,
            line_search_max_trials=config.line_search_max_trials,
            l1_coefficient=c1,
        ),
    )
    W, T = objective.unpack(result.x)
    status = {
        "status": result.status,
        "converged": result.converged,
        "iterations": result.iterations,
        "final_value": result.value,
        "grad_norm": result.grad_norm,
        "l1_disabled": not config.use_l1,
    }
    return CrfModel(
        label_scheme=label_scheme,
        registry=registry,
        state_weights=np.ascontiguousarray(W),
        trans_weights=np.ascontiguousarray(T),
        has_pos=has_pos,
        train_status=status,
    )
