"""Neighborhood-preserving 2-D embedding with optional label supervision.

The construction follows the fuzzy-neighborhood recipe: exact kNN, per-point
bandwidth calibration against a log2(k) target, probabilistic symmetrization
of the directed strengths, and a negative-sampling SGD layout of the
resulting graph. When some points carry class labels, edge strengths between
differently-labeled points are damped hard and edges touching unlabeled
points are damped mildly, which pulls same-class labeled points together
while leaving unlabeled points positioned by their feature neighborhoods.
With no labels at all the supervision stage is skipped entirely, so the
result is identical to the unsupervised reduction for the same seed.

Everything downstream of the kNN search is single-threaded and seeded, so
coordinates are bit-identical across runs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.optimize import curve_fit
from sklearn.neighbors import NearestNeighbors

_SMOOTH_TOL = 1e-5
_MIN_SCALE = 1e-3


@dataclass(frozen=True)
class ReduceParams:
    n_neighbors: int = 15
    min_dist: float = 0.1
    spread: float = 1.0
    n_epochs: int | None = None  # default: 300 below 10k points, 100 above
    negative_sample_rate: int = 5
    repulsion_strength: float = 1.0
    initial_alpha: float = 1.0
    unknown_damping: float = 1.0  # exponent for edges touching unlabeled points
    mismatch_damping: float = 5.0  # exponent for edges between different classes


def _smooth_knn_calibration(knn_dists: np.ndarray, k: int, n_iter: int = 64):
    """Per-point (sigma, rho) so each fuzzy neighborhood has mass log2(k)."""
    n = knn_dists.shape[0]
    target = np.log2(k)
    rho = np.zeros(n)
    positive = np.where(knn_dists > 0.0, knn_dists, np.inf)
    has_pos = np.isfinite(positive).any(axis=1)
    rho[has_pos] = positive[has_pos].min(axis=1)

    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    mid = np.ones(n)
    d = knn_dists[:, 1:] - rho[:, None]
    d = np.where(d > 0.0, d, 0.0)
    for _ in range(n_iter):
        psum = np.exp(-d / mid[:, None]).sum(axis=1)
        done = np.abs(psum - target) < _SMOOTH_TOL
        too_big = (psum > target) & ~done
        too_small = ~too_big & ~done
        hi[too_big] = mid[too_big]
        mid[too_big] = (lo[too_big] + hi[too_big]) / 2.0
        lo[too_small] = mid[too_small]
        inf_hi = too_small & np.isinf(hi)
        mid[inf_hi] *= 2.0
        fin_hi = too_small & ~np.isinf(hi)
        mid[fin_hi] = (lo[fin_hi] + hi[fin_hi]) / 2.0

    mean_all = knn_dists.mean() if knn_dists.size else 1.0
    row_mean = knn_dists.mean(axis=1)
    floor = np.where(rho > 0.0, _MIN_SCALE * row_mean, _MIN_SCALE * mean_all)
    return np.maximum(mid, floor), rho


def _membership_graph(knn_idx, knn_dists, sigmas, rhos) -> sp.csr_matrix:
    n, k = knn_idx.shape
    rows = np.repeat(np.arange(n), k)
    cols = knn_idx.ravel()
    d = knn_dists - rhos[:, None]
    vals = np.where(d <= 0.0, 1.0, np.exp(-np.maximum(d, 0.0) / sigmas[:, None]))
    vals = vals.ravel().copy()
    vals[rows == cols] = 0.0
    W = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    W.eliminate_zeros()
    return W


def _fuzzy_union(W: sp.csr_matrix) -> sp.csr_matrix:
    Wt = W.T.tocsr()
    return (W + Wt - W.multiply(Wt)).tocsr()


def _apply_supervision(graph: sp.csr_matrix, labels: np.ndarray,
                       unknown_damping: float, mismatch_damping: float) -> sp.csr_matrix:
    graph = graph.tocoo()
    li = labels[graph.row]
    lj = labels[graph.col]
    unknown = (li == -1) | (lj == -1)
    mismatch = ~unknown & (li != lj)
    factor = np.ones(len(graph.data))
    factor[unknown] = np.exp(-unknown_damping)
    factor[mismatch] = np.exp(-mismatch_damping)
    graph = sp.coo_matrix(
        (graph.data * factor, (graph.row, graph.col)), shape=graph.shape
    ).tocsr()
    # Restore full membership on each point's strongest link, then re-union.
    row_max = np.asarray(graph.max(axis=1).todense()).ravel()
    row_max[row_max == 0.0] = 1.0
    scaler = sp.diags(1.0 / row_max)
    graph = (scaler @ graph).tocsr()
    return _fuzzy_union(graph)


def _spectral_init(graph: sp.csr_matrix, seed: int) -> np.ndarray:
    n = graph.shape[0]
    rng = np.random.default_rng(seed)
    deg = np.asarray(graph.sum(axis=1)).ravel()
    deg[deg == 0.0] = 1.0
    d_inv_sqrt = sp.diags(1.0 / np.sqrt(deg))
    lap = sp.identity(n) - d_inv_sqrt @ graph @ d_inv_sqrt
    try:
        if n < 2000:
            vals, vecs = np.linalg.eigh(lap.toarray())
            coords = vecs[:, 1:3]
        else:
            from scipy.sparse.linalg import eigsh

            vals, vecs = eigsh(
                lap.tocsc(),
                k=3,
                which="SM",
                v0=rng.normal(size=n),
                maxiter=max(2000, 10 * n),
                tol=1e-4,
            )
            order = np.argsort(vals)
            coords = vecs[:, order[1:3]]
    except Exception:  # pragma: no cover - eigensolver failure path
        warnings.warn("spectral initialization failed; using random layout",
                      RuntimeWarning)
        coords = rng.uniform(-10.0, 10.0, size=(n, 2))
    scale = np.abs(coords).max()
    if scale == 0.0:
        coords = rng.uniform(-10.0, 10.0, size=(n, 2))
        scale = np.abs(coords).max()
    coords = coords * (10.0 / scale)
    coords = coords + rng.normal(scale=1e-4, size=coords.shape)
    return np.ascontiguousarray(coords, dtype=np.float32)


def _fit_curve_params(min_dist: float, spread: float) -> tuple[float, float]:
    """a, b of the low-dimensional similarity curve 1/(1 + a d^(2b))."""
    xv = np.linspace(0, spread * 3, 300)
    yv = np.where(xv < min_dist, 1.0, np.exp(-(xv - min_dist) / spread))
    (a, b), _ = curve_fit(lambda x, a, b: 1.0 / (1.0 + a * x ** (2 * b)), xv, yv)
    return float(a), float(b)


@njit(cache=True)
def _xorshift(state: np.uint64) -> np.uint64:
    state ^= state << np.uint64(13)
    state ^= state >> np.uint64(7)
    state ^= state << np.uint64(17)
    return state


@njit(cache=True)
def _optimize_layout(coords, head, tail, epochs_per_sample, n_epochs, a, b,
                     gamma, initial_alpha, negative_sample_rate, rng_seed):
    n = coords.shape[0]
    n_edges = head.shape[0]
    epoch_of_next = epochs_per_sample.copy()
    eps_per_negative = epochs_per_sample / negative_sample_rate
    epoch_of_next_neg = eps_per_negative.copy()
    state = np.uint64(rng_seed * np.uint64(2685821657736338717) + np.uint64(1))
    alpha = initial_alpha
    for epoch in range(n_epochs):
        for e in range(n_edges):
            if epoch_of_next[e] > epoch:
                continue
            i = head[e]
            j = tail[e]
            dx = coords[i, 0] - coords[j, 0]
            dy = coords[i, 1] - coords[j, 1]
            dist2 = dx * dx + dy * dy
            if dist2 > 0.0:
                coeff = (-2.0 * a * b * dist2 ** (b - 1.0)) / (
                    a * dist2**b + 1.0
                )
            else:
                coeff = 0.0
            gx = coeff * dx
            gy = coeff * dy
            if gx > 4.0:
                gx = 4.0
            elif gx < -4.0:
                gx = -4.0
            if gy > 4.0:
                gy = 4.0
            elif gy < -4.0:
                gy = -4.0
            coords[i, 0] += gx * alpha
            coords[i, 1] += gy * alpha
            coords[j, 0] -= gx * alpha
            coords[j, 1] -= gy * alpha
            epoch_of_next[e] += epochs_per_sample[e]

            n_neg = int((epoch - epoch_of_next_neg[e]) / eps_per_negative[e])
            for _ in range(n_neg):
                state = _xorshift(state)
                k = int(state % np.uint64(n))
                if k == i:
                    continue
                dx = coords[i, 0] - coords[k, 0]
                dy = coords[i, 1] - coords[k, 1]
                dist2 = dx * dx + dy * dy
                if dist2 > 0.0:
                    coeff = (2.0 * gamma * b) / (
                        (0.001 + dist2) * (a * dist2**b + 1.0)
                    )
                    gx = coeff * dx
                    gy = coeff * dy
                    if gx > 4.0:
                        gx = 4.0
                    elif gx < -4.0:
                        gx = -4.0
                    if gy > 4.0:
                        gy = 4.0
                    elif gy < -4.0:
                        gy = -4.0
                else:
                    gx = 4.0
                    gy = 4.0
                coords[i, 0] += gx * alpha
                coords[i, 1] += gy * alpha
            epoch_of_next_neg[e] += n_neg * eps_per_negative[e]
        alpha = initial_alpha * (1.0 - (epoch + 1.0) / n_epochs)
    return coords


def reduce_semisupervised(
    X: np.ndarray,
    labels: np.ndarray | None,
    params: ReduceParams = ReduceParams(),
    seed: int = 0,
) -> np.ndarray:
    """2-D coordinates for X; labels < 0 (or None) mean unlabeled.

    Deterministic in (X, labels, params, seed).
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n <= params.n_neighbors:
        raise ValueError(
            f"need more than n_neighbors={params.n_neighbors} points, got {n}"
        )
    if labels is None:
        labels = -np.ones(n, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)

    nn = NearestNeighbors(n_neighbors=params.n_neighbors).fit(X)
    knn_dists, knn_idx = nn.kneighbors(X)
    sigmas, rhos = _smooth_knn_calibration(knn_dists, params.n_neighbors)
    graph = _fuzzy_union(_membership_graph(knn_idx, knn_dists, sigmas, rhos))
    if (labels >= 0).any():
        graph = _apply_supervision(
            graph, labels, params.unknown_damping, params.mismatch_damping
        )

    n_epochs = params.n_epochs or (300 if n < 10_000 else 100)
    graph = graph.tocoo()
    keep = graph.data >= graph.data.max() / n_epochs
    head = graph.row[keep].astype(np.int64)
    tail = graph.col[keep].astype(np.int64)
    weights = graph.data[keep]
    epochs_per_sample = np.where(
        weights > 0.0, weights.max() / weights, np.inf
    ) * 1.0  # one sample per epoch for the strongest edge

    coords = _spectral_init(graph.tocsr(), seed)
    a, b = _fit_curve_params(params.min_dist, params.spread)
    coords = _optimize_layout(
        coords.astype(np.float64),
        head,
        tail,
        epochs_per_sample.astype(np.float64),
        n_epochs,
        a,
        b,
        params.repulsion_strength,
        params.initial_alpha,
        float(params.negative_sample_rate),
        np.uint64(seed + 1),
    )
    return coords.astype(np.float32)
