"""Hierarchical density clustering with noise and hierarchy-based outliers.

Pipeline: core distances (k-th neighbor, self included) -> minimum spanning
tree of the mutual-reachability graph -> single-linkage dendrogram ->
condensed tree at ``min_cluster_size`` -> excess-of-mass cluster selection.
The root is never selected, so data without a stable density split comes
back as all noise.

Outlier scores follow the hierarchy: a point that leaves its cluster at
density lambda_p, inside a subtree whose densest point survives to
lambda_max, scores (lambda_max - lambda_p) / lambda_max in [0, 1].
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from sklearn.neighbors import NearestNeighbors


@dataclass(frozen=True)
class ClusterParams:
    min_cluster_size: int = 15
    min_samples: int | None = None  # defaults to min_cluster_size

    def resolved_min_samples(self) -> int:
        return self.min_samples if self.min_samples is not None else self.min_cluster_size


@dataclass
class ClusterAssignment:
    labels: np.ndarray  # (n,) cluster ids, -1 = noise
    sizes: dict[int, int]  # cluster id -> member count (includes -1)
    n_clusters: int
    stabilities: dict[int, float] = field(default_factory=dict)
    degenerate: bool = False

    def largest_cluster(self) -> int:
        """Largest non-noise cluster id; ties go to the lowest id. -1 if none."""
        best = -1
        best_size = -1
        for label in sorted(k for k in self.sizes if k != -1):
            if self.sizes[label] > best_size:
                best, best_size = label, self.sizes[label]
        return best


@njit(cache=True)
def _mst_edges(X, core):
    """Prim's MST over the implicit mutual-reachability graph, O(n^2)."""
    n = X.shape[0]
    in_tree = np.zeros(n, dtype=np.bool_)
    best_dist = np.full(n, np.inf)
    best_from = np.zeros(n, dtype=np.int64)
    edges = np.empty((n - 1, 3))
    current = 0
    in_tree[0] = True
    for step in range(n - 1):
        cx = X[current]
        ccore = core[current]
        for j in range(n):
            if in_tree[j]:
                continue
            d = 0.0
            for t in range(X.shape[1]):
                diff = cx[t] - X[j, t]
                d += diff * diff
            d = np.sqrt(d)
            if ccore > d:
                d = ccore
            if core[j] > d:
                d = core[j]
            if d < best_dist[j]:
                best_dist[j] = d
                best_from[j] = current
        nxt = -1
        nxt_dist = np.inf
        for j in range(n):
            if not in_tree[j] and best_dist[j] < nxt_dist:
                nxt_dist = best_dist[j]
                nxt = j
        edges[step, 0] = best_from[nxt]
        edges[step, 1] = nxt
        edges[step, 2] = nxt_dist
        in_tree[nxt] = True
        current = nxt
    return edges


def _single_linkage(edges: np.ndarray, n: int) -> np.ndarray:
    """Merge sorted MST edges into a dendrogram: rows (left, right, dist, size)."""
    order = np.lexsort((edges[:, 1], edges[:, 0], edges[:, 2]))
    edges = edges[order]
    parent = np.arange(2 * n - 1, dtype=np.int64)
    size = np.ones(2 * n - 1, dtype=np.int64)
    hierarchy = np.empty((n - 1, 4))

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    nxt = n
    for i in range(n - 1):
        a = find(int(edges[i, 0]))
        b = find(int(edges[i, 1]))
        hierarchy[i] = (a, b, edges[i, 2], size[a] + size[b])
        parent[a] = parent[b] = nxt
        size[nxt] = size[a] + size[b]
        nxt += 1
    return hierarchy


def _bfs_leaves(hierarchy: np.ndarray, node: int, n: int) -> list[int]:
    out = []
    queue = [node]
    while queue:
        x = queue.pop()
        if x < n:
            out.append(x)
        else:
            row = hierarchy[x - n]
            queue.append(int(row[0]))
            queue.append(int(row[1]))
    return out


def _condense_tree(hierarchy: np.ndarray, min_cluster_size: int):
    """Edge list (parent, child, lambda, child_size) with small branches pruned."""
    n = hierarchy.shape[0] + 1
    root = 2 * n - 2
    relabel = {root: n}
    next_label = n + 1
    rows: list[tuple[int, int, float, int]] = []
    ignore: set[int] = set()

    queue = [root]
    order = []
    while queue:
        node = queue.pop(0)
        order.append(node)
        if node >= n:
            row = hierarchy[node - n]
            queue.append(int(row[0]))
            queue.append(int(row[1]))

    for node in order:
        if node < n or node in ignore:
            continue
        left, right, dist, _ = hierarchy[node - n]
        left, right = int(left), int(right)
        lam = 1.0 / dist if dist > 0.0 else np.inf
        left_count = int(hierarchy[left - n][3]) if left >= n else 1
        right_count = int(hierarchy[right - n][3]) if right >= n else 1

        if left_count >= min_cluster_size and right_count >= min_cluster_size:
            for child, count in ((left, left_count), (right, right_count)):
                relabel[child] = next_label
                rows.append((relabel[node], next_label, lam, count))
                next_label += 1
        else:
            survivors = []
            if left_count >= min_cluster_size:
                survivors.append(left)
            if right_count >= min_cluster_size:
                survivors.append(right)
            for child in (left, right):
                if child in survivors:
                    relabel[child] = relabel[node]
                    continue
                for sub in _bfs_leaves(hierarchy, child, n):
                    rows.append((relabel[node], sub, lam, 1))
                if child >= n:
                    stack = [child]
                    while stack:
                        x = stack.pop()
                        if x >= n:
                            ignore.add(x)
                            r = hierarchy[x - n]
                            stack.append(int(r[0]))
                            stack.append(int(r[1]))
    parents = np.array([r[0] for r in rows], dtype=np.int64)
    children = np.array([r[1] for r in rows], dtype=np.int64)
    lambdas = np.array([r[2] for r in rows])
    sizes = np.array([r[3] for r in rows], dtype=np.int64)
    return parents, children, lambdas, sizes


def _stabilities(parents, children, lambdas, sizes) -> dict[int, float]:
    births: dict[int, float] = {}
    for child, lam in zip(children, lambdas):
        births[int(child)] = float(lam)
    root = int(parents.min())
    births[root] = 0.0
    result: dict[int, float] = {}
    for parent, lam, size in zip(parents, lambdas, sizes):
        parent = int(parent)
        lam_birth = births[parent]
        lam = min(float(lam), np.finfo(np.float64).max)
        result[parent] = result.get(parent, 0.0) + (lam - lam_birth) * int(size)
    return result


def _select_eom(parents, children, sizes, stability: dict[int, float]) -> set[int]:
    """Excess-of-mass selection; the root is never selectable."""
    root = int(parents.min())
    cluster_children: dict[int, list[int]] = {}
    for parent, child, size in zip(parents, children, sizes):
        if size > 1:
            cluster_children.setdefault(int(parent), []).append(int(child))

    stability = dict(stability)
    selected: dict[int, bool] = {}
    for node in sorted(stability, reverse=True):
        if node == root:
            continue
        subtree = sum(stability.get(c, 0.0) for c in cluster_children.get(node, []))
        if subtree > stability[node]:
            selected[node] = False
            stability[node] = subtree
        else:
            selected[node] = True
            stack = list(cluster_children.get(node, []))
            while stack:
                x = stack.pop()
                selected[x] = False
                stack.extend(cluster_children.get(x, []))
    return {c for c, keep in selected.items() if keep}


def _label_points(parents, children, sizes, selected: set[int], n: int) -> np.ndarray:
    """Each point joins the selected cluster nearest above it, else noise."""
    parent_of: dict[int, int] = {}
    for parent, child in zip(parents, children):
        parent_of[int(child)] = int(parent)
    label_map = {node: i for i, node in enumerate(sorted(selected))}
    labels = np.full(n, -1, dtype=np.int64)
    resolve_cache: dict[int, int] = {}

    def resolve(node: int) -> int:
        path = []
        while True:
            if node in resolve_cache:
                result = resolve_cache[node]
                break
            if node in selected:
                result = node
                break
            if node not in parent_of:  # reached the root
                result = -1
                break
            path.append(node)
            node = parent_of[node]
        for s in path:
            resolve_cache[s] = result
        return result

    for parent, child, size in zip(parents, children, sizes):
        if size == 1:
            cluster = resolve(int(parent))
            if cluster != -1:
                labels[int(child)] = label_map[cluster]
    return labels


def _outlier_scores(parents, children, lambdas, sizes, n: int) -> np.ndarray:
    """(lambda_max - lambda_p) / lambda_max against the subtree maximum."""
    deaths: dict[int, float] = {}
    for parent, lam, size in zip(parents, lambdas, sizes):
        if size == 1 and np.isfinite(lam):
            parent = int(parent)
            deaths[parent] = max(deaths.get(parent, 0.0), float(lam))
    # Propagate subtree maxima upward; children have larger node ids.
    cluster_edges = [
        (int(p), int(c)) for p, c, s in zip(parents, children, sizes) if s > 1
    ]
    for parent, child in sorted(cluster_edges, key=lambda e: -e[0]):
        if deaths.get(child, 0.0) > deaths.get(parent, 0.0):
            deaths[parent] = deaths[child]

    scores = np.zeros(n)
    for parent, child, lam, size in zip(parents, children, lambdas, sizes):
        if size != 1:
            continue
        lam_max = deaths.get(int(parent), 0.0)
        if lam_max <= 0.0 or not np.isfinite(lam):
            continue
        scores[int(child)] = (lam_max - min(float(lam), lam_max)) / lam_max
    return scores


def cluster_density(
    coords: np.ndarray, params: ClusterParams = ClusterParams()
) -> tuple[ClusterAssignment, np.ndarray]:
    """Cluster 2-D coordinates; returns (assignment, outlier scores in [0,1])."""
    coords = np.ascontiguousarray(coords, dtype=np.float64)
    n = coords.shape[0]
    if n < params.min_cluster_size:
        raise ValueError(
            f"{n} points is fewer than min_cluster_size={params.min_cluster_size}"
        )
    if np.all(coords == coords[0]):
        warnings.warn("degenerate geometry: all points identical", RuntimeWarning)
        labels = np.zeros(n, dtype=np.int64)
        return (
            ClusterAssignment(labels, {0: n}, 1, degenerate=True),
            np.zeros(n),
        )

    k = min(params.resolved_min_samples(), n)
    nn = NearestNeighbors(n_neighbors=k).fit(coords)
    core = np.ascontiguousarray(nn.kneighbors(coords)[0][:, -1])
    edges = _mst_edges(coords, core)
    hierarchy = _single_linkage(edges, n)
    parents, children, lambdas, sizes = _condense_tree(
        hierarchy, params.min_cluster_size
    )
    stability = _stabilities(parents, children, lambdas, sizes)
    selected = _select_eom(parents, children, sizes, stability)
    labels = _label_points(parents, children, sizes, selected, n)
    scores = _outlier_scores(parents, children, lambdas, sizes, n)

    unique, counts = np.unique(labels, return_counts=True)
    size_map = {int(u): int(c) for u, c in zip(unique, counts)}
    label_map = {node: i for i, node in enumerate(sorted(selected))}
    assignment = ClusterAssignment(
        labels=labels,
        sizes=size_map,
        n_clusters=len(selected),
        stabilities={label_map[c]: stability[c] for c in selected},
    )
    return assignment, scores
