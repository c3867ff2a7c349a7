"""Geometric primitives: distance matrices, kNN lists, rank matrices and MST edges.

All ties are broken towards the smaller index so that rank-based metrics are
well defined on degenerate inputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, DataError, DegenerateError
from .store import EmbeddingSet

METRICS = ("euclidean", "cosine")


@dataclass(eq=False)
class DistanceMatrix:
    values: np.ndarray
    metric: str = "euclidean"

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(eq=False)
class NeighborLists:
    indices: np.ndarray  # (N, kappa), ascending distance

    @property
    def kappa(self) -> int:
        return self.indices.shape[1]

    @property
    def n(self) -> int:
        return self.indices.shape[0]

    def edges(self) -> np.ndarray:
        """Directed (i, j) pairs, one per neighbor relation."""
        n, k = self.indices.shape
        return np.column_stack([np.repeat(np.arange(n), k), self.indices.ravel()])


@dataclass(eq=False)
class RankMatrix:
    ranks: np.ndarray  # ranks[i, j] in 1..N-1, diagonal 0

    @property
    def n(self) -> int:
        return self.ranks.shape[0]


@dataclass(eq=False)
class MstEdges:
    i: np.ndarray
    j: np.ndarray
    weight: np.ndarray
    n_points: int

    def __len__(self) -> int:
        return self.weight.shape[0]


def _points(x) -> np.ndarray:
    if isinstance(x, EmbeddingSet):
        return x.points
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError("expected an N x d matrix")
    return arr


def pairwise_distances(x, metric: str = "euclidean") -> DistanceMatrix:
    """Dense symmetric distance matrix with an exact zero diagonal.

    ``metric='cosine'`` yields ``1 - cos`` clipped to [0, 2].
    """
    pts = _points(x)
    if metric not in METRICS:
        raise ConfigError(f"unknown metric {metric!r}; choose from {METRICS}")
    n = pts.shape[0]
    if n < 2:
        raise ConfigError("pairwise distances need at least 2 points")
    if metric == "cosine":
        norms = np.sqrt(np.einsum("ij,ij->i", pts, pts))
        if np.any(norms == 0):
            raise DegenerateError(f"zero-norm row {int(np.argmin(norms))} under cosine metric")
        D = np.clip(cdist(pts, pts, metric="cosine"), 0.0, 2.0)
    else:
        D = cdist(pts, pts, metric="euclidean")
    D = np.triu(D, 1)
    D = D + D.T
    return DistanceMatrix(D, metric)


def _sorted_others(D: np.ndarray) -> np.ndarray:
    """Row-wise stable ordering of all other points, self removed."""
    n = D.shape[0]
    order = np.argsort(D, axis=1, kind="stable")
    keep = order != np.arange(n)[:, None]
    return order[keep].reshape(n, n - 1)


def _matrix(D) -> np.ndarray:
    return D.values if isinstance(D, DistanceMatrix) else np.asarray(D, dtype=np.float64)


def knn(D, kappa: int) -> NeighborLists:
    M = _matrix(D)
    n = M.shape[0]
    if not 1 <= kappa < n:
        raise ConfigError(f"kappa must satisfy 1 <= kappa < N (kappa={kappa}, N={n})")
    return NeighborLists(_sorted_others(M)[:, :kappa].copy())


def rank_matrix(D) -> RankMatrix:
    M = _matrix(D)
    n = M.shape[0]
    ranks = np.zeros((n, n), dtype=np.int64)
    if n > 1:
        order = _sorted_others(M)
        rows = np.repeat(np.arange(n), n - 1)
        ranks[rows, order.ravel()] = np.tile(np.arange(1, n), n)
    return RankMatrix(ranks)


def mst_edges(D) -> MstEdges:
    """Prim's algorithm on the dense graph; edges returned by ascending weight."""
    M = _matrix(D)
    n = M.shape[0]
    if n == 0:
        raise ConfigError("MST of an empty point set")
    ei = np.empty(n - 1, dtype=np.int64)
    ej = np.empty(n - 1, dtype=np.int64)
    ew = np.empty(n - 1, dtype=np.float64)
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = M[0].copy()
    parent = np.zeros(n, dtype=np.int64)
    for k in range(n - 1):
        cand = np.where(in_tree, np.inf, best)
        v = int(np.argmin(cand))
        ei[k], ej[k], ew[k] = min(parent[v], v), max(parent[v], v), best[v]
        in_tree[v] = True
        closer = M[v] < best
        best = np.where(closer, M[v], best)
        parent = np.where(closer, v, parent)
    order = np.lexsort((ej, ei, ew))
    return MstEdges(ei[order], ej[order], ew[order], n)
