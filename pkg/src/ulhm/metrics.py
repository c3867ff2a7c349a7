"""Verification statistics for latent embeddings.

Global: zero-dimensional Betti number of the pooled latents (via the MST
filtration) and sliced Wasserstein-2 between domains.  Local: rank-based
trustworthiness and continuity against the input space, and label purity of
latent neighborhoods.  Semantic: mean distance between paired embeddings.
Plus an empirical bi-Lipschitz estimate from two distance matrices.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DataError, DimensionError, EmptyError, PairError, DegenerateError
from .neighbors import DistanceMatrix, MstEdges, NeighborLists, RankMatrix, knn
from .store import EmbeddingSet, PairedEmbeddings

AUTO_RULES = ("largest-gap", "median-knn")


@dataclass(frozen=True)
class BettiConfig:
    epsilon: float | None = None
    auto_rule: str = "largest-gap"
    kappa: int = 5  # neighbor order used by the median-knn rule

    def __post_init__(self):
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.auto_rule not in AUTO_RULES:
            raise ConfigError(f"unknown auto rule {self.auto_rule!r}")


@dataclass(frozen=True)
class SlicedW2Config:
    n_projections: int = 128
    seed: int = 42

    def __post_init__(self):
        if self.n_projections < 1:
            raise ConfigError("n_projections must be >= 1")


class BiLipschitz(NamedTuple):
    c1: float
    c2: float
    degenerate: bool = False  # a pair with zero input distance had nonzero latent distance


@dataclass
class MetricBundle:
    """Everything the hierarchical verifier looks at, keyed by domain tag."""

    domain_tags: list[str]
    betti0: int | None = None
    epsilon_used: float | None = None
    persistence_gaps: np.ndarray | None = None
    w2: np.ndarray | None = None
    trust: dict[str, float] = field(default_factory=dict)
    continuity: dict[str, float] = field(default_factory=dict)
    purity: dict[str, float] | None = None
    alignment: float | None = None
    bilipschitz: tuple[float, float] | None = None

    def to_dict(self) -> dict:
        out: dict = {
            "domains": list(self.domain_tags),
            "betti0": self.betti0,
            "epsilon_used": self.epsilon_used,
            "w2": None if self.w2 is None else [[float(v) for v in row] for row in self.w2],
            "trust": {k: float(v) for k, v in self.trust.items()},
            "continuity": {k: float(v) for k, v in self.continuity.items()},
        }
        if self.persistence_gaps is not None:
            out["persistence_gaps"] = [float(v) for v in self.persistence_gaps]
        if self.purity is not None:
            out["purity"] = {k: float(v) for k, v in self.purity.items()}
        if self.alignment is not None:
            out["alignment"] = float(self.alignment)
        if self.bilipschitz is not None:
            out["bilipschitz"] = [float(self.bilipschitz[0]), float(self.bilipschitz[1])]
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricBundle":
        trust = {str(k): float(v) for k, v in (doc.get("trust") or {}).items()}
        cont = {str(k): float(v) for k, v in (doc.get("continuity") or {}).items()}
        tags = doc.get("domains") or list(dict.fromkeys([*trust, *cont]))
        w2 = doc.get("w2")
        if w2 is not None and not isinstance(w2, list):
            w2 = [[0.0, float(w2)], [float(w2), 0.0]]
        w2_arr = None if w2 is None else np.asarray(w2, dtype=np.float64)
        if w2_arr is not None and (w2_arr.ndim != 2 or w2_arr.shape[0] != w2_arr.shape[1]):
            raise DataError("w2 must be a square matrix")
        purity = doc.get("purity")
        bl = doc.get("bilipschitz")
        gaps = doc.get("persistence_gaps")
        return cls(
            domain_tags=[str(t) for t in tags],
            betti0=None if doc.get("betti0") is None else int(doc["betti0"]),
            epsilon_used=None if doc.get("epsilon_used") is None else float(doc["epsilon_used"]),
            persistence_gaps=None if gaps is None else np.asarray(gaps, dtype=np.float64),
            w2=w2_arr,
            trust=trust,
            continuity=cont,
            purity=None if purity is None else {str(k): float(v) for k, v in purity.items()},
            alignment=None if doc.get("alignment") is None else float(doc["alignment"]),
            bilipschitz=None if bl is None else (float(bl[0]), float(bl[1])),
        )


# --------------------------------------------------------------------------- global match


def betti0(mst: MstEdges, cfg: BettiConfig = BettiConfig(), distances: DistanceMatrix | None = None) -> tuple[int, float]:
    """Connected components of the epsilon-neighborhood graph, read off the MST.

    Returns ``(count, epsilon_used)`` where ``count = 1 + #{MST edges > epsilon}``.
    Without an explicit epsilon the scale comes from ``cfg.auto_rule``:
    ``largest-gap`` puts epsilon at the midpoint of the widest gap between
    consecutive sorted MST weights; ``median-knn`` uses twice the median
    distance to the ``cfg.kappa``-th neighbor (needs ``distances``).
    """
    if mst.n_points == 0:
        raise EmptyError("betti0 of an empty point set")
    w = np.sort(mst.weight)
    if cfg.epsilon is not None:
        eps = float(cfg.epsilon)
    elif cfg.auto_rule == "median-knn":
        if distances is None:
            raise ConfigError("median-knn rule needs the distance matrix")
        if distances.n < 2:
            return 1, 0.0
        k = min(cfg.kappa, distances.n - 1)
        nb = knn(distances, k).indices[:, -1]
        eps = 2.0 * float(np.median(distances.values[np.arange(distances.n), nb]))
    elif w.size == 0:
        return 1, 0.0
    elif w.size == 1:
        eps = float(w[0])
    else:
        gaps = np.diff(w)
        k = int(np.argmax(gaps))
        eps = 0.5 * float(w[k] + w[k + 1])
    return 1 + int(np.count_nonzero(w > eps)), eps


def _pts(x) -> np.ndarray:
    return x.points if isinstance(x, EmbeddingSet) else np.asarray(x, dtype=np.float64)


def random_directions(d: int, n: int, seed: int) -> np.ndarray:
    """Unit vectors drawn uniformly on the sphere (normalized Gaussians)."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, d))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    while np.any(norms == 0):  # measure-zero, kept for safety
        bad = norms[:, 0] == 0
        g[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
    return g / norms


def _on_grid(sorted_vals: np.ndarray, n: int) -> np.ndarray:
    """Empirical quantile function sampled at levels (k + 0.5) / n."""
    m = sorted_vals.shape[-1]
    if m == n:
        return sorted_vals
    src = (np.arange(m) + 0.5) / m
    dst = (np.arange(n) + 0.5) / n
    return np.stack([np.interp(dst, src, row) for row in sorted_vals])


def _mean(values) -> float:
    """Correctly summed mean, shifted by the first value so equal inputs return it exactly."""
    v0 = float(values[0])
    return v0 + math.fsum(v - v0 for v in values) / len(values)


def sliced_w2(a, b, cfg: SlicedW2Config = SlicedW2Config()) -> float:
    """Sliced Wasserstein-2 distance between two point clouds.

    sqrt of the mean, over ``cfg.n_projections`` random directions, of the
    1-D squared W2 between the projected samples.
    """
    pa, pb = _pts(a), _pts(b)
    if pa.shape[0] == 0 or pb.shape[0] == 0:
        raise EmptyError("sliced_w2 needs nonempty sets")
    if pa.shape[1] != pb.shape[1]:
        raise DimensionError(f"dimension mismatch: {pa.shape[1]} vs {pb.shape[1]}")
    theta = random_directions(pa.shape[1], cfg.n_projections, cfg.seed)
    qa = np.sort(theta @ pa.T, axis=1)
    qb = np.sort(theta @ pb.T, axis=1)
    n = max(qa.shape[1], qb.shape[1])
    diff = _on_grid(qa, n) - _on_grid(qb, n)
    per_dir = [_mean(row) for row in (diff * diff).tolist()]
    return math.sqrt(_mean(per_dir))


def pairwise_w2(sets, cfg: SlicedW2Config = SlicedW2Config()) -> np.ndarray:
    k = len(sets)
    W = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            W[i, j] = W[j, i] = sliced_w2(sets[i], sets[j], cfg)
    return W


# --------------------------------------------------------------------------- local match


def _rank_penalty(ranks: RankMatrix, nbrs: NeighborLists) -> float:
    n, kappa = ranks.n, nbrs.kappa
    if nbrs.n != n:
        raise DimensionError(f"rank matrix has {n} rows, neighbor lists {nbrs.n}")
    norm = n * kappa * (2 * n - 3 * kappa - 1)
    if norm <= 0:
        raise ConfigError(f"kappa={kappa} too large for N={n}: need kappa < (2N-1)/3")
    r = ranks.ranks[np.arange(n)[:, None], nbrs.indices]
    total = int(np.maximum(r - kappa, 0).sum())
    return 1.0 - 2.0 * total / norm


def continuity(rank_input: RankMatrix, nbr_latent: NeighborLists) -> float:
    """Penalizes latent neighbors that sit beyond rank kappa in the input space."""
    return _rank_penalty(rank_input, nbr_latent)


def trust_rank(rank_latent: RankMatrix, nbr_input: NeighborLists) -> float:
    """Penalizes input neighbors that sit beyond rank kappa in the latent space."""
    return _rank_penalty(rank_latent, nbr_input)


def purity(nbr_latent: NeighborLists, labels) -> tuple[np.ndarray, float]:
    if labels is None:
        raise DataError("purity needs labels")
    lab = np.asarray(labels)
    if lab.shape[0] != nbr_latent.n:
        raise DimensionError("labels and neighbor lists differ in length")
    per_point = (lab[nbr_latent.indices] == lab[:, None]).mean(axis=1)
    return per_point, float(per_point.mean())


# --------------------------------------------------------------------------- semantic match


def alignment_error(p: PairedEmbeddings) -> float:
    if p.pairs.shape[0] == 0:
        raise PairError("alignment error needs at least one pair")
    dist = np.linalg.norm(p.a_rows - p.b_rows, axis=1)
    return math.fsum(dist) / dist.shape[0]


# --------------------------------------------------------------------------- bi-Lipschitz


def estimate_bilipschitz(x_dist, z_dist, sample_pairs: int = 0, seed: int = 0) -> BiLipschitz:
    """Min and max of d_Z / d_X over index pairs; ``sample_pairs=0`` uses all pairs."""
    X = x_dist.values if isinstance(x_dist, DistanceMatrix) else np.asarray(x_dist, float)
    Z = z_dist.values if isinstance(z_dist, DistanceMatrix) else np.asarray(z_dist, float)
    if X.shape != Z.shape:
        raise DimensionError(f"distance matrices differ in shape: {X.shape} vs {Z.shape}")
    n = X.shape[0]
    if n < 2:
        raise ConfigError("bi-Lipschitz estimate needs at least 2 points")
    if sample_pairs < 0:
        raise ConfigError("sample_pairs must be >= 0")
    if sample_pairs == 0:
        i, j = np.triu_indices(n, 1)
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, sample_pairs)
        j = rng.integers(0, n - 1, sample_pairs)
        j = j + (j >= i)
    dx, dz = X[i, j], Z[i, j]
    pos = dx > 0
    degenerate = bool(np.any(~pos & (dz > 0)))
    if not pos.any():
        raise DegenerateError("every sampled pair has zero input distance")
    ratio = dz[pos] / dx[pos]
    c1, c2 = float(ratio.min()), float(ratio.max())
    if degenerate:
        c2 = math.inf
    return BiLipschitz(c1, c2, degenerate)
