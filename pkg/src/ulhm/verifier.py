"""Hierarchical homeomorphism verification.

Three levels are checked in a fixed order and the first violation wins:

1. global match  -- fragmentation (beta0 and W2 together), then pairwise W2;
2. local match   -- trust per domain, continuity per domain when clustering
   is required;
3. semantic match -- alignment error when modalities are paired.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, DimensionError, IncompleteBundleError
from .metrics import (
    BettiConfig,
    MetricBundle,
    SlicedW2Config,
    alignment_error,
    betti0,
    continuity,
    estimate_bilipschitz,
    pairwise_w2,
    purity,
    trust_rank,
)
from .neighbors import DistanceMatrix, knn, mst_edges, pairwise_distances, rank_matrix
from .store import EmbeddingSet, PairedEmbeddings

SCHEMA_VERSION = 1


class FailureMode(str, Enum):
    STRUCTURAL_FRAGMENTATION = "StructuralFragmentation"
    GEOMETRIC_MISALIGNMENT = "GeometricMisalignment"
    LOCAL_MANIFOLD_COLLAPSE = "LocalManifoldCollapse"
    STRUCTURAL_INCOHERENCE = "StructuralIncoherence"
    INCONSISTENT_CROSS_MODAL_MAPPING = "InconsistentCrossModalMapping"


@dataclass(frozen=True)
class Thresholds:
    tau_w: float = 0.30
    tau_t: float = 0.80
    tau_c: float = 0.70
    tau_a: float = 0.30
    beta0_max: int = 1

    def __post_init__(self):
        for name in ("tau_w", "tau_t", "tau_c", "tau_a"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.beta0_max < 1:
            raise ConfigError("beta0_max must be >= 1")


@dataclass(frozen=True)
class VerifierFlags:
    has_paired_modalities: bool = False
    requires_clustering: bool = False


@dataclass(frozen=True)
class Trigger:
    metric: str
    value: float
    threshold: float
    domain: str | None = None


@dataclass(frozen=True)
class Verdict:
    passed: bool
    failure_mode: FailureMode | None = None
    trigger: Trigger | None = None

    @property
    def outcome(self) -> str:
        return "PASS" if self.passed else "FAIL"

    def to_dict(self) -> dict:
        out: dict = {"verdict": self.outcome}
        if self.failure_mode is not None:
            out["failure_mode"] = self.failure_mode.value
        if self.trigger is not None:
            out["trigger"] = {k: v for k, v in asdict(self.trigger).items() if v is not None}
        return out


PASS = Verdict(True)


def _fail(mode: FailureMode, metric: str, value: float, threshold: float, domain: str | None = None) -> Verdict:
    return Verdict(False, mode, Trigger(metric, float(value), float(threshold), domain))


def _max_offdiag(w2: np.ndarray) -> float:
    iu = np.triu_indices(w2.shape[0], 1)
    return float(w2[iu].max())


def verify(bundle: MetricBundle, th: Thresholds = Thresholds(), flags: VerifierFlags = VerifierFlags()) -> Verdict:
    if bundle.betti0 is None:
        raise IncompleteBundleError("bundle lacks betti0")
    if bundle.w2 is None:
        raise IncompleteBundleError("bundle lacks pairwise W2")
    tags = bundle.domain_tags
    if not tags:
        raise IncompleteBundleError("bundle names no domains")
    missing = [t for t in tags if t not in bundle.trust]
    if missing:
        raise IncompleteBundleError(f"trust missing for domains {missing}")
    if flags.requires_clustering:
        missing = [t for t in tags if t not in bundle.continuity]
        if missing:
            raise IncompleteBundleError(f"continuity missing for domains {missing}")
    if flags.has_paired_modalities and bundle.alignment is None:
        raise IncompleteBundleError("paired modalities flagged but alignment is missing")

    w2 = np.asarray(bundle.w2, dtype=np.float64)
    if w2.shape != (len(tags), len(tags)):
        raise IncompleteBundleError(f"w2 shape {w2.shape} does not match {len(tags)} domains")

    # step 1: global match
    if len(tags) > 1:
        worst = _max_offdiag(w2)
        if bundle.betti0 > th.beta0_max and worst > th.tau_w:
            return _fail(FailureMode.STRUCTURAL_FRAGMENTATION, "betti0", bundle.betti0, th.beta0_max)
        for i in range(len(tags)):
            for j in range(i + 1, len(tags)):
                if w2[i, j] > th.tau_w:
                    return _fail(FailureMode.GEOMETRIC_MISALIGNMENT, "w2", w2[i, j], th.tau_w, f"{tags[i]}|{tags[j]}")

    # step 2: local match
    for tag in tags:
        if bundle.trust[tag] < th.tau_t:
            return _fail(FailureMode.LOCAL_MANIFOLD_COLLAPSE, "trust", bundle.trust[tag], th.tau_t, tag)
    if flags.requires_clustering:
        for tag in tags:
            if bundle.continuity[tag] < th.tau_c:
                return _fail(FailureMode.STRUCTURAL_INCOHERENCE, "continuity", bundle.continuity[tag], th.tau_c, tag)

    # step 3: semantic match
    if flags.has_paired_modalities and bundle.alignment > th.tau_a:
        return _fail(FailureMode.INCONSISTENT_CROSS_MODAL_MAPPING, "alignment", bundle.alignment, th.tau_a)
    return PASS


@dataclass(frozen=True)
class MetricConfig:
    kappa: int = 5
    metric: str = "cosine"  # neighborhood metrics; global/alignment metrics are euclidean
    betti: BettiConfig = field(default_factory=BettiConfig)
    w2: SlicedW2Config = field(default_factory=SlicedW2Config)
    trust_source: str = "rank"  # or "purity"
    bilipschitz_pairs: int = 0
    seed: int = 42

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa,
            "metric": self.metric,
            "betti": {"epsilon": self.betti.epsilon, "auto_rule": self.betti.auto_rule, "kappa": self.betti.kappa},
            "w2": {"n_projections": self.w2.n_projections, "seed": self.w2.seed},
            "trust_source": self.trust_source,
            "bilipschitz_pairs": self.bilipschitz_pairs,
            "seed": self.seed,
        }


def compute_metrics(
    domains: list[EmbeddingSet],
    inputs: dict[str, EmbeddingSet | DistanceMatrix | np.ndarray],
    pairs: list[PairedEmbeddings] | PairedEmbeddings | None = None,
    cfg: MetricConfig = MetricConfig(),
) -> MetricBundle:
    """Compute the full bundle over latent domains.

    ``inputs`` maps each domain tag to its input-space points (an EmbeddingSet
    or coordinate matrix) or a precomputed DistanceMatrix; the rank
    metrics compare the two spaces and cannot be formed from latents alone.
    """
    if not domains:
        raise IncompleteBundleError("at least one domain is required")
    if len({d.dim for d in domains}) != 1:
        raise DimensionError("domains disagree on latent dimension")
    if cfg.trust_source not in ("rank", "purity"):
        raise ConfigError(f"unknown trust source {cfg.trust_source!r}")
    tags = [d.domain_tag for d in domains]

    pool = np.vstack([d.points for d in domains])
    if pool.shape[0] >= 2:
        pool_dist = pairwise_distances(pool, "euclidean")
        mst = mst_edges(pool_dist)
        b0, eps = betti0(mst, cfg.betti, pool_dist)
        gaps = np.sort(mst.weight)
    else:
        b0, eps, gaps = 1, 0.0, np.zeros(0)
    w2 = pairwise_w2(domains, cfg.w2)

    trust, cont, pur = {}, {}, {}
    c1, c2 = math.inf, -math.inf
    for dom in domains:
        tag = dom.domain_tag
        if tag not in inputs:
            raise IncompleteBundleError(f"domain {tag!r} has no input-space data")
        inp = inputs[tag]
        if isinstance(inp, DistanceMatrix):
            if inp.n != dom.n:
                raise DimensionError(f"domain {tag!r}: {inp.n} input rows vs {dom.n} latents")
            x_nb_dist = x_eu = inp
        else:
            x_pts = inp.points if isinstance(inp, EmbeddingSet) else np.asarray(inp, dtype=np.float64)
            if x_pts.shape[0] != dom.n:
                raise DimensionError(f"domain {tag!r}: {x_pts.shape[0]} input rows vs {dom.n} latents")
            x_nb_dist = pairwise_distances(x_pts, cfg.metric)
            x_eu = x_nb_dist if cfg.metric == "euclidean" else pairwise_distances(x_pts, "euclidean")
        z_nb_dist = pairwise_distances(dom.points, cfg.metric)
        k = cfg.kappa
        trust[tag] = trust_rank(rank_matrix(z_nb_dist), knn(x_nb_dist, k))
        z_nbrs = knn(z_nb_dist, k)
        cont[tag] = continuity(rank_matrix(x_nb_dist), z_nbrs)
        if dom.labels is not None:
            pur[tag] = purity(z_nbrs, dom.labels)[1]
        z_eu = z_nb_dist if cfg.metric == "euclidean" else pairwise_distances(dom.points, "euclidean")
        bl = estimate_bilipschitz(x_eu, z_eu, cfg.bilipschitz_pairs, cfg.seed)
        c1, c2 = min(c1, bl.c1), max(c2, bl.c2)

    if cfg.trust_source == "purity":
        missing = [t for t in tags if t not in pur]
        if missing:
            raise IncompleteBundleError(f"purity-based trust needs labels for {missing}")
        trust = dict(pur)

    if isinstance(pairs, PairedEmbeddings):
        pairs = [pairs]
    alignment = None
    if pairs:
        a = np.vstack([p.a_rows for p in pairs])
        b = np.vstack([p.b_rows for p in pairs])
        dist = np.linalg.norm(a - b, axis=1)
        alignment = math.fsum(dist) / dist.shape[0] if len(pairs) > 1 else alignment_error(pairs[0])

    return MetricBundle(
        domain_tags=tags,
        betti0=b0,
        epsilon_used=eps,
        persistence_gaps=gaps,
        w2=w2,
        trust=trust,
        continuity=cont,
        purity=pur or None,
        alignment=alignment,
        bilipschitz=(c1, c2),
    )


def compute_and_verify(
    domains: list[EmbeddingSet],
    inputs: dict[str, EmbeddingSet | DistanceMatrix | np.ndarray],
    pairs: list[PairedEmbeddings] | PairedEmbeddings | None = None,
    cfg: MetricConfig = MetricConfig(),
    th: Thresholds = Thresholds(),
    flags: VerifierFlags = VerifierFlags(),
) -> tuple[MetricBundle, Verdict]:
    """All metrics are computed even when an early step fails (audit mode)."""
    if flags.has_paired_modalities and not pairs:
        raise IncompleteBundleError("paired modalities flagged but no pairs supplied")
    bundle = compute_metrics(domains, inputs, pairs, cfg)
    return bundle, verify(bundle, th, flags)


def build_report(bundle: MetricBundle, verdict: Verdict | None, th: Thresholds, flags: VerifierFlags, config: dict) -> dict:
    """Report document with a stable key order."""
    report: dict = {"schema_version": SCHEMA_VERSION}
    if verdict is not None:
        report.update(verdict.to_dict())
    report["metrics"] = bundle.to_dict()
    report["thresholds"] = asdict(th)
    report["flags"] = asdict(flags)
    report["config"] = config
    return report
