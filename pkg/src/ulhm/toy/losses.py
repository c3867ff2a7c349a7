"""Loss terms with analytic gradients.

Every function returns ``(value, grad)`` where ``grad`` has the shape of the
differentiated input (a list of arrays for multi-input losses).
"""
from __future__ import annotations

from dataclasses import dataclass
import logging

import numpy as np

from ..errors import ConfigError, DataError, DegenerateError, DimensionError

log = logging.getLogger(__name__)

LIKELIHOODS = ("gaussian", "bernoulli", "categorical")


@dataclass(frozen=True)
class LossWeights:
    lambda_c: float = 1.0
    lambda_l: float = 0.1
    lambda_cos: float = 1.0
    lambda_eucl: float = 0.0
    # the contrastive term is a sum over every (anchor, positive) pair, roughly
    # N * N / C terms, so its weight is small next to the mean-reduced recon
    lambda_cont: float = 1e-3
    lambda_cent: float = 10.0
    temperature: float = 0.1

    def __post_init__(self):
        for name in ("lambda_c", "lambda_l", "lambda_cos", "lambda_eucl", "lambda_cont", "lambda_cent"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive")


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over rows."""
    logits = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if y.shape != (b,):
        raise DimensionError(f"expected {b} labels, got {y.shape}")
    if np.any(y < 0) or np.any(y >= c):
        raise DataError(f"label outside [0, {c})")
    logp = _log_softmax(logits)
    rows = np.arange(b)
    value = -logp[rows, y].mean()
    grad = np.exp(logp)
    grad[rows, y] -= 1.0
    return float(value), grad / b


def loss_recon(decoded: np.ndarray, target, likelihood: str = "gaussian") -> tuple[float, np.ndarray]:
    """Reconstruction negative log-likelihood (up to constants).

    gaussian: mean squared error.  bernoulli: mean binary cross-entropy with
    ``decoded`` as logits and {0,1} targets.  categorical: mean cross-entropy
    with ``decoded`` as logits and integer class targets.
    """
    decoded = np.asarray(decoded, dtype=np.float64)
    if likelihood == "categorical":
        return loss_cross_entropy(decoded, target)
    target = np.asarray(target, dtype=np.float64)
    if decoded.shape != target.shape:
        raise DimensionError(f"decoded {decoded.shape} vs target {target.shape}")
    n = decoded.size
    if likelihood == "gaussian":
        diff = decoded - target
        return float(np.mean(diff * diff)), 2.0 * diff / n
    if likelihood == "bernoulli":
        if not np.all((target == 0) | (target == 1)):
            raise DataError("bernoulli targets must be 0 or 1")
        # softplus(l) - t*l, evaluated stably
        value = np.logaddexp(0.0, decoded) - target * decoded
        sig = 0.5 * (1.0 + np.tanh(0.5 * decoded))
        return float(value.mean()), (sig - target) / n
    raise ConfigError(f"unknown likelihood {likelihood!r}")


def _unit_rows(z: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.sqrt(np.einsum("ij,ij->i", z, z))
    if np.any(norms == 0):
        raise DegenerateError(f"zero-norm latent row {int(np.argmin(norms))} in {what}")
    return z / norms[:, None], norms


def _cosine_grad(u: np.ndarray, norm: np.ndarray, dU: np.ndarray) -> np.ndarray:
    """Pull a gradient through row normalization u = z / |z|."""
    return (dU - u * np.einsum("ij,ij->i", u, dU)[:, None]) / norm[:, None]


def consistency_pairs(n_groups: int, semantic: list[bool] | None = None) -> list[tuple[int, int]]:
    """Observation/observation pairs (m < m') and observation/semantic pairs."""
    sem = semantic or [False] * n_groups
    pairs = []
    for a in range(n_groups):
        for b in range(a + 1, n_groups):
            if sem[a] and sem[b]:
                continue
            pairs.append((a, b))
    return pairs


def loss_consist(z_groups: list[np.ndarray], w: LossWeights, semantic: list[bool] | None = None) -> tuple[float, list[np.ndarray]]:
    """Cross-modal consistency summed over rows and modality pairs.

    ``lambda_cos * sum(1 - cos) + lambda_eucl * sum ||z - z'||^2``.  Rows of all
    groups are co-indexed samples.  ``semantic`` marks which groups come from
    semantic encoders; semantic/semantic pairs are not compared.
    """
    zs = [np.asarray(z, dtype=np.float64) for z in z_groups]
    if len({z.shape for z in zs}) > 1:
        raise DimensionError("all modality groups must share shape")
    grads = [np.zeros_like(z) for z in zs]
    total = 0.0
    units = None
    if w.lambda_cos > 0:
        units = [_unit_rows(z, "consistency loss") for z in zs]
    for a, b in consistency_pairs(len(zs), semantic):
        if w.lambda_cos > 0:
            (ua, na), (ub, nb) = units[a], units[b]
            cos = np.einsum("ij,ij->i", ua, ub)
            total += w.lambda_cos * float(np.sum(1.0 - cos))
            grads[a] -= w.lambda_cos * _cosine_grad(ua, na, ub)
            grads[b] -= w.lambda_cos * _cosine_grad(ub, nb, ua)
        if w.lambda_eucl > 0:
            diff = zs[a] - zs[b]
            total += w.lambda_eucl * float(np.sum(diff * diff))
            grads[a] += 2.0 * w.lambda_eucl * diff
            grads[b] -= 2.0 * w.lambda_eucl * diff
    return total, grads


def loss_local(z: np.ndarray, edges: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum of squared latent distances over directed neighbor edges (i, j).

    ``edges`` may also be a NeighborLists (computed in data space).
    """
    if hasattr(edges, "edges"):
        edges = edges.edges()
    z = np.asarray(z, dtype=np.float64)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    grad = np.zeros_like(z)
    if edges.shape[0] == 0:
        return 0.0, grad
    diff = z[edges[:, 0]] - z[edges[:, 1]]
    value = float(np.sum(diff * diff))
    np.add.at(grad, edges[:, 0], 2.0 * diff)
    np.add.at(grad, edges[:, 1], -2.0 * diff)
    return value, grad


def contrastive_anchor_mask(labels, domains) -> np.ndarray:
    """True for rows that have at least one same-label row from another domain."""
    y = np.asarray(labels)
    dom = np.asarray(domains)
    pos = (y[:, None] == y[None, :]) & (dom[:, None] != dom[None, :])
    return pos.any(axis=1)


def loss_contrastive(z: np.ndarray, labels, domains, temperature: float) -> tuple[float, np.ndarray]:
    """Cross-domain supervised contrastive loss on cosine similarities.

    For every anchor i and every positive j (same label, different domain):
    ``-log exp(s_ij / T) / sum_{n != i} exp(s_in / T)``, summed.  Anchors with
    no cross-domain positive contribute nothing.
    """
    if not temperature > 0:
        raise ConfigError("temperature must be positive")
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    if n < 2:
        raise DataError("contrastive loss needs at least 2 samples")
    y = np.asarray(labels)
    dom = np.asarray(domains)
    pos = (y[:, None] == y[None, :]) & (dom[:, None] != dom[None, :])
    n_pos = pos.sum(axis=1)
    skipped = int(np.count_nonzero(n_pos == 0))
    if skipped:
        log.debug("contrastive loss: %d anchors without cross-domain positive skipped", skipped)
    u, norms = _unit_rows(z, "contrastive loss")
    logits = (u @ u.T) / temperature
    np.fill_diagonal(logits, -np.inf)
    logp = _log_softmax(logits)
    np.fill_diagonal(logp, 0.0)
    value = -float(np.sum(logp[pos]))
    # dL/dlogits[i, :] = n_pos[i] * softmax_i - 1[pos]
    soft = np.exp(logp)
    np.fill_diagonal(soft, 0.0)
    G = (n_pos[:, None] * soft - pos) / temperature
    dU = (G + G.T) @ u
    return value, _cosine_grad(u, norms, dU)


def loss_centroid(z: np.ndarray, labels, domains) -> tuple[float, np.ndarray]:
    """Squared distance between per-domain class means, summed over classes and domain pairs."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(labels)
    dom = np.asarray(domains)
    grad = np.zeros_like(z)
    value = 0.0
    doms = sorted(set(dom.tolist()))
    for c in sorted(set(y.tolist())):
        cells = []
        for k in doms:
            idx = np.flatnonzero((y == c) & (dom == k))
            if idx.size:
                cells.append((idx, z[idx].mean(axis=0)))
        for p in range(len(cells)):
            for q in range(p + 1, len(cells)):
                (ip, mp), (iq, mq) = cells[p], cells[q]
                diff = mp - mq
                value += float(diff @ diff)
                grad[ip] += 2.0 * diff / ip.size
                grad[iq] -= 2.0 * diff / iq.size
    return value, grad
