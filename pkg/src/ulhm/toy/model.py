"""Multi-modality model set and the composite ULHM objective.

    L = sum_m recon_m + lambda_c * consist + lambda_l * local

Observation and semantic modalities share the same machinery; a modality is
an encoder, a decoder (possibly shared with another modality), a likelihood
and a flag saying whether it is semantic.  The perceptual term is not
implemented.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError
from .losses import LossWeights, consistency_pairs, loss_consist, loss_local, loss_recon
from .network import Network, backward, forward


@dataclass(eq=False)
class Modality:
    name: str
    encoder: Network
    decoder: Network | None
    likelihood: str = "gaussian"
    semantic: bool = False


@dataclass(eq=False)
class ULHMModel:
    modalities: list[Modality]

    def networks(self) -> list[Network]:
        """Distinct networks in a stable order (shared decoders appear once)."""
        seen, out = set(), []
        for m in self.modalities:
            for net in (m.encoder, m.decoder):
                if net is not None and id(net) not in seen:
                    seen.add(id(net))
                    out.append(net)
        return out

    def modality(self, name: str) -> Modality:
        for m in self.modalities:
            if m.name == name:
                return m
        raise KeyError(name)


@dataclass(eq=False)
class ULHMBatch:
    """Per-modality encoder inputs and reconstruction targets for one batch.

    ``present[m]`` marks rows where modality m is available (None = all rows);
    ``edges[m]`` holds data-space neighbor pairs in batch row indices.
    """

    inputs: list[np.ndarray]
    targets: list[np.ndarray | None]
    present: list[np.ndarray | None] = field(default_factory=list)
    edges: list[np.ndarray | None] = field(default_factory=list)

    def __post_init__(self):
        k = len(self.inputs)
        if len(self.targets) != k:
            raise DimensionError("one target per modality is required")
        n = self.inputs[0].shape[0]
        if any(x.shape[0] != n for x in self.inputs):
            raise DimensionError("modality inputs must share the row count")
        if not self.present:
            self.present = [None] * k
        if not self.edges:
            self.edges = [None] * k
        self.present = [np.ones(n, bool) if p is None else np.asarray(p, bool) for p in self.present]

    @property
    def n(self) -> int:
        return self.inputs[0].shape[0]


def _remap_edges(edges: np.ndarray, rows: np.ndarray, n: int) -> np.ndarray:
    pos = np.full(n, -1)
    pos[rows] = np.arange(rows.size)
    e = pos[np.asarray(edges, dtype=np.int64)]
    return e[(e >= 0).all(axis=1)]


def total_ulhm_loss(
    model: ULHMModel,
    batch: ULHMBatch,
    w: LossWeights,
    frozen: frozenset[int] = frozenset(),
) -> tuple[float, dict[str, float]]:
    """Evaluate the composite loss and accumulate gradients into every network.

    Networks whose ``id`` is in ``frozen`` only pass gradients through.
    Returns ``(total, components)``.
    """
    if len(batch.inputs) != len(model.modalities):
        raise DimensionError("batch and model disagree on the number of modalities")
    n = batch.n
    rows = [np.flatnonzero(p) for p in batch.present]
    enc_acts, z = [], []
    for m, x, r in zip(model.modalities, batch.inputs, rows):
        acts = forward(m.encoder, x[r])
        enc_acts.append(acts)
        z.append(acts.output)
    dz = [np.zeros_like(zz) for zz in z]
    comp = {"recon_x": 0.0, "recon_s": 0.0, "consist": 0.0, "local": 0.0}

    for k, (m, tgt, r) in enumerate(zip(model.modalities, batch.targets, rows)):
        if tgt is None or m.decoder is None or r.size == 0:
            continue
        dec_acts = forward(m.decoder, z[k])
        value, g = loss_recon(dec_acts.output, np.asarray(tgt)[r], m.likelihood)
        comp["recon_s" if m.semantic else "recon_x"] += value
        dz[k] += backward(m.decoder, dec_acts, g, accumulate=id(m.decoder) not in frozen)

    if w.lambda_c > 0 and len(z) > 1:
        sem = [m.semantic for m in model.modalities]
        for a, b in consistency_pairs(len(z), sem):
            both = batch.present[a] & batch.present[b]
            if not both.any():
                continue
            ia = np.searchsorted(rows[a], np.flatnonzero(both))
            ib = np.searchsorted(rows[b], np.flatnonzero(both))
            value, (ga, gb) = loss_consist([z[a][ia], z[b][ib]], w, [sem[a], sem[b]])
            comp["consist"] += value
            np.add.at(dz[a], ia, w.lambda_c * ga)
            np.add.at(dz[b], ib, w.lambda_c * gb)

    if w.lambda_l > 0:
        for k, e in enumerate(batch.edges):
            if e is None:
                continue
            local_e = _remap_edges(e, rows[k], n)
            value, g = loss_local(z[k], local_e)
            comp["local"] += value
            dz[k] += w.lambda_l * g

    for k, m in enumerate(model.modalities):
        backward(m.encoder, enc_acts[k], dz[k], accumulate=id(m.encoder) not in frozen)

    total = comp["recon_x"] + comp["recon_s"] + w.lambda_c * comp["consist"] + w.lambda_l * comp["local"]
    comp["total"] = total
    return total, comp
