"""On-disk data model: embedding sets, paired embeddings, dataset bundles, manifests.

Two embedding file formats are supported:

* ``csv``  -- header ``dim_0,...,dim_{d-1}[,label]``, one row per point.
* ``raw``  -- 16-byte little-endian header (magic ``ULHM``, u32 N, u32 d,
  u32 reserved = 0) followed by N*d row-major float64 values.

Everything is held as float64 internally.
"""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DataError,
    DimensionError,
    EmptyError,
    FormatError,
    IoError,
    ManifestError,
    PairError,
)

RAW_MAGIC = b"ULHM"
_RAW_HEADER = struct.Struct("<4sIII")  # magic, N, d, reserved


def _check_finite(points: np.ndarray) -> None:
    bad = ~np.isfinite(points)
    if bad.any():
        row = int(np.argwhere(bad)[0, 0])
        raise DataError("non-finite coordinate", row=row)


def _as_labels(labels, n: int) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim != 1 or arr.shape[0] != n:
        raise DataError(f"expected {n} labels, got shape {arr.shape}")
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise DataError("labels must be integers")
    elif arr.dtype.kind not in "iu":
        raise DataError(f"labels must be integers, got dtype {arr.dtype}")
    arr = arr.astype(np.int64)
    if np.any(arr < 0):
        raise DataError("labels must be nonnegative", row=int(np.argmax(arr < 0)))
    return arr


@dataclass(eq=False)
class EmbeddingSet:
    """A finite point cloud in latent space with optional integer labels."""

    points: np.ndarray
    labels: np.ndarray | None = None
    domain_tag: str = "default"

    def __post_init__(self):
        pts = np.asarray(self.points)
        if pts.dtype.kind not in "fiu":
            raise DataError(f"points must be numeric, got dtype {pts.dtype}")
        if pts.dtype.kind == "f" and pts.dtype != np.float64:
            raise DataError(f"points must be float64, got {pts.dtype}")
        pts = np.ascontiguousarray(pts, dtype=np.float64)
        if pts.ndim != 2:
            raise DataError(f"points must be a 2-D matrix, got ndim={pts.ndim}")
        if pts.shape[0] == 0:
            raise EmptyError("embedding set has no rows")
        if pts.shape[1] == 0:
            raise DataError("embedding dimension must be >= 1")
        _check_finite(pts)
        self.points = pts
        if self.labels is not None:
            self.labels = _as_labels(self.labels, pts.shape[0])

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingSet):
            return NotImplemented
        if self.domain_tag != other.domain_tag:
            return False
        if self.points.shape != other.points.shape or not np.array_equal(self.points, other.points):
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        return self.labels is None or np.array_equal(self.labels, other.labels)


@dataclass(eq=False)
class PairedEmbeddings:
    side_a: EmbeddingSet
    side_b: EmbeddingSet
    pairs: np.ndarray  # (P, 2) int64: row in a, row in b

    @property
    def a_rows(self) -> np.ndarray:
        return self.side_a.points[self.pairs[:, 0]]

    @property
    def b_rows(self) -> np.ndarray:
        return self.side_b.points[self.pairs[:, 1]]


@dataclass(eq=False)
class DatasetBundle:
    """Samples of one domain: observations, semantics and optional masks."""

    observations: np.ndarray
    labels: np.ndarray | None = None
    semantics: np.ndarray | None = None
    masks: np.ndarray | None = None
    rho: float = 1.0
    domain_tag: str = "default"
    n_classes: int | None = None

    def __post_init__(self):
        obs = np.ascontiguousarray(self.observations, dtype=np.float64)
        if obs.ndim != 2 or obs.shape[0] == 0:
            raise EmptyError("observations must be a nonempty N x D matrix")
        _check_finite(obs)
        self.observations = obs
        n, d = obs.shape
        if not 0.0 < self.rho <= 1.0:
            raise DataError(f"sparsity rho must lie in (0, 1], got {self.rho}")
        if self.labels is not None:
            self.labels = _as_labels(self.labels, n)
            if self.n_classes is None:
                self.n_classes = int(self.labels.max()) + 1
            elif self.labels.max() >= self.n_classes:
                raise DataError(f"label {int(self.labels.max())} outside declared class count {self.n_classes}")
        if self.semantics is not None:
            sem = np.asarray(self.semantics, dtype=np.float64)
            if sem.ndim != 2 or sem.shape[0] != n:
                raise DataError("semantics must have one row per sample")
            self.semantics = sem
        if self.masks is not None:
            m = np.asarray(self.masks)
            if m.shape != obs.shape:
                raise DataError(f"mask shape {m.shape} != observation shape {obs.shape}")
            if not np.all((m == 0) | (m == 1)):
                raise DataError("mask entries must be 0 or 1")
            m = m.astype(np.float64)
            dev = np.abs(m.mean(axis=1) - self.rho)
            if np.any(dev > 1.0 / d + 1e-12):
                raise DataError("mask row density differs from rho", row=int(np.argmax(dev)))
            self.masks = m

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    def subset(self, rows) -> "DatasetBundle":
        rows = np.asarray(rows)
        return DatasetBundle(
            observations=self.observations[rows],
            labels=None if self.labels is None else self.labels[rows],
            semantics=None if self.semantics is None else self.semantics[rows],
            masks=None if self.masks is None else self.masks[rows],
            rho=self.rho,
            domain_tag=self.domain_tag,
            n_classes=self.n_classes,
        )


# --------------------------------------------------------------------------- files


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("csv", "raw"):
            raise FormatError(f"unknown embedding format {fmt!r}")
        return fmt
    return "csv" if path.suffix.lower() == ".csv" else "raw"


def _read_csv(path: Path, domain_tag: str) -> EmbeddingSet:
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        has_label = bool(header) and header[-1] == "label"
        dims = header[:-1] if has_label else header
        if not dims or dims != [f"dim_{k}" for k in range(len(dims))]:
            raise FormatError(f"{path}: header must be dim_0..dim_(d-1)[,label], got {header}")
        rows, labels = [], []
        for r, rec in enumerate(reader):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise FormatError(f"{path}: row {r} has {len(rec)} fields, expected {len(header)}")
            try:
                vals = [float(c) for c in rec[: len(dims)]]
            except ValueError as exc:
                raise DataError(f"{path}: unparsable value ({exc})", row=r) from None
            if not all(np.isfinite(vals)):
                raise DataError(f"{path}: non-finite coordinate", row=r)
            rows.append(vals)
            if has_label:
                try:
                    lab = float(rec[-1])
                except ValueError:
                    raise DataError(f"{path}: unparsable label", row=r) from None
                if lab != int(lab) or lab < 0:
                    raise DataError(f"{path}: label must be a nonnegative integer", row=r)
                labels.append(int(lab))
    if not rows:
        raise EmptyError(f"{path}: no data rows")
    return EmbeddingSet(np.array(rows, dtype=np.float64), np.array(labels) if has_label else None, domain_tag)


def _read_raw(path: Path, domain_tag: str) -> EmbeddingSet:
    blob = path.read_bytes()
    if len(blob) < _RAW_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, n, d, _ = _RAW_HEADER.unpack_from(blob)
    if magic != RAW_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if n == 0:
        raise EmptyError(f"{path}: N=0")
    if d == 0:
        raise FormatError(f"{path}: d=0")
    expected = _RAW_HEADER.size + 8 * n * d
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    pts = np.frombuffer(blob, dtype="<f8", offset=_RAW_HEADER.size).reshape(n, d).astype(np.float64)
    _check_finite(pts)
    return EmbeddingSet(pts, None, domain_tag)


def load_embeddings(path, format: str | None = None, domain_tag: str | None = None) -> EmbeddingSet:
    """Load an embedding file; ``format`` defaults to the file extension (``.csv`` or raw)."""
    path = Path(path)
    fmt = _infer_format(path, format)
    if not path.is_file():
        raise IoError(f"no such file: {path}")
    tag = domain_tag if domain_tag is not None else path.stem
    return _read_csv(path, tag) if fmt == "csv" else _read_raw(path, tag)


def save_embeddings(emb: EmbeddingSet, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = _infer_format(path, format)
    try:
        if fmt == "raw":
            n, d = emb.points.shape
            with path.open("wb") as fh:
                fh.write(_RAW_HEADER.pack(RAW_MAGIC, n, d, 0))
                fh.write(emb.points.astype("<f8").tobytes(order="C"))
        else:
            header = [f"dim_{k}" for k in range(emb.dim)]
            if emb.labels is not None:
                header.append("label")
            with path.open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                for i, row in enumerate(emb.points):
                    rec = [repr(float(v)) for v in row]
                    if emb.labels is not None:
                        rec.append(str(int(emb.labels[i])))
                    w.writerow(rec)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_labels(path) -> np.ndarray:
    """Integer labels, one per line; an optional ``label`` header line is skipped."""
    path = Path(path)
    if not path.is_file():
        raise IoError(f"no such file: {path}")
    out = []
    for r, line in enumerate(path.read_text(encoding="utf-8").splitlines()):
        tok = line.strip().split(",")[-1].strip()
        if not tok or (r == 0 and tok == "label"):
            continue
        try:
            val = float(tok)
        except ValueError:
            raise DataError(f"{path}: unparsable label {tok!r}", row=r) from None
        if val != int(val) or val < 0:
            raise DataError(f"{path}: label must be a nonnegative integer", row=r)
        out.append(int(val))
    return np.array(out, dtype=np.int64)


def load_pairs(path) -> list[tuple[int, int]]:
    path = Path(path)
    if not path.is_file():
        raise IoError(f"no such file: {path}")
    pairs = []
    for r, line in enumerate(path.read_text(encoding="utf-8").splitlines()):
        parts = [p.strip() for p in line.split(",")]
        if not line.strip() or (r == 0 and not parts[0].lstrip("-").isdigit()):
            continue
        if len(parts) != 2:
            raise FormatError(f"{path}: row {r} must hold two indices")
        pairs.append((int(parts[0]), int(parts[1])))
    return pairs


# --------------------------------------------------------------------------- pairing


def pair_samples(a: EmbeddingSet, b: EmbeddingSet, pair_index: Sequence[tuple[int, int]]) -> PairedEmbeddings:
    if a.dim != b.dim:
        raise DimensionError(f"paired sets differ in dimension: {a.dim} vs {b.dim}")
    idx = np.asarray(pair_index, dtype=np.int64).reshape(-1, 2) if len(pair_index) else np.empty((0, 2), np.int64)
    if idx.shape[0] == 0:
        raise PairError("pair list is empty; alignment is undefined")
    for side, n, col in (("a", a.n, idx[:, 0]), ("b", b.n, idx[:, 1])):
        if np.any(col < 0) or np.any(col >= n):
            raise PairError(f"pair index out of range on side {side} (size {n})")
        if np.unique(col).size != col.size:
            raise PairError(f"duplicate row on side {side}")
    return PairedEmbeddings(a, b, idx)


# --------------------------------------------------------------------------- manifest


@dataclass
class Manifest:
    domains: list[EmbeddingSet]
    inputs: dict[str, EmbeddingSet] = field(default_factory=dict)
    pairs: list[PairedEmbeddings] = field(default_factory=list)
    flags: dict[str, bool] = field(default_factory=dict)

    def domain(self, tag: str) -> EmbeddingSet:
        for d in self.domains:
            if d.domain_tag == tag:
                return d
        raise KeyError(tag)


def load_manifest(path) -> Manifest:
    """Load a JSON manifest and every file it references.

    Each domain entry holds ``tag`` and ``embeddings_path`` and optionally
    ``labels_path``, ``input_path`` (input-space coordinates used by the
    rank metrics), ``pairs_with`` (tag of a partner domain), ``pairs_path``
    (two-column index CSV; defaults to row i <-> row i) and ``format``.
    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise IoError(f"no such file: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("domains"), list) or not doc["domains"]:
        raise ManifestError(f"{path}: 'domains' must be a nonempty list")
    base = path.parent

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    domains: list[EmbeddingSet] = []
    inputs: dict[str, EmbeddingSet] = {}
    tags: list[str] = []
    for k, entry in enumerate(doc["domains"]):
        if not isinstance(entry, dict) or "tag" not in entry or "embeddings_path" not in entry:
            raise ManifestError(f"{path}: domain #{k} needs 'tag' and 'embeddings_path'")
        tag = str(entry["tag"])
        if tag in tags:
            raise ManifestError(f"{path}: duplicate domain tag {tag!r}")
        tags.append(tag)
        emb = load_embeddings(resolve(entry["embeddings_path"]), entry.get("format"), domain_tag=tag)
        if entry.get("labels_path"):
            emb.labels = _as_labels(load_labels(resolve(entry["labels_path"])), emb.n)
        domains.append(emb)
        if entry.get("input_path"):
            inp = load_embeddings(resolve(entry["input_path"]), entry.get("input_format"), domain_tag=tag)
            if inp.n != emb.n:
                raise DimensionError(f"domain {tag!r}: input has {inp.n} rows, embeddings have {emb.n}")
            inputs[tag] = inp

    dims = {d.dim for d in domains}
    if len(dims) != 1:
        raise DimensionError(f"{path}: domains disagree on latent dimension: {sorted(dims)}")

    by_tag = dict(zip(tags, domains))
    pairs = []
    for entry in doc["domains"]:
        partner = entry.get("pairs_with")
        if not partner:
            continue
        if partner not in by_tag:
            raise ManifestError(f"{path}: pairs_with names unknown tag {partner!r}")
        a, b = by_tag[str(entry["tag"])], by_tag[partner]
        if entry.get("pairs_path"):
            idx = load_pairs(resolve(entry["pairs_path"]))
        else:
            if a.n != b.n:
                raise ManifestError(f"{path}: implicit row pairing needs equal sizes ({a.n} vs {b.n})")
            idx = [(i, i) for i in range(a.n)]
        pairs.append(pair_samples(a, b, idx))

    raw_flags = doc.get("flags", {}) or {}
    flags = {
        "has_paired_modalities": bool(raw_flags.get("has_paired_modalities", False)),
        "requires_clustering": bool(raw_flags.get("requires_clustering", False)),
    }
    return Manifest(domains=domains, inputs=inputs, pairs=pairs, flags=flags)
