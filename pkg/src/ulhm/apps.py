"""Applications on trained latents: sparse recovery, cross-domain transfer, zero-shot.

Every ``*_eval`` returns a plain dict report with keys ``task``, ``accuracy``,
``per_class`` and, where relevant, ``mse_by_rho`` or ``transfer_direction``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DimensionError, EmptyError
from .store import DatasetBundle
from .toy.network import Network, forward
from .toy.synthetic import MaskSpec, apply_mask


@dataclass(frozen=True)
class CentroidTable:
    class_ids: np.ndarray  # sorted ascending
    centroids: np.ndarray  # (C, d), row c belongs to class_ids[c]
    counts: np.ndarray

    def rows_for(self, classes) -> np.ndarray:
        classes = np.asarray(classes)
        idx = np.searchsorted(self.class_ids, classes)
        if np.any(idx >= self.class_ids.size) or np.any(self.class_ids[np.minimum(idx, self.class_ids.size - 1)] != classes):
            raise DataError(f"classes {classes.tolist()} not all present in the centroid table")
        return idx


@dataclass(frozen=True)
class ZeroShotSplit:
    seen: tuple[int, ...]
    unseen: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "seen", tuple(sorted(int(c) for c in self.seen)))
        object.__setattr__(self, "unseen", tuple(sorted(int(c) for c in self.unseen)))
        if set(self.seen) & set(self.unseen):
            raise ConfigError("seen and unseen classes overlap")

    def check_covers(self, labels) -> None:
        missing = set(np.unique(labels).tolist()) - set(self.seen) - set(self.unseen)
        if missing:
            raise DataError(f"split does not cover labels {sorted(missing)}")


def class_centroids(z: np.ndarray, labels, classes=None) -> CentroidTable:
    """Exact per-class means.  ``classes`` lists the ids that must be present."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (z.shape[0],):
        raise DimensionError(f"{z.shape[0]} latents but {y.shape} labels")
    ids = np.unique(y) if classes is None else np.asarray(sorted(set(int(c) for c in classes)))
    if ids.size == 0:
        raise EmptyError("no classes to build centroids for")
    cents, counts = [], []
    for c in ids:
        members = z[y == c]
        if members.shape[0] == 0:
            raise EmptyError(f"class {int(c)} has no samples")
        cents.append(members.mean(axis=0))
        counts.append(members.shape[0])
    return CentroidTable(ids.astype(np.int64), np.array(cents), np.array(counts, dtype=np.int64))


def nearest_centroid_classify(z_test: np.ndarray, table: CentroidTable, candidates=None) -> np.ndarray:
    """Argmin Euclidean distance over ``candidates`` (all classes if None).

    ZSL mode passes the unseen classes as candidates; GZSL passes None.  Ties
    go to the smaller class id.
    """
    z = np.atleast_2d(np.asarray(z_test, dtype=np.float64))
    rows = np.arange(table.class_ids.size) if candidates is None else np.sort(table.rows_for(candidates))
    if rows.size == 0:
        raise EmptyError("empty candidate class set")
    cent = table.centroids[rows]
    d2 = ((z[:, None, :] - cent[None, :, :]) ** 2).sum(axis=2)
    # class_ids ascending, so first argmin is the smaller id
    return table.class_ids[rows][np.argmin(d2, axis=1)]


def accuracy_report(task: str, y_true, y_pred, classes) -> dict:
    """Accuracy plus per-class counts and confusion rows over ``classes``."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    per_class = {}
    for c in classes:
        sel = y_true == c
        n = int(sel.sum())
        preds = y_pred[sel]
        per_class[str(int(c))] = {
            "n": n,
            "correct": int((preds == c).sum()),
            "accuracy": float((preds == c).mean()) if n else None,
            "predicted": {str(int(p)): int((preds == p).sum()) for p in np.unique(preds)},
        }
    acc = float((y_true == y_pred).mean()) if y_true.size else None
    return {"task": task, "accuracy": acc, "per_class": per_class}


# --------------------------------------------------------------------------- sparse recovery


def sparse_recover(encoder: Network, decoder: Network, sparse_x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Single-pass recovery: decode the encoding of ``[sparse values, mask]``."""
    sparse_x = np.asarray(sparse_x, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if sparse_x.shape != mask.shape:
        raise DimensionError(f"sparse values {sparse_x.shape} vs mask {mask.shape}")
    if encoder.n_in != 2 * sparse_x.shape[1] or decoder.n_out != sparse_x.shape[1]:
        raise DimensionError("encoder must read 2D inputs and decoder must emit D outputs")
    return forward(decoder, forward(encoder, np.hstack([sparse_x, mask])).output).output


def autoencode(encoder: Network, decoder: Network, x: np.ndarray) -> np.ndarray:
    """The same networks fed the complete observation with an all-ones mask."""
    x = np.asarray(x, dtype=np.float64)
    return forward(decoder, forward(encoder, np.hstack([x, np.ones_like(x)])).output).output


def recovery_errors(encoder: Network, decoder: Network, x: np.ndarray, rhos=(0.25, 0.5, 0.75, 1.0),
                    seed: int = 0) -> dict[str, np.ndarray]:
    """Per-sample recovery MSE for each density, keyed by ``repr(rho)``."""
    x = np.asarray(x, dtype=np.float64)
    out = {}
    for rho in rhos:
        sx, m = apply_mask(x, MaskSpec(float(rho), seed))
        out[repr(float(rho))] = ((sparse_recover(encoder, decoder, sx, m) - x) ** 2).mean(axis=1)
    return out


def recovery_eval(encoder: Network, decoder: Network, x: np.ndarray, rhos=(0.25, 0.5, 0.75, 1.0),
                  seed: int = 0) -> dict:
    """MSE of recovered vs true (standardized) observations for each density."""
    x = np.asarray(x, dtype=np.float64)
    errs = recovery_errors(encoder, decoder, x, rhos, seed)
    ae = float(((autoencode(encoder, decoder, x) - x) ** 2).mean(axis=1).mean())
    return {
        "task": "recover",
        "accuracy": None,
        "per_class": {},
        "mse_by_rho": {k: float(e.mean()) for k, e in errs.items()},
        "autoencode_mse": ae,
    }


# --------------------------------------------------------------------------- transfer


def classify(classifier: Network, z: np.ndarray) -> np.ndarray:
    return np.argmax(forward(classifier, z).output, axis=1)


def transfer_eval(result, data: list[DatasetBundle], source: int, target: int) -> dict:
    """Accuracy of the ``source`` classifier on ``target`` universal latents."""
    if source not in result.classifiers:
        raise ConfigError(f"no classifier trained on domain {source}")
    if not 0 <= target < len(result.projections) or target >= len(data):
        raise ConfigError(f"missing projection for target domain {target}")
    z = result.universal(target, data[target].observations)
    pred = classify(result.classifiers[source], z)
    rep = accuracy_report("transfer", data[target].labels, pred, range(result.n_classes))
    rep["transfer_direction"] = f"{data[source].domain_tag}->{data[target].domain_tag}"
    return rep


# --------------------------------------------------------------------------- zero-shot


def zeroshot_eval(encode, train: DatasetBundle, test: DatasetBundle, split: ZeroShotSplit, mode: str = "zsl") -> dict:
    """Nearest-centroid accuracy on unseen-class test samples.

    Centroids come from training latents of every class (labels are used only
    here, never during encoder training for unseen classes).  ``encode`` maps
    raw observations to latents.
    """
    if mode not in ("zsl", "gzsl"):
        raise ConfigError(f"unknown mode {mode!r}")
    split.check_covers(train.labels)
    split.check_covers(test.labels)
    table = class_centroids(encode(train.observations), train.labels, split.seen + split.unseen)
    sel = np.isin(test.labels, split.unseen)
    if not sel.any():
        raise EmptyError("no unseen-class test samples")
    z = encode(test.observations[sel])
    pred = nearest_centroid_classify(z, table, split.unseen if mode == "zsl" else None)
    rep = accuracy_report(f"zeroshot-{mode}", test.labels[sel], pred, split.unseen)
    rep["seen"] = list(split.seen)
    rep["unseen"] = list(split.unseen)
    return rep


def zeroshot_all_classes(encode, train: DatasetBundle, test: DatasetBundle, split: ZeroShotSplit) -> dict:
    """GZSL predictions on every test sample, for per-class accuracy over all classes."""
    table = class_centroids(encode(train.observations), train.labels, split.seen + split.unseen)
    pred = nearest_centroid_classify(encode(test.observations), table)
    return accuracy_report("zeroshot-all", test.labels, pred, split.seen + split.unseen)
