"""Synthetic multi-domain data with known homeomorphic structure, and masking."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError
from ..store import DatasetBundle

TRANSFORMS = ("rotation", "affine", "monotone-radial")
SPLITS = {"train": 0, "test": 1}


@dataclass(frozen=True)
class SyntheticSpec:
    """Domain 1 holds ``n_classes`` Gaussian class blobs in ``obs_dim`` dimensions;
    every further domain is a fixed smooth bijection of the same blobs."""

    n_classes: int = 6
    per_class: int = 50
    obs_dim: int = 16
    domains: int = 2
    transform: str = "monotone-radial"
    noise: float = 0.5
    separation: float = 1.0
    seed: int = 42

    def __post_init__(self):
        if self.obs_dim < 2:
            raise ConfigError("obs_dim must be >= 2")
        if self.n_classes < 1 or self.per_class < 1 or self.domains < 1:
            raise ConfigError("n_classes, per_class and domains must be >= 1")
        if self.transform not in TRANSFORMS:
            raise ConfigError(f"unknown transform {self.transform!r}")
        if self.noise < 0 or self.separation <= 0:
            raise ConfigError("noise must be >= 0 and separation > 0")

    def to_dict(self) -> dict:
        return asdict(self)


def _orthogonal(rng: np.random.Generator, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


class DomainTransform:
    """Smooth bijection of R^D used to derive domain k from domain 1."""

    def __init__(self, kind: str, dim: int, rng: np.random.Generator, scale: float):
        self.kind = kind
        if kind == "rotation":
            self.q = _orthogonal(rng, dim)
        elif kind == "affine":
            s = rng.uniform(0.5, 1.5, dim)
            self.a = _orthogonal(rng, dim) @ np.diag(s) @ _orthogonal(rng, dim)
            self.b = rng.standard_normal(dim) * 0.5 * scale
        else:
            # r -> r * sqrt(1 + (r / r0)^2): strictly increasing, smooth, fixes directions
            self.r0 = scale * rng.uniform(0.75, 1.25)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "rotation":
            return x @ self.q.T
        if self.kind == "affine":
            return x @ self.a.T + self.b
        r = np.linalg.norm(x, axis=1, keepdims=True)
        return x * np.sqrt(1.0 + (r / self.r0) ** 2)


def class_means(spec: SyntheticSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 0])
    return rng.standard_normal((spec.n_classes, spec.obs_dim)) * spec.separation


def domain_transforms(spec: SyntheticSpec) -> list[DomainTransform | None]:
    scale = float(np.median(np.linalg.norm(class_means(spec), axis=1)))
    out: list[DomainTransform | None] = [None]
    for k in range(1, spec.domains):
        out.append(DomainTransform(spec.transform, spec.obs_dim, np.random.default_rng([spec.seed, 1, k]), scale))
    return out


def gen_synthetic(spec: SyntheticSpec, split: str = "train") -> list[DatasetBundle]:
    """One bundle per domain; the ``test`` split draws fresh noise from the same blobs."""
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}")
    means = class_means(spec)
    transforms = domain_transforms(spec)
    labels = np.repeat(np.arange(spec.n_classes), spec.per_class)
    onehot = np.eye(spec.n_classes)[labels]
    out = []
    for k, tf in enumerate(transforms):
        rng = np.random.default_rng([spec.seed, 2, k, SPLITS[split]])
        x = means[labels] + spec.noise * rng.standard_normal((labels.size, spec.obs_dim))
        if tf is not None:
            x = tf(x)
        out.append(
            DatasetBundle(
                observations=x,
                labels=labels.copy(),
                semantics=onehot.copy(),
                domain_tag=f"domain{k + 1}",
                n_classes=spec.n_classes,
            )
        )
    return out


@dataclass(frozen=True)
class MaskSpec:
    rho: float
    seed: int = 0
    pattern: str = "uniform-random"

    def __post_init__(self):
        if not 0.0 < self.rho <= 1.0:
            raise ConfigError(f"rho must lie in (0, 1], got {self.rho}")
        if self.pattern != "uniform-random":
            raise ConfigError(f"unknown mask pattern {self.pattern!r}")


def apply_mask(x: np.ndarray, m: MaskSpec) -> tuple[np.ndarray, np.ndarray]:
    """Keep exactly round(rho * D) uniformly chosen entries per row; zero the rest."""
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    keep = int(round(m.rho * d))
    if keep == 0:
        raise ConfigError(f"rho={m.rho} keeps no entries out of {d}")
    mask = np.zeros((n, d))
    if keep == d:
        mask[:] = 1.0
    else:
        rng = np.random.default_rng(m.seed)
        cols = np.argsort(rng.random((n, d)), axis=1)[:, :keep]
        mask[np.arange(n)[:, None], cols] = 1.0
    return x * mask, mask
