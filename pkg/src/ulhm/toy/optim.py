"""Plain SGD and Adam over the gradient buffers of one or more networks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingDivergedError
from .network import Network


def _check_finite(grads: list[np.ndarray]) -> None:
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError("non-finite gradient")


def sgd_step(nets: Network | list[Network], lr: float) -> None:
    nets = [nets] if isinstance(nets, Network) else nets
    for net in nets:
        _check_finite(net.grads())
    for net in nets:
        for p, g in zip(net.params(), net.grads()):
            p -= lr * g


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        _check_finite(grads)
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(nets: Network | list[Network], state: AdamState, lr: float) -> None:
    nets = [nets] if isinstance(nets, Network) else nets
    params, grads = [], []
    for net in nets:
        params += net.params()
        grads += net.grads()
    state.step(params, grads, lr)
