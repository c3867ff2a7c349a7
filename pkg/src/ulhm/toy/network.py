"""Small feed-forward networks with hand-written backprop.

Weights are stored as (fan_out, fan_in) matrices and inputs as row batches,
so a layer computes ``a @ W.T + b``.  Every hidden layer applies the same
activation; the last layer is linear.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DimensionError

ACTIVATIONS = ("tanh", "leaky_relu")
LEAK = 0.01


@dataclass(frozen=True)
class NetworkSpec:
    layer_sizes: tuple[int, ...]
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2 or any(s < 1 for s in self.layer_sizes):
            raise ConfigError(f"need >= 2 positive layer sizes, got {self.layer_sizes}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    def to_dict(self) -> dict:
        return {"layer_sizes": list(self.layer_sizes), "activation": self.activation, "seed": self.seed}


@dataclass(eq=False)
class Network:
    spec: NetworkSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    grad_w: list[np.ndarray] = field(default_factory=list)
    grad_b: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.grad_w:
            self.grad_w = [np.zeros_like(w) for w in self.weights]
            self.grad_b = [np.zeros_like(b) for b in self.biases]

    @property
    def n_in(self) -> int:
        return self.spec.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.spec.layer_sizes[-1]

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order (W0, b0, W1, b1, ...); views, not copies."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def grads(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.grad_w, self.grad_b):
            out += [w, b]
        return out

    def zero_grad(self) -> None:
        for g in self.grads():
            g.fill(0.0)

    def copy(self) -> "Network":
        return Network(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, vec: np.ndarray) -> None:
        k = 0
        for p in self.params():
            p[...] = vec[k : k + p.size].reshape(p.shape)
            k += p.size
        if k != vec.size:
            raise DimensionError(f"flat vector has {vec.size} entries, network has {k}")

    def digest(self) -> str:
        return hashlib.sha256(self.flat().tobytes()).hexdigest()

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x).output


def init_network(spec: NetworkSpec) -> Network:
    """Uniform Glorot init (+-sqrt(6/(fan_in+fan_out))), zero biases."""
    rng = np.random.default_rng(spec.seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Network(spec, weights, biases)


def _act(name: str, h: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(h)
    return np.where(h > 0, h, LEAK * h)


def _act_grad(name: str, h: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - a * a
    return np.where(h > 0, 1.0, LEAK)


@dataclass(eq=False)
class Activations:
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]  # pre-activations of each layer
    output: np.ndarray


def forward(net: Network, batch: np.ndarray) -> Activations:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.n_in:
        raise DimensionError(f"network expects (B, {net.n_in}) input, got {x.shape}")
    inputs, pre = [], []
    a = x
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(a)
        h = a @ w.T + b
        pre.append(h)
        a = h if k == last else _act(net.spec.activation, h)
    return Activations(inputs, pre, a)


def backward(net: Network, acts: Activations, grad_out: np.ndarray, accumulate: bool = True) -> np.ndarray:
    """Backpropagate ``grad_out`` (dL/doutput); returns dL/dinput.

    Parameter gradients are added into the network's buffers unless
    ``accumulate`` is False (frozen network: only the input gradient is needed).
    """
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != acts.output.shape:
        raise DimensionError(f"grad shape {g.shape} != output shape {acts.output.shape}")
    last = len(net.weights) - 1
    for k in range(last, -1, -1):
        if k != last:
            h = acts.pre[k]
            a = acts.inputs[k + 1]
            g = g * _act_grad(net.spec.activation, h, a)
        if accumulate:
            net.grad_w[k] += g.T @ acts.inputs[k]
            net.grad_b[k] += g.sum(axis=0)
        g = g @ net.weights[k]
    return g
