"""Minimal fully-connected network engine: forward, backprop, Adam.

Shared by the contingency detector, the DDPG actor, and the DDPG critic.
Backprop is hand-rolled for the fixed MLP topology so the finite-difference
gradient check stays meaningful and the artifact stays dependency-free.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Mlp",
    "Gradients",
    "AdamState",
    "init_mlp",
    "forward",
    "forward_full",
    "backward",
    "adam_step",
    "parameter_count",
    "save_checkpoint",
    "load_checkpoint",
]

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")

CHECKPOINT_FORMAT_VERSION = 1


def _apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if name == "identity":
        return z
    raise ValueError(f"unknown activation '{name}'")


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """d(activation)/dz from the pre-activation z and the output a."""
    if name == "relu":
        return (z > 0).astype(float)
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "identity":
        return np.ones_like(z)
    raise ValueError(f"unknown activation '{name}'")


@dataclass
class Mlp:
    """Fully-connected network; weights[k] maps layer k to layer k+1."""

    layer_sizes: list[int]
    activations: list[str]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least an input and an output layer")
        if len(self.activations) != len(self.layer_sizes) - 1:
            raise ValueError("one activation per non-input layer required")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation '{act}'")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.layer_sizes[k], self.layer_sizes[k + 1])
            if w.shape != want:
                raise ValueError(f"weight {k} has shape {w.shape}, expected {want}")
            if b.shape != (self.layer_sizes[k + 1],):
                raise ValueError(f"bias {k} has shape {b.shape}, expected ({want[1]},)")

    def copy(self) -> "Mlp":
        return Mlp(
            layer_sizes=list(self.layer_sizes),
            activations=list(self.activations),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


def init_mlp(layer_sizes, activations, seed) -> Mlp:
    """Fan-in-scaled uniform weights, zero biases; deterministic per seed."""
    if len(layer_sizes) < 2:
        raise ValueError("need at least an input and an output layer")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return Mlp(list(layer_sizes), list(activations), weights, biases)


def parameter_count(net: Mlp) -> int:
    return sum(w.size + b.size for w, b in zip(net.weights, net.biases))


def forward_full(net: Mlp, x):
    """Forward pass returning (output, per-layer (z, a) cache).

    Accepts a single input vector or a (batch, dim) matrix.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.shape[1] != net.layer_sizes[0]:
        raise ValueError(
            f"input dim {a.shape[1]} does not match layer size {net.layer_sizes[0]}"
        )
    cache = [(None, a)]
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = a @ w + b
        a = _apply_activation(act, z)
        cache.append((z, a))
    return (a[0] if single else a), cache


def forward(net: Mlp, x):
    """Pure forward map; never mutates the network."""
    out, _ = forward_full(net, x)
    return out


def backward(net: Mlp, x, output_gradient, cache=None):
    """Exact reverse-mode gradients of forward(net, x).

    Returns (Gradients, input_gradient). `output_gradient` is d(loss)/d(output).
    Pass the cache from forward_full to skip recomputing the forward pass.
    """
    g = np.asarray(output_gradient, dtype=float)
    single = g.ndim == 1
    if cache is None:
        _, cache = forward_full(net, x)
    if single:
        g = g[None, :]
    if g.shape[1] != net.layer_sizes[-1]:
        raise ValueError(
            f"output gradient dim {g.shape[1]} does not match layer size {net.layer_sizes[-1]}"
        )
    grad_w = [None] * len(net.weights)
    grad_b = [None] * len(net.biases)
    delta = g
    for k in range(len(net.weights) - 1, -1, -1):
        z, a = cache[k + 1]
        delta = delta * _activation_grad(net.activations[k], z, a)
        a_prev = cache[k][1]
        grad_w[k] = a_prev.T @ delta
        grad_b[k] = delta.sum(axis=0)
        delta = delta @ net.weights[k].T
    input_grad = delta[0] if single else delta
    return Gradients(grad_w, grad_b), input_grad


@dataclass
class AdamState:
    """Adam accumulators shaped like the network parameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m_w: list = field(default_factory=list)
    v_w: list = field(default_factory=list)
    m_b: list = field(default_factory=list)
    v_b: list = field(default_factory=list)

    @classmethod
    def for_net(cls, net: Mlp, lr: float = 1e-3, beta1: float = 0.9,
                beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        return cls(
            lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon, step=0,
            m_w=[np.zeros_like(w) for w in net.weights],
            v_w=[np.zeros_like(w) for w in net.weights],
            m_b=[np.zeros_like(b) for b in net.biases],
            v_b=[np.zeros_like(b) for b in net.biases],
        )


def adam_step(opt: AdamState, net: Mlp, grads: Gradients):
    """Standard Adam update with bias correction; updates in place."""
    opt.step += 1
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1**opt.step
    c2 = 1.0 - b2**opt.step
    for k in range(len(net.weights)):
        gw, gb = grads.weights[k], grads.biases[k]
        if gw.shape != net.weights[k].shape or gb.shape != net.biases[k].shape:
            raise ValueError(f"gradient shape mismatch at layer {k}")
        opt.m_w[k] = b1 * opt.m_w[k] + (1 - b1) * gw
        opt.v_w[k] = b2 * opt.v_w[k] + (1 - b2) * gw * gw
        opt.m_b[k] = b1 * opt.m_b[k] + (1 - b1) * gb
        opt.v_b[k] = b2 * opt.v_b[k] + (1 - b2) * gb * gb
        net.weights[k] -= opt.lr * (opt.m_w[k] / c1) / (np.sqrt(opt.v_w[k] / c2) + opt.epsilon)
        net.biases[k] -= opt.lr * (opt.m_b[k] / c1) / (np.sqrt(opt.v_b[k] / c2) + opt.epsilon)
    return net, opt


def net_to_dict(net: Mlp) -> dict:
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "layer_sizes": list(net.layer_sizes),
        "activations": list(net.activations),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def net_from_dict(doc: dict) -> Mlp:
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {doc.get('format_version')}")
    return Mlp(
        layer_sizes=list(doc["layer_sizes"]),
        activations=list(doc["activations"]),
        weights=[np.array(w) for w in doc["weights"]],
        biases=[np.array(b) for b in doc["biases"]],
    )


def save_checkpoint(net: Mlp, path, extra: dict | None = None) -> None:
    """Write a JSON checkpoint; float round-trips are bit-exact."""
    doc = net_to_dict(net)
    if extra:
        doc["meta"] = extra
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_checkpoint(path) -> tuple[Mlp, dict]:
    doc = json.loads(Path(path).read_text())
    return net_from_dict(doc), doc.get("meta", {})
