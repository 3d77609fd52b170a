"""Fully-connected net, backpropagation, Adam, and polyak averaging.

Hand-rolled on numpy so the Q-function has no framework dependency. All
operations are deterministic given their inputs and preserve the dtype of
the parameter arrays (the learner runs float32; unit fixtures use float64).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MLPParams:
    """Layer weights/biases for [input -> hidden... -> 1], ReLU hidden, linear out."""

    weights: list  # weights[i]: (fan_in, fan_out)
    biases: list  # biases[i]: (fan_out,)

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights/biases length mismatch")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: inconsistent shapes {w.shape} / {b.shape}")
            if i > 0 and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ValueError(f"layer {i}: fan-in does not chain")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: non-finite entries")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "MLPParams":
        return MLPParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_mlp(input_dim: int, hidden: list[int], rng: np.random.Generator,
             dtype=np.float64) -> MLPParams:
    """Uniform init in [-sqrt(1/fan_in), +sqrt(1/fan_in)] per layer."""
    sizes = [input_dim] + list(hidden) + [1]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(1.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
        biases.append(rng.uniform(-bound, bound, size=(fan_out,)).astype(dtype))
    return MLPParams(weights, biases)


def forward(params: MLPParams, x) -> float:
    """Scalar output of the net on a single input vector."""
    x = np.asarray(x)
    if x.shape != (params.input_dim,):
        raise ValueError(f"input shape {x.shape}, expected ({params.input_dim},)")
    return float(forward_batch(params, x[None, :])[0])


def forward_batch(params: MLPParams, X: np.ndarray) -> np.ndarray:
    """Outputs for a (B, input_dim) batch, shape (B,)."""
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ValueError(f"batch shape {X.shape}, expected (B, {params.input_dim})")
    h = X
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h[:, 0]


def backward(params: MLPParams, x, upstream: float) -> MLPParams:
    """Gradient of (upstream * output) w.r.t. every parameter.

    Returns an MLPParams-shaped structure holding the gradients.
    """
    x = np.asarray(x)
    if x.shape != (params.input_dim,):
        raise ValueError(f"input shape {x.shape}, expected ({params.input_dim},)")
    return backward_batch(params, x[None, :], np.array([upstream], dtype=x.dtype))


def backward_batch(params: MLPParams, X: np.ndarray, upstream: np.ndarray) -> MLPParams:
    """Summed gradients of sum_i upstream[i] * output(X[i]) w.r.t. parameters."""
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ValueError(f"batch shape {X.shape}, expected (B, {params.input_dim})")
    if upstream.shape != (X.shape[0],):
        raise ValueError("upstream must be one scalar per batch row")
    last = len(params.weights) - 1
    acts = [X]
    h = X
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)

    g_w = [None] * len(params.weights)
    g_b = [None] * len(params.biases)
    delta = upstream[:, None].astype(acts[-1].dtype)  # (B, 1) at the output layer
    for i in range(last, -1, -1):
        g_w[i] = acts[i].T @ delta
        g_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (acts[i] > 0)
    return MLPParams(g_w, g_b)


@dataclass
class AdamState:
    """First/second moment accumulators matching an MLPParams, plus step count."""

    m_w: list
    m_b: list
    v_w: list
    v_b: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params: MLPParams) -> "AdamState":
        return cls(
            [np.zeros_like(w) for w in params.weights],
            [np.zeros_like(b) for b in params.biases],
            [np.zeros_like(w) for w in params.weights],
            [np.zeros_like(b) for b in params.biases],
        )


def adam_step(params: MLPParams, grads: MLPParams, state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, weight_decay: float = 0.0) -> tuple[MLPParams, AdamState]:
    """One Adam update with bias correction; returns new params and state."""
    t = state.t + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new_w, new_b = [], []
    m_w, m_b, v_w, v_b = [], [], [], []
    for p, g, m, v, out, ms, vs in (
        (params.weights, grads.weights, state.m_w, state.v_w, new_w, m_w, v_w),
        (params.biases, grads.biases, state.m_b, state.v_b, new_b, m_b, v_b),
    ):
        for pi, gi, mi, vi in zip(p, g, m, v):
            if weight_decay:
                gi = gi + weight_decay * pi
            mi2 = beta1 * mi + (1.0 - beta1) * gi
            vi2 = beta2 * vi + (1.0 - beta2) * gi * gi
            out.append(pi - lr * (mi2 / c1) / (np.sqrt(vi2 / c2) + eps))
            ms.append(mi2)
            vs.append(vi2)
    return MLPParams(new_w, new_b), AdamState(m_w, m_b, v_w, v_b, t)


def polyak(target: MLPParams, online: MLPParams, tau: float) -> MLPParams:
    """Elementwise (1 - tau) * target + tau * online."""
    if target.layer_sizes != online.layer_sizes:
        raise ValueError("polyak: shape mismatch")
    return MLPParams(
        [(1.0 - tau) * tw + tau * ow for tw, ow in zip(target.weights, online.weights)],
        [(1.0 - tau) * tb + tau * ob for tb, ob in zip(target.biases, online.biases)],
    )


def params_to_json(params: MLPParams) -> dict:
    """Checkpoint payload: layer sizes plus layer-ordered flat weight arrays."""
    return {
        "layer_sizes": params.layer_sizes,
        "weights": [[float(x) for x in w.ravel()] for w in params.weights],
        "biases": [[float(x) for x in b] for b in params.biases],
    }


def params_from_json(payload: dict, dtype=np.float64) -> MLPParams:
    sizes = payload["layer_sizes"]
    weights, biases = [], []
    for i, flat in enumerate(payload["weights"]):
        shape = (sizes[i], sizes[i + 1])
        weights.append(np.asarray(flat, dtype=dtype).reshape(shape))
    for i, flat in enumerate(payload["biases"]):
        biases.append(np.asarray(flat, dtype=dtype))
    return MLPParams(weights, biases)
