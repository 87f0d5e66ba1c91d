"""Minimal dense-network engine.

Fully connected layers with relu / sigmoid / identity activations,
hand-written forward and backward passes, an Adam optimizer over named
parameter dicts, and a central-difference gradient checker. Everything
runs in float64; there is no computation graph, gradients for the fixed
encoder/decoder architectures are derived by hand in
:mod:`ipae.objectives`.

Arrays are plain C-contiguous float64 ``numpy`` arrays. A weight matrix
is stored ``(out_dim, in_dim)`` and a batch is ``(rows, features)``, so a
layer computes ``activation(x @ W.T + b)`` row-wise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError
from .rng import RunRng

ACTIVATIONS = ("relu", "sigmoid", "identity")


def as_matrix(a, name: str = "array") -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting anything else."""
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ShapeError(f"{name}: expected 2-D array, got ndim={out.ndim}")
    return np.ascontiguousarray(out)


def check_finite(a: np.ndarray, context: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {context}")
    return a


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activate(name: str, pre: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(pre, 0.0)
    if name == "sigmoid":
        return sigmoid(pre)
    if name == "identity":
        return pre
    raise ShapeError(f"unknown activation {name!r}")


def activate_grad(name: str, pre: np.ndarray) -> np.ndarray:
    """Derivative of the activation, evaluated from the pre-activation."""
    if name == "relu":
        return (pre > 0.0).astype(np.float64)
    if name == "sigmoid":
        s = sigmoid(pre)
        return s * (1.0 - s)
    if name == "identity":
        return np.ones_like(pre)
    raise ShapeError(f"unknown activation {name!r}")


@dataclass
class DenseLayer:
    """A fully connected layer ``activation(x @ W.T + b)``.

    W has shape (out_dim, in_dim), b has shape (out_dim,).
    """

    W: np.ndarray
    b: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.W = as_matrix(self.W, "W")
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if self.b.shape[0] != self.W.shape[0]:
            raise ShapeError(
                f"bias length {self.b.shape[0]} does not match W rows {self.W.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]


def glorot_uniform(out_dim: int, in_dim: int, rng: RunRng) -> np.ndarray:
    """Uniform init with scale sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-limit, limit, (out_dim, in_dim))


def dense_forward(layer: DenseLayer, x: np.ndarray, with_pre: bool = False):
    """Apply the layer row-wise to a batch.

    Returns the activated output, or ``(output, pre_activation)`` when
    ``with_pre`` is set (the cache feeds :func:`dense_backward`).
    """
    x = as_matrix(x, "x")
    if x.shape[1] != layer.in_dim:
        raise ShapeError(
            f"input has {x.shape[1]} columns, layer expects {layer.in_dim}"
        )
    pre = x @ layer.W.T + layer.b
    out = activate(layer.activation, pre)
    if with_pre:
        return out, pre
    return out


def dense_backward(layer: DenseLayer, x: np.ndarray, upstream: np.ndarray, pre=None, out=None):
    """Exact gradients of the forward map.

    ``upstream`` is dLoss/d(activated output). Returns
    ``(grad_W, grad_b, grad_x)``. Pass the cached pre-activation (and,
    for sigmoid layers, the cached output) to skip recomputing them.
    """
    x = as_matrix(x, "x")
    upstream = as_matrix(upstream, "upstream")
    if x.shape[1] != layer.in_dim:
        raise ShapeError(
            f"input has {x.shape[1]} columns, layer expects {layer.in_dim}"
        )
    if upstream.shape != (x.shape[0], layer.out_dim):
        raise ShapeError(
            f"upstream shape {upstream.shape} does not match ({x.shape[0]}, {layer.out_dim})"
        )
    if layer.activation == "identity":
        g_pre = upstream
    elif layer.activation == "relu":
        if pre is None:
            pre = x @ layer.W.T + layer.b
        g_pre = np.where(pre > 0.0, upstream, 0.0)
    elif layer.activation == "sigmoid":
        if out is None:
            if pre is None:
                pre = x @ layer.W.T + layer.b
            out = sigmoid(pre)
        g_pre = upstream * (out * (1.0 - out))
    else:
        if pre is None:
            pre = x @ layer.W.T + layer.b
        g_pre = upstream * activate_grad(layer.activation, pre)
    grad_W = g_pre.T @ x
    grad_b = g_pre.sum(axis=0)
    grad_x = g_pre @ layer.W
    return grad_W, grad_b, grad_x


@dataclass
class AdamState:
    """First/second moment estimates and hyperparameters for Adam."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict, lr: float = 0.001, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        m = {k: np.zeros_like(p) for k, p in params.items()}
        v = {k: np.zeros_like(p) for k, p in params.items()}
        return cls(m=m, v=v, t=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update, in place.

    Mutates both the parameter arrays and ``state``; a zero gradient
    leaves every parameter unchanged at any step count.
    """
    for name, p in params.items():
        g = grads[name]
        if np.shape(g) != np.shape(p):
            raise ShapeError(f"gradient shape {np.shape(g)} != param shape {np.shape(p)} for {name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def relative_error(a: float, n: float) -> float:
    """|a - n| scaled by the larger magnitude, with an absolute floor of 1."""
    return abs(a - n) / max(1.0, abs(a), abs(n))


def grad_check(loss_fn, params: dict, h: float = 1e-5, coords_per_param: int = 24,
               seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(params) -> (loss, grads)`` must be deterministic (freeze any
    noise before calling). For each parameter array a seeded subset of
    coordinates is perturbed by ``h * max(1, |value|)`` in both directions.
    """
    loss, grads = loss_fn(params)
    if not np.isfinite(loss):
        raise NumericError(f"loss is non-finite ({loss!r}) at the check point")
    picker = np.random.Generator(np.random.PCG64(seed))
    worst = 0.0
    for name in sorted(params):
        p = params[name]
        flat = p.reshape(-1)
        n = flat.shape[0]
        if n <= coords_per_param:
            idx = np.arange(n)
        else:
            idx = picker.choice(n, size=coords_per_param, replace=False)
        g_flat = np.asarray(grads[name]).reshape(-1)
        for c in idx:
            step = h * max(1.0, abs(flat[c]))
            orig = flat[c]
            flat[c] = orig + step
            f_plus, _ = loss_fn(params)
            flat[c] = orig - step
            f_minus, _ = loss_fn(params)
            flat[c] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(f"non-finite loss while perturbing {name}[{c}]")
            numeric = (f_plus - f_minus) / (2.0 * step)
            worst = max(worst, relative_error(g_flat[c], numeric))
    return worst
