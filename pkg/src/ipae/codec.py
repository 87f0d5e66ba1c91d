"""Gaussian stochastic encoder/decoder pairs.

The encoder is one hidden dense layer followed by two parallel linear
heads emitting the code mean and log-variance; the standard deviation is
``exp(logvar / 2)`` clamped to [SIGMA_FLOOR, SIGMA_CEIL]. Sampling uses
the reparameterization ``z = mu + sigma * eps`` with ``eps ~ N(0, I)``,
so gradients reach ``mu`` and ``sigma`` but never the noise. The decoder
mirrors the encoder: one hidden layer, then a linear output layer with
the preset's output activation.

Two presets cover the experiments: a 2-d toy codec (2 -> 2048 -> 16,
relu hidden, identity output) and an image codec (784 -> 1024 -> 8,
sigmoid hidden, sigmoid output).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FormatError, NumericError, ShapeError
from .ioutil import atomic_write_text
from .math_nn import DenseLayer, as_matrix, dense_forward, glorot_uniform
from .rng import RunRng

SIGMA_FLOOR = 1e-4
SIGMA_CEIL = 1e3

CHECKPOINT_VERSION = 1

LAYER_NAMES = ("enc.h", "enc.mu", "enc.logvar", "dec.h", "dec.out")


@dataclass(frozen=True)
class CodecSpec:
    """Architecture description for one encoder/decoder pair."""

    input_dim: int
    hidden_dim: int
    latent_dim: int
    hidden_activation: str = "relu"
    output_activation: str = "identity"


PRESETS = {
    "toy": CodecSpec(2, 2048, 16, "relu", "identity"),
    "mnist": CodecSpec(784, 1024, 8, "sigmoid", "sigmoid"),
}


def codec_preset(name: str) -> CodecSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise ContractError(f"unknown codec preset {name!r}; choose from {sorted(PRESETS)}")


@dataclass
class GaussianCode:
    """Per-sample code distribution N(mu, diag(sigma^2)).

    ``mu`` and ``sigma`` are (batch, latent_dim); sigma entries must be
    finite and at least SIGMA_FLOOR so downstream divisions stay bounded.
    """

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = as_matrix(self.mu, "mu")
        self.sigma = as_matrix(self.sigma, "sigma")
        if self.mu.shape != self.sigma.shape:
            raise ShapeError(f"mu shape {self.mu.shape} != sigma shape {self.sigma.shape}")
        if not np.all(np.isfinite(self.mu)):
            raise NumericError("mu entries must be finite")
        if self.sigma.size and (not np.all(np.isfinite(self.sigma)) or self.sigma.min() < SIGMA_FLOOR):
            raise NumericError(f"sigma entries must be finite and >= {SIGMA_FLOOR}")


@dataclass
class Codec:
    """Parameter bundle: the five dense layers of one encoder/decoder."""

    spec: CodecSpec
    layers: dict

    def params(self) -> dict:
        """Flat name -> array view of every weight and bias."""
        out = {}
        for name, layer in self.layers.items():
            out[f"{name}.W"] = layer.W
            out[f"{name}.b"] = layer.b
        return out

    def copy(self) -> "Codec":
        layers = {
            name: DenseLayer(layer.W.copy(), layer.b.copy(), layer.activation)
            for name, layer in self.layers.items()
        }
        return Codec(self.spec, layers)


def init_codec(spec: CodecSpec, rng: RunRng) -> Codec:
    """Glorot-uniform weights, zero biases, drawn in a fixed layer order."""
    dims = {
        "enc.h": (spec.hidden_dim, spec.input_dim, spec.hidden_activation),
        "enc.mu": (spec.latent_dim, spec.hidden_dim, "identity"),
        "enc.logvar": (spec.latent_dim, spec.hidden_dim, "identity"),
        "dec.h": (spec.hidden_dim, spec.latent_dim, spec.hidden_activation),
        "dec.out": (spec.input_dim, spec.hidden_dim, spec.output_activation),
    }
    layers = {}
    for name in LAYER_NAMES:
        out_dim, in_dim, act = dims[name]
        layers[name] = DenseLayer(glorot_uniform(out_dim, in_dim, rng), np.zeros(out_dim), act)
    return Codec(spec, layers)


def zero_codec(spec: CodecSpec) -> Codec:
    """All-zero parameters; handy as a degenerate reference point."""

    class _Zero:
        def uniform(self, low, high, shape):
            return np.zeros(shape)

    return init_codec(spec, _Zero())


def encode_cached(codec: Codec, x: np.ndarray):
    """Encode a batch and keep the intermediates needed for backprop.

    Returns ``(code, cache)`` where cache holds the hidden pre-activation
    and output, raw log-variance, and the clamp pass-through mask.
    """
    x = as_matrix(x, "x")
    if x.shape[1] != codec.spec.input_dim:
        raise ShapeError(f"x has {x.shape[1]} columns, encoder expects {codec.spec.input_dim}")
    h, pre_h = dense_forward(codec.layers["enc.h"], x, with_pre=True)
    _finite(h, "enc.h")
    mu = dense_forward(codec.layers["enc.mu"], h)
    _finite(mu, "enc.mu")
    logvar = dense_forward(codec.layers["enc.logvar"], h)
    _finite(logvar, "enc.logvar")
    with np.errstate(over="ignore"):
        sigma_raw = np.exp(0.5 * logvar)
    sigma = np.clip(sigma_raw, SIGMA_FLOOR, SIGMA_CEIL)
    # gradient passes the clamp only strictly inside the interval
    pass_mask = ((sigma_raw > SIGMA_FLOOR) & (sigma_raw < SIGMA_CEIL)).astype(np.float64)
    cache = {"x": x, "pre_h": pre_h, "h": h, "logvar": logvar, "pass_mask": pass_mask}
    return GaussianCode(mu, sigma), cache


def encode(codec: Codec, x: np.ndarray) -> GaussianCode:
    """Map inputs to their Gaussian code parameters."""
    code, _ = encode_cached(codec, x)
    return code


def draw_noise(n: int, k: int, latent_dim: int, rng: RunRng) -> np.ndarray:
    """(n, k, latent_dim) block of standard-normal reparameterization noise."""
    return rng.normal((n, k, latent_dim))


def reparameterize(code: GaussianCode, eps: np.ndarray) -> np.ndarray:
    """z[i, k] = mu[i] + sigma[i] * eps[i, k].

    ``eps`` is (batch, K, latent_dim); a 2-D array is treated as K=1.
    """
    eps = np.asarray(eps, dtype=np.float64)
    if eps.ndim == 2:
        eps = eps[:, None, :]
    if eps.ndim != 3:
        raise ShapeError(f"eps must be 2-D or 3-D, got ndim={eps.ndim}")
    n, d = code.mu.shape
    if eps.shape[0] != n or eps.shape[2] != d:
        raise ShapeError(f"eps shape {eps.shape} does not match code ({n}, K, {d})")
    return code.mu[:, None, :] + code.sigma[:, None, :] * eps


def decode(codec: Codec, z: np.ndarray) -> np.ndarray:
    """Map codes back to input space.

    Accepts (rows, latent_dim) or (batch, K, latent_dim); the output keeps
    the leading shape with the last axis replaced by input_dim.
    """
    z = np.asarray(z, dtype=np.float64)
    squeeze = None
    if z.ndim == 3:
        squeeze = z.shape[:2]
        z = z.reshape(-1, z.shape[2])
    z = as_matrix(z, "z")
    if z.shape[1] != codec.spec.latent_dim:
        raise ShapeError(f"z has {z.shape[1]} columns, decoder expects {codec.spec.latent_dim}")
    hd = dense_forward(codec.layers["dec.h"], z)
    _finite(hd, "dec.h")
    xt = dense_forward(codec.layers["dec.out"], hd)
    _finite(xt, "dec.out")
    if squeeze is not None:
        xt = xt.reshape(squeeze + (xt.shape[1],))
    return xt


def _finite(a: np.ndarray, layer: str) -> None:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite activations in layer {layer!r}")


# --- checkpoint format (shared with the CLI) --------------------------------

def checkpoint_document(codec: Codec, seed: int) -> dict:
    doc = {
        "version": CHECKPOINT_VERSION,
        "codec": {
            "input_dim": codec.spec.input_dim,
            "hidden_dim": codec.spec.hidden_dim,
            "latent_dim": codec.spec.latent_dim,
            "hidden_activation": codec.spec.hidden_activation,
            "output_activation": codec.spec.output_activation,
        },
        "seed": int(seed),
        "params": {},
    }
    for name, arr in codec.params().items():
        doc["params"][name] = {
            "shape": list(arr.shape),
            "data": np.ascontiguousarray(arr, dtype=np.float64).reshape(-1).tolist(),
        }
    return doc


def save_checkpoint(path, codec: Codec, seed: int) -> None:
    atomic_write_text(path, json.dumps(checkpoint_document(codec, seed), separators=(",", ":")))


def load_checkpoint(path):
    """Read a checkpoint back into ``(codec, seed)``."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise FormatError(f"checkpoint {path}: invalid JSON ({e})") from e
    if not isinstance(doc, dict) or doc.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"checkpoint {path}: unsupported version {doc.get('version')!r}")
    try:
        spec = CodecSpec(**doc["codec"])
        raw = doc["params"]
    except (KeyError, TypeError) as e:
        raise FormatError(f"checkpoint {path}: missing field ({e})") from e
    codec = zero_codec(spec)
    params = codec.params()
    if set(raw) != set(params):
        raise FormatError(f"checkpoint {path}: parameter names do not match the architecture")
    for name, entry in raw.items():
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if arr.shape != params[name].shape:
            raise FormatError(
                f"checkpoint {path}: {name} has shape {arr.shape}, expected {params[name].shape}"
            )
        params[name][...] = arr
    return codec, int(doc["seed"])
