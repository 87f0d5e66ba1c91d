"""Mutual-information regularizers, distortions, and the training loss.

Two interchangeable regularizers upper-bound the mutual information
between inputs and codes:

* ``parametric`` -- the batch-mean closed-form KL divergence from each
  code Gaussian to N(0, I). Minimizing it pulls every code toward the
  origin.
* ``information_potential`` -- a pairwise, distribution-free bound::

      (1 / (2 K N Nj)) sum_i sum_k sum_j  (mu_j - mu_i - sigma_i*eps_ik)^2 / sigma_j^2

  summed over latent dimensions, where j ranges over ``Nj`` partner
  samples per anchor. Minimizing it pulls pairs of codes toward each
  other, like attractive potentials between particles.

The total training loss is ``distortion + beta * bound`` with the same
noise draws feeding the reconstruction path and the pairwise term.
Gradients are hand-derived for the fixed one-hidden-layer codec; the
``sigma_j`` in the denominator means partner samples receive gradient
through both their mean and their variance head.

Entropy bookkeeping: ``conditional_entropy`` is the analytic
``(1/2N) sum_i log|2 pi diag(sigma_i^2)|``, which drops the additive
d_z/2 of the exact Gaussian differential entropy. The same convention is
used inside ``nonparametric_entropy_bound``, so the log-determinant terms
cancel exactly in the pairwise bound and no gradient is affected. One
visible consequence: for an input-independent encoder the pairwise bound
averages to d_z/2 rather than 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import Codec, GaussianCode, encode_cached, reparameterize
from .errors import ContractError, ShapeError
from .math_nn import as_matrix, check_finite, dense_backward, dense_forward
from .rng import RunRng

REGULARIZER_KINDS = ("none", "parametric", "information_potential")

BERNOULLI_CLAMP = 1e-7


@dataclass(frozen=True)
class RegularizerKind:
    """Which bound to train with, its weight, and its sampling budget."""

    kind: str = "information_potential"
    beta: float = 0.001
    k: int = 1
    nj: int = 1

    def __post_init__(self):
        if self.kind not in REGULARIZER_KINDS:
            raise ContractError(f"kind: unknown regularizer {self.kind!r}")
        if self.beta < 0:
            raise ContractError(f"beta: must be non-negative, got {self.beta}")
        if self.k < 1:
            raise ContractError(f"k: must be >= 1, got {self.k}")
        if self.nj < 1:
            raise ContractError(f"nj: must be >= 1, got {self.nj}")


@dataclass(frozen=True)
class LossBreakdown:
    """One loss evaluation split into its logged components.

    ``total == distortion + beta * mi_bound`` and
    ``h_z_bound == mi_bound + h_z_given_x`` by construction.
    """

    total: float
    distortion: float
    mi_bound: float
    h_z_bound: float
    h_z_given_x: float


# --- bounds and entropies ----------------------------------------------------

def parametric_mi_bound(code: GaussianCode) -> float:
    """Batch-mean KL(N(mu, diag sigma^2) || N(0, I)).

    Equals ``(1/2N) sum_i (|mu_i|^2 + sum_d sigma^2 - sum_d log sigma^2 - d_z)``
    and is exactly zero for a standard-normal code.
    """
    mu, sigma = code.mu, code.sigma
    n, d = mu.shape
    var = sigma * sigma
    total = np.sum(mu * mu) + np.sum(var) - np.sum(np.log(var)) - n * d
    return float(total / (2.0 * n))


def conditional_entropy(code: GaussianCode) -> float:
    """Analytic code entropy given the input: (1/2N) sum_i log|2 pi diag(sigma_i^2)|."""
    n = code.mu.shape[0]
    return float(np.sum(np.log(2.0 * np.pi * code.sigma ** 2)) / (2.0 * n))


def _pairwise_parts(code: GaussianCode, eps: np.ndarray, j_idx: np.ndarray):
    mu, sigma = code.mu, code.sigma
    n, d = mu.shape
    eps = np.asarray(eps, dtype=np.float64)
    if eps.ndim == 2:
        eps = eps[:, None, :]
    if eps.shape[0] != n or eps.shape[2] != d:
        raise ShapeError(f"eps shape {eps.shape} does not match code ({n}, K, {d})")
    j_idx = np.asarray(j_idx)
    if j_idx.ndim == 1:
        j_idx = j_idx[:, None]
    if j_idx.ndim != 2 or j_idx.shape[0] != n or j_idx.shape[1] < 1:
        raise ContractError(f"j_idx must be (batch, Nj) with Nj >= 1, got shape {j_idx.shape}")
    if j_idx.min() < 0 or j_idx.max() >= n:
        raise ContractError("j_idx entries must index into the batch")
    mu_j = mu[j_idx]                                   # (n, nj, d)
    sig_j = sigma[j_idx]                               # (n, nj, d)
    z = mu[:, None, :] + sigma[:, None, :] * eps       # (n, k, d)
    delta = mu_j[:, None, :, :] - z[:, :, None, :]     # (n, k, nj, d)
    w = delta / (sig_j * sig_j)[:, None, :, :]         # delta / sigma_j^2
    return eps, j_idx, z, delta, w, sig_j


def ip_mi_bound(code: GaussianCode, eps: np.ndarray, j_idx: np.ndarray) -> float:
    """Pairwise mutual-information bound, a mean of squared whitened gaps.

    Identical to ``nonparametric_entropy_bound - conditional_entropy``
    whenever every sample serves as a partner equally often (the partner
    draws from :func:`partner_indices` guarantee this), because the
    log-determinant terms cancel.
    """
    eps, j_idx, _, delta, w, _ = _pairwise_parts(code, eps, j_idx)
    n, k = eps.shape[0], eps.shape[1]
    nj = j_idx.shape[1]
    return float(np.sum(delta * w) / (2.0 * k * n * nj))


def nonparametric_entropy_bound(code: GaussianCode, eps: np.ndarray, j_idx: np.ndarray) -> float:
    """Distribution-free upper bound on the code entropy.

    Averages ``-log N(z_ik; mu_j, diag sigma_j^2)`` (without the d_z/2
    constant) over anchors i, noise draws k, and partners j.
    """
    eps, j_idx, _, delta, w, sig_j = _pairwise_parts(code, eps, j_idx)
    n, k = eps.shape[0], eps.shape[1]
    nj = j_idx.shape[1]
    sq = np.sum(delta * w)
    logdet = np.sum(np.log(2.0 * np.pi * sig_j ** 2))
    return float((sq + k * logdet) / (2.0 * k * n * nj))


def partner_indices(n: int, nj: int, rng: RunRng) -> np.ndarray:
    """Draw ``nj`` partners per anchor, uniform over the batch minus self.

    Built from one random permutation plus ``nj`` distinct random cyclic
    shifts, so partners within an anchor never repeat, no anchor partners
    itself, and every sample appears as a partner exactly ``nj`` times.
    The last property keeps the entropy-bound decomposition exact per
    batch. A single-row batch has only itself to pair with.
    """
    if n < 1:
        raise ContractError("partner_indices: empty batch")
    if n == 1:
        return np.zeros((1, max(nj, 1)), dtype=np.intp)
    if nj > n - 1:
        raise ContractError(f"partner_indices: nj={nj} exceeds batch size - 1 ({n - 1})")
    perm = rng.permutation(n)
    pos = np.empty(n, dtype=np.intp)
    pos[perm] = np.arange(n)
    shifts = 1 + rng.permutation(n - 1)[:nj]
    cols = [perm[(pos + s) % n] for s in shifts]
    return np.stack(cols, axis=1)


# --- distortions --------------------------------------------------------------

def mse_distortion(x: np.ndarray, xt: np.ndarray) -> float:
    """Squared Euclidean distance per sample, averaged over the batch."""
    x = as_matrix(x, "x")
    xt = as_matrix(xt, "xt")
    if x.shape != xt.shape:
        raise ShapeError(f"x shape {x.shape} != reconstruction shape {xt.shape}")
    diff = xt - x
    return float(np.sum(diff * diff) / x.shape[0])


def bernoulli_distortion(x: np.ndarray, xt: np.ndarray) -> float:
    """Per-sample binary cross-entropy, averaged over the batch.

    Inputs must lie in [0, 1]; reconstructions are clamped away from 0
    and 1 before the logs.
    """
    x = as_matrix(x, "x")
    xt = as_matrix(xt, "xt")
    if x.shape != xt.shape:
        raise ShapeError(f"x shape {x.shape} != reconstruction shape {xt.shape}")
    if x.min() < 0.0 or x.max() > 1.0:
        raise ContractError("bernoulli_distortion: x entries must lie in [0, 1]")
    xt_c = np.clip(xt, BERNOULLI_CLAMP, 1.0 - BERNOULLI_CLAMP)
    ll = x * np.log(xt_c) + (1.0 - x) * np.log1p(-xt_c)
    return float(-np.sum(ll) / x.shape[0])


def _distortion_and_grad(kind: str, x_rep: np.ndarray, xt: np.ndarray):
    rows = x_rep.shape[0]
    if kind == "mse":
        diff = xt - x_rep
        value = float(np.sum(diff * diff) / rows)
        return value, (2.0 / rows) * diff
    if kind == "bernoulli":
        if x_rep.min() < 0.0 or x_rep.max() > 1.0:
            raise ContractError("bernoulli distortion: x entries must lie in [0, 1]")
        xt_c = np.clip(xt, BERNOULLI_CLAMP, 1.0 - BERNOULLI_CLAMP)
        inside = ((xt > BERNOULLI_CLAMP) & (xt < 1.0 - BERNOULLI_CLAMP)).astype(np.float64)
        value = float(-np.sum(x_rep * np.log(xt_c) + (1.0 - x_rep) * np.log1p(-xt_c)) / rows)
        grad = inside * (-x_rep / xt_c + (1.0 - x_rep) / (1.0 - xt_c)) / rows
        return value, grad
    raise ContractError(f"unknown distortion kind {kind!r}")


# --- full objective ------------------------------------------------------------

def total_loss(x, codec: Codec, reg: RegularizerKind, eps, j_idx=None,
               distortion: str = "mse") -> LossBreakdown:
    """Evaluate the training objective without gradients."""
    breakdown, _ = _objective(x, codec, reg, eps, j_idx, distortion, want_grads=False)
    return breakdown


def total_loss_with_grads(x, codec: Codec, reg: RegularizerKind, eps, j_idx=None,
                          distortion: str = "mse"):
    """Evaluate the objective and its gradient for every codec parameter.

    Returns ``(LossBreakdown, grads)`` with grads keyed like
    ``Codec.params()``. Noise is treated as a constant: gradients flow to
    mu and sigma through the reparameterization, never to eps.
    """
    return _objective(x, codec, reg, eps, j_idx, distortion, want_grads=True)


def _objective(x, codec, reg, eps, j_idx, distortion, want_grads):
    x = as_matrix(x, "x")
    n = x.shape[0]
    if n == 0:
        raise ContractError("total_loss: empty batch")
    eps = np.asarray(eps, dtype=np.float64)
    if eps.ndim == 2:
        eps = eps[:, None, :]
    k = eps.shape[1]

    code, enc_cache = encode_cached(codec, x)
    mu, sigma = code.mu, code.sigma
    d = mu.shape[1]

    z3 = reparameterize(code, eps)
    z_flat = z3.reshape(n * k, d)
    hd, pre_d = dense_forward(codec.layers["dec.h"], z_flat, with_pre=True)
    xt, pre_o = dense_forward(codec.layers["dec.out"], hd, with_pre=True)

    x_rep = np.repeat(x, k, axis=0)
    dist_value, g_xt = _distortion_and_grad(distortion, x_rep, xt)

    h_cond = conditional_entropy(code)
    g_mu_reg = None
    g_sig_reg = None
    g_z_reg = None

    if reg.kind == "none":
        mi = 0.0
    elif reg.kind == "parametric":
        mi = parametric_mi_bound(code)
        if want_grads:
            g_mu_reg = mu / n
            g_sig_reg = (sigma - 1.0 / sigma) / n
    else:
        if j_idx is None:
            raise ContractError("total_loss: information_potential needs partner indices")
        eps3, j_idx, _, delta, w, sig_j = _pairwise_parts(code, eps, j_idx)
        nj = j_idx.shape[1]
        scale = 1.0 / (2.0 * k * n * nj)
        mi = float(np.sum(delta * w) * scale)
        if want_grads:
            two_scale = 2.0 * scale
            g_z_reg = -two_scale * w.sum(axis=2)                      # (n, k, d)
            pm = two_scale * w.sum(axis=1)                            # (n, nj, d)
            ps = -two_scale * (delta * w).sum(axis=1) / sig_j         # (n, nj, d)
            g_mu_reg = np.zeros_like(mu)
            g_sig_reg = np.zeros_like(sigma)
            flat_j = j_idx.reshape(-1)
            np.add.at(g_mu_reg, flat_j, pm.reshape(-1, d))
            np.add.at(g_sig_reg, flat_j, ps.reshape(-1, d))

    total = dist_value + reg.beta * mi
    check_finite(np.asarray(total), "total_loss")
    breakdown = LossBreakdown(
        total=total,
        distortion=dist_value,
        mi_bound=mi,
        h_z_bound=mi + h_cond,
        h_z_given_x=h_cond,
    )
    if not want_grads:
        return breakdown, None

    layers = codec.layers
    gW_o, gb_o, g_hd = dense_backward(layers["dec.out"], hd, g_xt, pre=pre_o, out=xt)
    gW_d, gb_d, g_zf = dense_backward(layers["dec.h"], z_flat, g_hd, pre=pre_d, out=hd)
    g_z3 = g_zf.reshape(n, k, d)
    if g_z_reg is not None:
        g_z3 = g_z3 + reg.beta * g_z_reg

    g_mu = g_z3.sum(axis=1)
    g_sig = np.sum(g_z3 * eps, axis=1)
    if g_mu_reg is not None:
        g_mu = g_mu + reg.beta * g_mu_reg
        g_sig = g_sig + reg.beta * g_sig_reg

    # chain through sigma = clip(exp(logvar / 2)); clamped entries pass nothing
    g_logvar = g_sig * 0.5 * sigma * enc_cache["pass_mask"]

    h = enc_cache["h"]
    gW_mu, gb_mu, g_h1 = dense_backward(layers["enc.mu"], h, g_mu)
    gW_lv, gb_lv, g_h2 = dense_backward(layers["enc.logvar"], h, g_logvar)
    gW_h, gb_h, _ = dense_backward(layers["enc.h"], x, g_h1 + g_h2,
                                   pre=enc_cache["pre_h"], out=h)

    grads = {
        "enc.h.W": gW_h, "enc.h.b": gb_h,
        "enc.mu.W": gW_mu, "enc.mu.b": gb_mu,
        "enc.logvar.W": gW_lv, "enc.logvar.b": gb_lv,
        "dec.h.W": gW_d, "dec.h.b": gb_d,
        "dec.out.W": gW_o, "dec.out.b": gb_o,
    }
    return breakdown, grads
