import math

import numpy as np
import pytest

from ipae import (CodecSpec, ContractError, GaussianCode, RegularizerKind,
                  RunRng, bernoulli_distortion, conditional_entropy,
                  init_codec, ip_mi_bound, mse_distortion,
                  nonparametric_entropy_bound, parametric_mi_bound,
                  partner_indices, total_loss, total_loss_with_grads)
from ipae.codec import zero_codec

from oracles import (layers_as_lists, oracle_conditional_entropy,
                     oracle_entropy_bound, oracle_ip_bound,
                     oracle_kl_to_standard_normal, oracle_total_loss)

LN2PI_HALF = 0.5 * math.log(2.0 * math.pi)


def random_code(rng, n, d):
    mu = rng.normal((n, d))
    sigma = np.exp(0.5 * rng.uniform(-2.0, 2.0, (n, d)))
    return GaussianCode(mu, sigma)


def full_j(n):
    return np.tile(np.arange(n), (n, 1))


# --- parametric bound --------------------------------------------------------

def test_parametric_bound_zero_for_standard_normal():
    code = GaussianCode(np.zeros((5, 3)), np.ones((5, 3)))
    assert parametric_mi_bound(code) == 0.0


def test_parametric_bound_pure_mean_shift():
    code = GaussianCode(np.array([[1.0, 0.0]]), np.ones((1, 2)))
    assert parametric_mi_bound(code) == pytest.approx(0.5, abs=1e-15)


def test_parametric_bound_hand_value():
    # single sample, variances (4, 1): (4 + 1 - ln 4 - 2) / 2
    code = GaussianCode(np.zeros((1, 2)), np.array([[2.0, 1.0]]))
    expected = (4.0 + 1.0 - math.log(4.0) - 2.0) / 2.0
    assert parametric_mi_bound(code) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.80685, abs=5e-6)


def test_parametric_bound_numerical_integration_cross_check():
    # KL via quadrature of p log(p/q) per dimension
    from scipy import integrate
    code = GaussianCode(np.array([[0.3, -1.1]]), np.array([[2.0, 0.7]]))

    def kl_1d(m, s):
        def integrand(t):
            p = math.exp(-0.5 * ((t - m) / s) ** 2) / (s * math.sqrt(2 * math.pi))
            logq = -0.5 * t * t - 0.5 * math.log(2 * math.pi)
            logp = -0.5 * ((t - m) / s) ** 2 - math.log(s) - 0.5 * math.log(2 * math.pi)
            return p * (logp - logq)
        val, _ = integrate.quad(integrand, m - 12 * s - 12, m + 12 * s + 12, limit=200)
        return val

    expected = kl_1d(0.3, 2.0) + kl_1d(-1.1, 0.7)
    assert parametric_mi_bound(code) == pytest.approx(expected, abs=1e-9)


def test_parametric_bound_matches_closed_form_oracle():
    rng = RunRng(17)
    for _ in range(100):
        n = int(rng.integers(1, 9))
        d = int(rng.integers(1, 6))
        code = random_code(rng, n, d)
        got = parametric_mi_bound(code)
        want = oracle_kl_to_standard_normal(code.mu.tolist(), code.sigma.tolist())
        assert abs(got - want) < 1e-12 * max(1.0, abs(want))
        assert got >= 0.0


# --- conditional entropy -----------------------------------------------------

def test_conditional_entropy_unit_sigma():
    code = GaussianCode(np.zeros((1, 1)), np.ones((1, 1)))
    assert conditional_entropy(code) == pytest.approx(LN2PI_HALF, abs=1e-12)
    assert LN2PI_HALF == pytest.approx(0.91894, abs=5e-6)


def test_conditional_entropy_sixteen_dims():
    code = GaussianCode(np.zeros((3, 16)), np.ones((3, 16)))
    assert conditional_entropy(code) == pytest.approx(16 * LN2PI_HALF, abs=1e-12)
    assert 16 * LN2PI_HALF == pytest.approx(14.703, abs=5e-4)


def test_conditional_entropy_doubling_sigma_shifts_by_dz_ln2():
    rng = RunRng(5)
    code = random_code(rng, 4, 3)
    doubled = GaussianCode(code.mu, 2.0 * code.sigma)
    shift = conditional_entropy(doubled) - conditional_entropy(code)
    assert shift == pytest.approx(3 * math.log(2.0), abs=1e-12)


def test_conditional_entropy_matches_oracle():
    rng = RunRng(6)
    code = random_code(rng, 7, 4)
    want = oracle_conditional_entropy(code.sigma.tolist())
    assert conditional_entropy(code) == pytest.approx(want, abs=1e-12)


# --- pairwise entropy / MI bounds ---------------------------------------------

def test_entropy_bound_single_degenerate_term():
    code = GaussianCode(np.zeros((1, 1)), np.ones((1, 1)))
    eps = np.zeros((1, 1, 1))
    j = np.array([[0]])
    assert nonparametric_entropy_bound(code, eps, j) == pytest.approx(LN2PI_HALF, abs=1e-12)


def test_entropy_bound_constant_encoder_approaches_true_entropy():
    # single-component mixture: the bound is tight; true entropy of N(0,1)
    code = GaussianCode(np.zeros((1, 1)), np.ones((1, 1)))
    eps = RunRng(8).normal((1, 200_000, 1))
    j = np.array([[0]])
    got = nonparametric_entropy_bound(code, eps, j)
    true_h = 0.5 * math.log(2 * math.pi * math.e)
    assert got == pytest.approx(true_h, abs=0.01)
    assert true_h == pytest.approx(1.41894, abs=5e-6)


def test_entropy_bound_dominates_conditional_entropy():
    rng = RunRng(9)
    for _ in range(20):
        n = int(rng.integers(2, 7))
        code = random_code(rng, n, 3)
        eps = rng.normal((n, 2, 3))
        for j in (full_j(n), partner_indices(n, n - 1, rng)):
            assert nonparametric_entropy_bound(code, eps, j) >= conditional_entropy(code) - 1e-12


def test_entropy_bound_matches_oracle():
    rng = RunRng(10)
    code = random_code(rng, 5, 2)
    eps = rng.normal((5, 3, 2))
    j = partner_indices(5, 2, rng)
    want = oracle_entropy_bound(code.mu.tolist(), code.sigma.tolist(), eps.tolist(), j.tolist())
    assert nonparametric_entropy_bound(code, eps, j) == pytest.approx(want, abs=1e-12)


def test_ip_bound_zero_when_anchor_is_its_own_partner_noiselessly():
    code = GaussianCode(np.array([[0.4, -0.2]]), np.array([[1.3, 0.8]]))
    eps = np.zeros((1, 1, 2))
    assert ip_mi_bound(code, eps, np.array([[0]])) == 0.0


def test_ip_bound_two_sample_hand_value():
    # mu 0 and 1, unit sigma, no noise, full pairs: terms 0,1,1,0 -> 0.25
    code = GaussianCode(np.array([[0.0], [1.0]]), np.ones((2, 1)))
    eps = np.zeros((2, 1, 1))
    got = ip_mi_bound(code, eps, full_j(2))
    assert got == pytest.approx(0.25, abs=1e-15)


def test_ip_bound_constant_encoder_expectation():
    # mu=0, sigma=1: bound averages |eps|^2 / 2 -> d_z / 2
    d = 4
    code = GaussianCode(np.zeros((8, d)), np.ones((8, d)))
    rng = RunRng(11)
    eps = rng.normal((8, 2000, d))
    j = partner_indices(8, 3, rng)
    assert ip_mi_bound(code, eps, j) == pytest.approx(d / 2.0, rel=0.03)


def test_ip_bound_matches_oracle():
    rng = RunRng(12)
    code = random_code(rng, 6, 3)
    eps = rng.normal((6, 2, 3))
    j = partner_indices(6, 4, rng)
    want = oracle_ip_bound(code.mu.tolist(), code.sigma.tolist(), eps.tolist(), j.tolist())
    assert ip_mi_bound(code, eps, j) == pytest.approx(want, abs=1e-12)


def test_ip_bound_requires_partners():
    code = GaussianCode(np.zeros((2, 1)), np.ones((2, 1)))
    with pytest.raises(ContractError):
        ip_mi_bound(code, np.zeros((2, 1, 1)), np.zeros((2, 0), dtype=int))


def test_decomposition_identity_log_terms_cancel():
    # Eq-level identity: ip == entropy_bound - conditional_entropy
    rng = RunRng(13)
    for _ in range(100):
        n = int(rng.integers(2, 8))
        d = int(rng.integers(1, 5))
        code = random_code(rng, n, d)
        k = int(rng.integers(1, 4))
        eps = rng.normal((n, k, d))
        nj = int(rng.integers(1, n))
        for j in (full_j(n), partner_indices(n, nj, rng)):
            lhs = ip_mi_bound(code, eps, j)
            rhs = nonparametric_entropy_bound(code, eps, j) - conditional_entropy(code)
            assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))
            assert lhs >= 0.0


def test_partner_indices_properties():
    rng = RunRng(14)
    for n, nj in [(2, 1), (5, 1), (8, 3), (9, 8)]:
        j = partner_indices(n, nj, rng)
        assert j.shape == (n, nj)
        anchors = np.arange(n)[:, None]
        assert np.all(j != anchors), "no anchor partners itself"
        for row in j:
            assert len(set(row.tolist())) == nj, "no repeats within an anchor"
        counts = np.bincount(j.reshape(-1), minlength=n)
        assert np.all(counts == nj), "every sample used as partner equally often"


def test_partner_indices_rejects_oversized_nj():
    with pytest.raises(ContractError):
        partner_indices(4, 4, RunRng(0))


def test_partner_indices_singleton_batch_pairs_with_self():
    j = partner_indices(1, 1, RunRng(0))
    assert j.tolist() == [[0]]


# --- distortions ----------------------------------------------------------------

def test_mse_zero_on_equal():
    x = RunRng(1).normal((4, 3))
    assert mse_distortion(x, x.copy()) == 0.0


def test_mse_hand_values():
    assert mse_distortion(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]])) == 25.0
    x = np.zeros((2, 2))
    xt = np.array([[3.0, 4.0], [0.0, 0.0]])
    assert mse_distortion(x, xt) == 12.5


def test_bernoulli_fair_coin_entropy():
    m = 7
    x = np.full((3, m), 0.5)
    assert bernoulli_distortion(x, x.copy()) == pytest.approx(m * math.log(2), rel=1e-12)


def test_bernoulli_perfect_reconstruction_limit():
    x = np.ones((1, 4))
    assert bernoulli_distortion(x, np.full((1, 4), 1.0 - 1e-9)) < 1e-6


def test_bernoulli_hand_value():
    x = np.array([[1.0, 0.0]])
    xt = np.array([[0.9, 0.2]])
    want = -math.log(0.9) - math.log(0.8)
    assert bernoulli_distortion(x, xt) == pytest.approx(want, abs=1e-12)
    assert want == pytest.approx(0.3285, abs=5e-5)


def test_bernoulli_rejects_out_of_range_inputs():
    with pytest.raises(ContractError):
        bernoulli_distortion(np.array([[1.5]]), np.array([[0.5]]))


def test_bernoulli_clamp_keeps_loss_finite():
    x = np.array([[1.0, 0.0]])
    xt = np.array([[0.0, 1.0]])  # worst possible reconstruction
    v = bernoulli_distortion(x, xt)
    assert np.isfinite(v)


# --- total objective --------------------------------------------------------------

def small_codec(seed=3):
    return init_codec(CodecSpec(2, 5, 3, "relu", "identity"), RunRng(seed))


def test_total_loss_beta_zero_is_pure_reconstruction():
    rng = RunRng(20)
    codec = small_codec()
    x = rng.uniform(-1, 1, (6, 2))
    eps = rng.normal((6, 1, 3))
    j = partner_indices(6, 1, rng)
    br = total_loss(x, codec, RegularizerKind("information_potential", beta=0.0), eps, j)
    assert br.total == br.distortion


def test_total_loss_degenerate_zero_case():
    codec = zero_codec(CodecSpec(2, 5, 3, "relu", "identity"))
    x = np.zeros((4, 2))
    eps = np.zeros((4, 1, 3))
    j = partner_indices(4, 1, RunRng(0))
    br = total_loss(x, codec, RegularizerKind("information_potential", beta=0.001), eps, j)
    assert br.total == 0.0 and br.distortion == 0.0 and br.mi_bound == 0.0


def test_total_loss_matches_straight_line_oracle():
    rng = RunRng(42)
    codec = small_codec(seed=7)
    x = rng.uniform(-2, 2, (4, 2))
    eps = rng.normal((4, 2, 3))
    j = partner_indices(4, 2, rng)
    layers = layers_as_lists(codec)
    for kind in ("parametric", "information_potential", "none"):
        reg = RegularizerKind(kind, beta=0.37, k=2, nj=2)
        br = total_loss(x, codec, reg, eps, j)
        want_total, want_dist, want_mi = oracle_total_loss(
            layers, x.tolist(), eps.tolist(), j.tolist(), kind, 0.37, "mse")
        assert abs(br.total - want_total) < 1e-12 * max(1.0, abs(want_total))
        assert abs(br.distortion - want_dist) < 1e-12 * max(1.0, abs(want_dist))
        assert abs(br.mi_bound - want_mi) < 1e-12 * max(1.0, abs(want_mi))


def test_total_loss_bernoulli_matches_oracle():
    rng = RunRng(43)
    codec = init_codec(CodecSpec(3, 4, 2, "sigmoid", "sigmoid"), rng)
    x = rng.uniform(0.0, 1.0, (5, 3))
    eps = rng.normal((5, 1, 2))
    j = partner_indices(5, 1, rng)
    layers = layers_as_lists(codec)
    br = total_loss(x, codec, RegularizerKind("information_potential", beta=0.05),
                    eps, j, distortion="bernoulli")
    want_total, _, _ = oracle_total_loss(layers, x.tolist(), eps.tolist(), j.tolist(),
                                         "information_potential", 0.05, "bernoulli")
    assert abs(br.total - want_total) < 1e-12 * max(1.0, abs(want_total))


def test_breakdown_bookkeeping_invariants():
    rng = RunRng(44)
    codec = small_codec(seed=8)
    x = rng.uniform(-1, 1, (5, 2))
    eps = rng.normal((5, 1, 3))
    j = partner_indices(5, 2, rng)
    for kind in ("parametric", "information_potential", "none"):
        reg = RegularizerKind(kind, beta=0.21, nj=2)
        br = total_loss(x, codec, reg, eps, j)
        assert abs(br.total - (br.distortion + reg.beta * br.mi_bound)) < 1e-12
        assert abs(br.h_z_bound - (br.mi_bound + br.h_z_given_x)) < 1e-12
        assert br.mi_bound >= 0.0


def test_total_loss_invariant_under_batch_permutation():
    rng = RunRng(45)
    codec = small_codec(seed=9)
    n = 8
    x = rng.uniform(-1, 1, (n, 2))
    eps = rng.normal((n, 1, 3))
    j = partner_indices(n, 3, rng)
    perm = RunRng(46).permutation(n)
    inv = np.empty(n, dtype=int)
    inv[perm] = np.arange(n)
    x_p = x[perm]
    eps_p = eps[perm]
    j_p = inv[j[perm]]
    for kind in ("parametric", "information_potential"):
        reg = RegularizerKind(kind, beta=0.6, nj=3)
        a = total_loss(x, codec, reg, eps, j)
        b = total_loss(x_p, codec, reg, eps_p, j_p)
        assert abs(a.total - b.total) < 1e-12 * max(1.0, abs(a.total))


def test_gradients_match_finite_differences_small_net():
    from ipae import grad_check
    rng = RunRng(47)
    codec = small_codec(seed=10)
    x = rng.uniform(-2, 2, (4, 2))
    eps = rng.normal((4, 1, 3))
    j = partner_indices(4, 2, rng)
    for kind in ("parametric", "information_potential"):
        reg = RegularizerKind(kind, beta=0.8, nj=2)

        def loss_fn(params):
            br, grads = total_loss_with_grads(x, codec, reg, eps, j)
            return br.total, grads

        assert grad_check(loss_fn, codec.params(), coords_per_param=30) < 1e-6


def test_total_loss_requires_partners_for_ip():
    codec = small_codec()
    x = np.zeros((3, 2))
    eps = np.zeros((3, 1, 3))
    with pytest.raises(ContractError):
        total_loss(x, codec, RegularizerKind("information_potential"), eps, None)
