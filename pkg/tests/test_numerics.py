"""Quadrature, jittered Cholesky, stable log Phi, seeded randomness.

Oracles: numpy's hermgauss for quadrature cross-checks, mpmath and
scipy.special.log_ndtr for the log-CDF tail, plain numpy Cholesky for
reconstruction checks. The implementation under test never calls these.
"""

import math

import mpmath
import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import log_ndtr

from ldgd.errors import InvalidArgumentError, NumericalError
from ldgd.numerics import (
    RandomSource,
    cholesky_with_jitter,
    gauss_hermite,
    log_normal_cdf,
    normal_cdf,
    seeded_rng,
)

SQRT_PI = math.sqrt(math.pi)


# -- Gauss-Hermite ------------------------------------------------------


def test_order_one_rule_is_single_midpoint_node():
    rule = gauss_hermite(1)
    npt.assert_allclose(rule.nodes, [0.0], atol=0)
    npt.assert_allclose(rule.weights, [SQRT_PI], rtol=1e-15)


def test_order_two_rule_matches_hand_solved_jacobi_matrix():
    # 2x2 Jacobi matrix [[0, 1/sqrt 2], [1/sqrt 2, 0]]: eigenvalues +-1/sqrt 2.
    rule = gauss_hermite(2)
    npt.assert_allclose(rule.nodes, [-1 / math.sqrt(2), 1 / math.sqrt(2)], rtol=1e-14)
    npt.assert_allclose(rule.weights, [SQRT_PI / 2, SQRT_PI / 2], rtol=1e-13)


def test_order_twenty_integrates_quartic_exactly():
    rule = gauss_hermite(20)
    quartic = float(np.sum(rule.weights * rule.nodes**4))
    npt.assert_allclose(quartic, 3 * SQRT_PI / 4, rtol=1e-10)


@pytest.mark.parametrize("order", range(1, 31))
def test_rule_invariants_hold(order):
    rule = gauss_hermite(order)
    assert rule.order == order
    assert np.all(rule.weights > 0)
    npt.assert_allclose(rule.weights.sum(), SQRT_PI, atol=1e-12)
    npt.assert_allclose(rule.nodes, -rule.nodes[::-1], atol=1e-12)
    second = float(np.sum(rule.weights * rule.nodes**2))
    if order >= 2:
        npt.assert_allclose(second, SQRT_PI / 2, atol=1e-10)


@pytest.mark.parametrize("order", range(1, 31))
def test_polynomials_up_to_degree_2l_minus_1_are_exact(order):
    # Analytic moments of e^{-x^2}: odd vanish, even are (d-1)!! sqrt(pi)/2^{d/2}.
    rule = gauss_hermite(order)
    for degree in range(2 * order):
        got = float(np.sum(rule.weights * rule.nodes**degree))
        if degree % 2 == 1:
            # Zero target: measure cancellation against the absolute-value
            # integral, the scale roundoff actually lives on.
            scale = float(np.sum(rule.weights * np.abs(rule.nodes) ** degree))
            assert abs(got) <= 1e-9 * max(scale, 1.0)
        else:
            # Python ints keep the double factorial exact (int64 overflows
            # at degree 36).
            want = math.prod(range(degree - 1, 0, -2)) * SQRT_PI / 2 ** (degree // 2)
            npt.assert_allclose(got, want, rtol=1e-9)


@pytest.mark.parametrize("order", [1, 2, 5, 20, 64, 100])
def test_rule_matches_reference_generator(order):
    # Independent oracle: numpy's Golub-Welsch-free hermgauss implementation.
    ref_nodes, ref_weights = np.polynomial.hermite.hermgauss(order)
    rule = gauss_hermite(order)
    npt.assert_allclose(rule.nodes, ref_nodes, atol=1e-12)
    npt.assert_allclose(rule.weights, ref_weights, atol=1e-12)


@pytest.mark.parametrize("order", [0, -3, 101, 2.5, "7"])
def test_bad_orders_are_rejected(order):
    with pytest.raises(InvalidArgumentError):
        gauss_hermite(order)


# -- jittered Cholesky --------------------------------------------------


def test_identity_needs_no_jitter():
    factor = cholesky_with_jitter(np.eye(3), 1e-6)
    npt.assert_allclose(factor.lower, np.eye(3), atol=0)
    assert factor.jitter_used == 0.0


def test_two_by_two_hand_factorization():
    factor = cholesky_with_jitter(np.array([[4.0, 2.0], [2.0, 1.0000001]]))
    assert factor.jitter_used == 0.0
    npt.assert_allclose(factor.lower[0], [2.0, 0.0], atol=0)
    npt.assert_allclose(factor.lower[1, 0], 1.0, rtol=1e-12)
    npt.assert_allclose(factor.lower[1, 1], math.sqrt(1e-7), rtol=1e-6)


def test_singular_rank_one_matrix_forces_jitter():
    mat = np.ones((2, 2))
    factor = cholesky_with_jitter(mat, 1e-6)
    assert factor.jitter_used > 0
    rebuilt = factor.lower @ factor.lower.T
    target = mat + factor.jitter_used * np.eye(2)
    assert np.linalg.norm(rebuilt - target) <= 1e-8 * np.linalg.norm(target)
    assert np.all(np.diag(factor.lower) > 0)


@settings(deadline=None, max_examples=40)
@given(st.integers(0, 2**31 - 1), st.integers(1, 12))
def test_random_spd_matrices_need_no_jitter(seed, n):
    rng = np.random.default_rng(seed)
    b = rng.standard_normal((n, n))
    mat = b @ b.T + np.eye(n)
    factor = cholesky_with_jitter(mat, 1e-6)
    assert factor.jitter_used == 0.0
    rebuilt = factor.lower @ factor.lower.T
    assert np.linalg.norm(rebuilt - mat) <= 1e-10 * np.linalg.norm(mat)
    npt.assert_allclose(factor.lower, np.linalg.cholesky(mat), atol=1e-12)


def test_indefinite_matrix_reports_offending_minor():
    mat = np.diag([4.0, 9.0, -1.0])
    with pytest.raises(NumericalError) as exc:
        cholesky_with_jitter(mat, 1e-6)
    assert exc.value.minor_index == 3


def test_asymmetric_and_nonsquare_inputs_are_rejected():
    with pytest.raises(InvalidArgumentError):
        cholesky_with_jitter(np.array([[1.0, 2.0], [0.5, 1.0]]))
    with pytest.raises(InvalidArgumentError):
        cholesky_with_jitter(np.ones((2, 3)))
    with pytest.raises(InvalidArgumentError):
        cholesky_with_jitter(np.eye(2), -1e-9)


# -- log Phi ------------------------------------------------------------


def test_log_phi_at_zero_is_log_half():
    npt.assert_allclose(log_normal_cdf(0.0), math.log(0.5), atol=1e-15)


def test_log_phi_at_1_96_matches_erfc_oracle():
    want = float(mpmath.log(mpmath.ncdf(mpmath.mpf("1.96"))))
    npt.assert_allclose(log_normal_cdf(1.96), want, atol=1e-12)
    npt.assert_allclose(math.exp(log_normal_cdf(1.96)), 0.9750021, atol=1e-7)


def test_deep_tail_matches_extended_precision_oracle():
    mpmath.mp.dps = 60
    for x in [-8.5, -12.0, -30.0, -50.0, -200.0]:
        want = float(mpmath.log(mpmath.ncdf(x)))
        got = log_normal_cdf(x)
        assert math.isfinite(got)
        assert abs(got - want) / abs(want) < 1e-6


def test_body_matches_scipy_log_ndtr_to_1e10_absolute():
    xs = np.linspace(-8.0, 8.0, 4001)
    npt.assert_allclose(log_normal_cdf(xs), log_ndtr(xs), atol=1e-10)


def test_tail_matches_scipy_log_ndtr_to_1e6_relative():
    xs = -np.geomspace(8.001, 1e7, 300)
    got = log_normal_cdf(xs)
    want = log_ndtr(xs)
    npt.assert_allclose(got, want, rtol=1e-6)


def test_never_minus_infinity_for_finite_input():
    for x in [-1e3, -1e8, -1e154, -1e308]:
        val = log_normal_cdf(x)
        assert math.isfinite(val)


def test_monotone_increasing():
    # Strict until the upper tail reaches the erfc underflow point, where
    # float64 has no distinct values left to return.
    xs = np.concatenate([-np.geomspace(1e-3, 40, 500)[::-1], np.geomspace(1e-3, 37, 500)])
    vals = log_normal_cdf(xs)
    assert np.all(np.diff(vals) > 0)
    assert np.all(np.diff(log_normal_cdf(np.array([37.0, 40.0, 80.0]))) >= 0)


def test_phi_and_one_minus_phi_sum_to_one():
    xs = np.linspace(-8, 8, 801)
    total = np.exp(log_normal_cdf(xs)) + np.exp(log_normal_cdf(-xs))
    npt.assert_allclose(total, 1.0, atol=1e-9)


def test_vectorized_shape_and_scalar_return():
    out = log_normal_cdf(np.zeros((2, 3)))
    assert out.shape == (2, 3)
    assert isinstance(log_normal_cdf(0.5), float)
    npt.assert_allclose(normal_cdf(0.0), 0.5, atol=0)


# -- seeded randomness --------------------------------------------------


def test_same_seed_reproduces_identical_draws():
    a = seeded_rng(1234).normal(1000)
    b = seeded_rng(1234).normal(1000)
    npt.assert_array_equal(a, b)


def test_million_draw_mean_is_near_zero():
    draws = seeded_rng(99).normal(10**6)
    assert abs(draws.mean()) < 4 / math.sqrt(10**6)


def test_labeled_substreams_differ_from_each_other():
    root = seeded_rng(7)
    a = root.substream("latent").normal(100)
    b = root.substream("inducing").normal(100)
    assert not np.array_equal(a, b)


def test_substreams_are_stable_against_other_consumers():
    # Drawing from one substream must not shift a sibling's stream.
    root1 = seeded_rng(42)
    root1.substream("a").normal(500)
    after = root1.substream("b").normal(10)
    root2 = seeded_rng(42)
    alone = root2.substream("b").normal(10)
    npt.assert_array_equal(after, alone)


def test_substream_derivation_is_pure():
    root = seeded_rng(5)
    first = root.substream("batch").normal(8)
    second = root.substream("batch").normal(8)
    npt.assert_array_equal(first, second)


def test_negative_and_huge_seeds_are_accepted():
    assert isinstance(seeded_rng(-3), RandomSource)
    assert isinstance(seeded_rng(2**63 + 11), RandomSource)
    a = seeded_rng(-3).normal(4)
    b = seeded_rng(-3).normal(4)
    npt.assert_array_equal(a, b)


def test_integer_and_permutation_helpers_are_deterministic():
    r = seeded_rng(11)
    idx1 = r.substream("batch").integers(0, 50, size=20)
    idx2 = seeded_rng(11).substream("batch").integers(0, 50, size=20)
    npt.assert_array_equal(idx1, idx2)
    perm = seeded_rng(11).substream("perm").permutation(10)
    assert sorted(perm.tolist()) == list(range(10))
