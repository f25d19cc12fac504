"""Expected log-likelihood terms against closed forms and Monte Carlo."""

import numpy as np
import numpy.testing as npt
import pytest

from ldgd import autodiff as ad
from ldgd.errors import InvalidArgumentError
from ldgd.likelihoods import (
    GaussianNoise,
    class_probability,
    ell_classification,
    ell_regression,
    gaussian_ell_nodes,
    probit_ell_nodes,
)
from ldgd.numerics import gauss_hermite, log_normal_cdf, normal_cdf
from ldgd.optim import ParameterVector, check_gradient

RULE = gauss_hermite(20)


# -- continuous path ----------------------------------------------------

def test_perfect_noiseless_fit():
    got = ell_regression(1.3, 1.3, 0.0, 1.0)
    npt.assert_allclose(got, -0.5 * np.log(2 * np.pi), rtol=1e-12)
    npt.assert_allclose(got, -0.9189385, atol=1e-7)


def test_unit_residual_costs_half():
    got = ell_regression(2.0, 1.0, 0.0, 1.0)
    npt.assert_allclose(got, -0.9189385 - 0.5, atol=1e-7)


@pytest.mark.parametrize("seed", range(4))
def test_matches_monte_carlo_expectation(seed):
    rng = np.random.default_rng(seed)
    y, mean = rng.standard_normal(2) * 2
    var, sigma2 = rng.uniform(0.1, 2.0, 2)
    f = mean + np.sqrt(var) * rng.standard_normal(10**6)
    samples = -0.5 * (np.log(2 * np.pi * sigma2) + (y - f) ** 2 / sigma2)
    se = samples.std() / 1000
    assert abs(ell_regression(y, mean, var, sigma2) - samples.mean()) < 3 * se


def test_noise_container_validation():
    GaussianNoise(np.array([0.1, 2.0]))
    with pytest.raises(InvalidArgumentError):
        GaussianNoise(np.array([0.1, 0.0]))
    with pytest.raises(InvalidArgumentError):
        ell_regression(0.0, 0.0, -0.1, 1.0)


# -- binary path --------------------------------------------------------

def test_zero_variance_collapses_to_log_phi():
    got = ell_classification(1, 0.0, 0.0, RULE)
    npt.assert_allclose(got, np.log(0.5), rtol=1e-12)
    npt.assert_allclose(got, -0.6931472, atol=1e-7)


def test_saturated_probit_is_nearly_free():
    assert abs(ell_classification(1, 10.0, 0.01, RULE)) < 1e-6


def test_matches_monte_carlo_log_phi_expectation():
    rng = np.random.default_rng(0)
    f = rng.standard_normal(10**7)
    samples = log_normal_cdf(f)
    se = samples.std() / np.sqrt(10**7)
    got = ell_classification(1, 0.0, 1.0, gauss_hermite(30))
    assert abs(got - samples.mean()) < 3 * se


def test_quadrature_order_converges():
    # Convergence of Gauss-Hermite on log Phi is limited by the complex
    # zeros of Phi, which move toward the real axis (after the node
    # substitution) as the variance grows. Measured against an order-160
    # rule and scipy.special.log_ndtr: the 20-vs-40 gap stays below 5e-8
    # for variance <= 2 but reaches 9.1e-5 by variance 10 (at mean -3),
    # for any correct evaluator of the same sum. Tolerances reflect that.
    r40 = gauss_hermite(40)
    for mean in np.linspace(-5, 5, 9):
        for var in [0.0, 0.3, 2.0]:
            a = ell_classification(1, mean, var, RULE)
            b = ell_classification(1, mean, var, r40)
            assert abs(a - b) < 1e-6
        for var in [5.0, 10.0]:
            a = ell_classification(1, mean, var, RULE)
            b = ell_classification(1, mean, var, r40)
            assert abs(a - b) < 2e-4


def test_label_flip_equals_mean_negation_exactly():
    for mean in [-2.2, -0.4, 0.0, 1.7]:
        for var in [0.05, 1.0, 4.0]:
            a = ell_classification(1, mean, var, RULE)
            b = ell_classification(0, -mean, var, RULE)
            assert a == b


def test_always_nonpositive():
    rng = np.random.default_rng(12)
    for _ in range(50):
        y = int(rng.integers(0, 2))
        got = ell_classification(y, float(rng.normal() * 3), float(rng.uniform(0, 5)), RULE)
        assert got <= 1e-12


def test_rejects_bad_inputs():
    with pytest.raises(InvalidArgumentError):
        ell_classification(2, 0.0, 1.0, RULE)
    with pytest.raises(InvalidArgumentError):
        ell_classification(1, 0.0, -1.0, RULE)


# -- class probability --------------------------------------------------

def test_symmetric_mean_gives_half():
    for var in [0.0, 0.5, 10.0]:
        assert class_probability(0.0, var) == pytest.approx(0.5, abs=1e-15)


def test_plug_in_value_with_unit_variance():
    got = class_probability(1.96 * np.sqrt(2.0), 1.0)
    npt.assert_allclose(got, normal_cdf(1.96), rtol=1e-12)
    npt.assert_allclose(got, 0.975, atol=2e-5)


def test_matches_quadrature_of_the_same_integral():
    rng = np.random.default_rng(77)
    rule = gauss_hermite(60)
    for _ in range(20):
        mean = float(rng.normal() * 2)
        var = float(rng.uniform(0.01, 6.0))
        nodes = np.sqrt(2 * var) * rule.nodes + mean
        want = float(np.sum(rule.weights * normal_cdf(nodes))) / np.sqrt(np.pi)
        assert class_probability(mean, var) == pytest.approx(want, abs=1e-8)


def test_monotone_in_mean_and_shrinks_toward_half():
    means = np.linspace(-4, 4, 33)
    probs = class_probability(means, 1.3)
    assert np.all(np.diff(probs) > 0)
    tight = class_probability(1.5, 0.1)
    loose = class_probability(1.5, 8.0)
    assert 0.5 < loose < tight


def test_vectorized_shapes():
    out = class_probability(np.zeros((3, 2)), np.ones((3, 2)))
    assert out.shape == (3, 2)
    with pytest.raises(InvalidArgumentError):
        class_probability(0.0, -0.5)


# -- gradients ----------------------------------------------------------

def test_gaussian_ell_gradients_match_differences():
    rng = np.random.default_rng(1)
    y = rng.standard_normal((2, 5))
    pv = ParameterVector()
    pv.add("mean", rng.standard_normal((2, 5)))
    pv.add("var", rng.uniform(0.2, 1.5, (2, 5)), transform="log")
    pv.add("sigma2", rng.uniform(0.3, 1.0, (2, 1)), transform="log")

    def objective(lv):
        ell = gaussian_ell_nodes(y, lv["mean"], lv["var"], lv["sigma2"], lv.raw("sigma2"))
        return ad.sum_(ell)

    report = check_gradient(objective, pv)
    assert report.passed, report.per_block


def test_probit_ell_gradients_match_differences():
    rng = np.random.default_rng(2)
    sign = np.where(rng.integers(0, 2, (3, 4)) == 1, 1.0, -1.0)
    pv = ParameterVector()
    pv.add("mean", rng.standard_normal((3, 4)))
    pv.add("var", rng.uniform(0.2, 2.0, (3, 4)), transform="log")

    def objective(lv):
        return ad.sum_(probit_ell_nodes(sign, lv["mean"], lv["var"], RULE))

    report = check_gradient(objective, pv)
    assert report.passed, report.per_block
