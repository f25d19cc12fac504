"""Sparse-path predictive distribution and inducing KL.

Oracles coded here from scratch: the unwhitened predictive built with
dense solves, a generic multivariate Gaussian KL, and the exact GP
regression posterior for the M = N collapse.
"""

import numpy as np
import numpy.testing as npt
import pytest

from ldgd import autodiff as ad
from ldgd.errors import InvalidArgumentError
from ldgd.kernels import ArdKernel, gram
from ldgd.optim import ParameterVector, check_gradient
from ldgd.svgp import (
    InducingSet,
    WhitenedColumnPosterior,
    kl_inducing,
    kl_whitened_nodes,
    predictive,
    predictive_nodes,
)

RNG = np.random.default_rng(20260501)


def random_lower(m, rng, scale=0.4):
    w = np.tril(rng.standard_normal((m, m)) * scale, -1)
    w[np.diag_indices(m)] = np.exp(rng.standard_normal(m) * 0.3)
    return w


def make_setup(m=4, b=5, q=2, rng=RNG):
    kernel = ArdKernel(variance=1.4, inv_lengthscales=np.array([0.9, 1.6])[:q])
    z = InducingSet(rng.standard_normal((m, q)) * 1.5)
    x = rng.standard_normal((b, q)) * 1.5
    return kernel, z, x


# -- predictive ---------------------------------------------------------


def test_prior_parameters_recover_the_prior_process():
    kernel, z, x = make_setup()
    col = WhitenedColumnPosterior(np.zeros(4), np.eye(4))
    out = predictive(col, z, kernel, x, full_cov=True)
    npt.assert_allclose(out.mean, 0.0, atol=1e-12)
    npt.assert_allclose(out.cov, gram(kernel, x, x), atol=1e-8)


def test_single_inducing_point_hand_algebra():
    # One inducing point at the query itself: A = L^{-1} k(x,x) = sqrt(k),
    # so the mean is c * sqrt(k(x,x)).
    kernel = ArdKernel(variance=2.3, inv_lengthscales=np.array([1.0]))
    x0 = np.array([[0.4]])
    col = WhitenedColumnPosterior(np.array([0.7]), np.eye(1))
    out = predictive(col, InducingSet(x0), kernel, x0)
    npt.assert_allclose(out.mean, [0.7 * np.sqrt(2.3)], rtol=1e-12)


def test_whitened_matches_unwhitened_oracle():
    # Oracle: q(u) = N(L m_hat, L W W^T L^T), predictive via dense solves
    #   mean = K_BM K_MM^{-1} m
    #   cov  = K_BB + K_BM K_MM^{-1} (S - K_MM) K_MM^{-1} K_MB
    kernel, z, x = make_setup(m=5, b=6)
    rng = np.random.default_rng(99)
    m_hat = rng.standard_normal(5)
    w_hat = random_lower(5, rng)
    col = WhitenedColumnPosterior(m_hat, w_hat)
    out = predictive(col, z, kernel, x, full_cov=True)

    k_mm = gram(kernel, z.Z, z.Z)
    k_bm = gram(kernel, x, z.Z)
    k_bb = gram(kernel, x, x)
    L = np.linalg.cholesky(k_mm)
    m_u = L @ m_hat
    s_u = L @ w_hat @ w_hat.T @ L.T
    alpha = np.linalg.solve(k_mm, m_u)
    mean_want = k_bm @ alpha
    inner = np.linalg.solve(k_mm, (s_u - k_mm) @ np.linalg.solve(k_mm, k_bm.T))
    cov_want = k_bb + k_bm @ inner

    npt.assert_allclose(out.mean, mean_want, atol=1e-8)
    npt.assert_allclose(out.cov, cov_want, atol=1e-8)
    diag_out = predictive(col, z, kernel, x)
    npt.assert_allclose(diag_out.variance, np.diag(cov_want), atol=1e-8)
    npt.assert_allclose(out.cov, out.cov.T, atol=1e-10)


def test_collapses_to_exact_gp_posterior_when_inducing_at_data():
    # Exact-regression oracle on N = 12 with the variational Gaussian set
    # to the analytic posterior over function values at the inputs.
    rng = np.random.default_rng(3)
    n, q, noise = 12, 2, 0.05
    x_train = rng.standard_normal((n, q)) * 1.6
    kernel = ArdKernel(variance=1.2, inv_lengthscales=np.array([0.8, 1.1]))
    k_nn = gram(kernel, x_train, x_train)
    y = np.linalg.cholesky(k_nn + 1e-10 * np.eye(n)) @ rng.standard_normal(n)

    ky = k_nn + noise * np.eye(n)
    x_test = rng.standard_normal((7, q)) * 1.6
    k_sn = gram(kernel, x_test, x_train)
    mean_want = k_sn @ np.linalg.solve(ky, y)
    cov_want = gram(kernel, x_test, x_test) - k_sn @ np.linalg.solve(ky, k_sn.T)

    # Optimal q(u) at Z = X: m = K (K + noise I)^{-1} y, S = K - K (K+noise I)^{-1} K.
    m_u = k_nn @ np.linalg.solve(ky, y)
    s_u = k_nn - k_nn @ np.linalg.solve(ky, k_nn)
    L = np.linalg.cholesky(k_nn)
    m_hat = np.linalg.solve(L, m_u)
    inner = np.linalg.solve(L, np.linalg.solve(L, s_u).T).T
    w_hat = np.linalg.cholesky(inner + 1e-12 * np.eye(n))
    col = WhitenedColumnPosterior(m_hat, w_hat)

    out = predictive(col, InducingSet(x_train), kernel, x_test, full_cov=True)
    npt.assert_allclose(out.mean, mean_want, atol=1e-6)
    npt.assert_allclose(out.cov, cov_want, atol=1e-6)


def test_shrunk_scale_leaves_nonnegative_nystrom_deficit():
    kernel, z, x = make_setup(m=6, b=40)
    mean, var = predictive_nodes(
        kernel.variance,
        kernel.inv_lengthscales,
        z.Z,
        np.zeros((1, 6)),
        np.zeros((1, 6, 6)),
        x,
    )
    # K_BB - A^T A is a Nystrom remainder: PSD, so its diagonal stays
    # above the clamp floor minus jitter wiggle.
    assert np.all(var.value >= 0)
    assert np.all(var.value <= kernel.variance + 1e-10)


def test_variance_stays_at_or_below_prior_plus_scale_term():
    kernel, z, x = make_setup(m=5, b=30)
    rng = np.random.default_rng(11)
    w_hat = random_lower(5, rng)
    col = WhitenedColumnPosterior(rng.standard_normal(5), w_hat)
    out = predictive(col, z, kernel, x)
    k_mm = gram(kernel, z.Z, z.Z)
    L = np.linalg.cholesky(k_mm)
    a = np.linalg.solve(L, gram(kernel, z.Z, x))
    bound = kernel.variance + np.sum((w_hat.T @ a) ** 2, axis=0)
    assert np.all(out.variance <= bound + 1e-10)


def test_shape_validation():
    kernel, z, x = make_setup()
    col = WhitenedColumnPosterior(np.zeros(4), np.eye(4))
    with pytest.raises(InvalidArgumentError):
        predictive(col, z, kernel, x[:, :1])
    with pytest.raises(InvalidArgumentError):
        predictive(WhitenedColumnPosterior(np.zeros(3), np.eye(3)), z, kernel, x)
    with pytest.raises(InvalidArgumentError):
        WhitenedColumnPosterior(np.zeros(3), np.triu(np.ones((3, 3))))
    with pytest.raises(InvalidArgumentError):
        WhitenedColumnPosterior(np.zeros(2), np.diag([1.0, -2.0]))
    with pytest.raises(InvalidArgumentError):
        InducingSet(np.array([[np.inf, 0.0]]))


# -- KL -----------------------------------------------------------------


def test_prior_posteriors_have_zero_kl():
    cols = [WhitenedColumnPosterior(np.zeros(4), np.eye(4)) for _ in range(3)]
    assert kl_inducing(cols) == pytest.approx(0.0, abs=1e-14)


def test_one_dimensional_hand_value():
    col = WhitenedColumnPosterior(np.array([1.0]), np.eye(1))
    assert kl_inducing([col]) == pytest.approx(0.5, abs=1e-14)


def test_kl_matches_generic_gaussian_oracle():
    # KL(N(m, S) || N(0, K)) via the textbook dense formula.
    rng = np.random.default_rng(42)
    kernel, z, _ = make_setup(m=5, b=2)
    k_mm = gram(kernel, z.Z, z.Z)
    L = np.linalg.cholesky(k_mm)
    total_want = 0.0
    cols = []
    for _ in range(3):
        m_hat = rng.standard_normal(5)
        w_hat = random_lower(5, rng)
        cols.append(WhitenedColumnPosterior(m_hat, w_hat))
        m_u = L @ m_hat
        s_u = L @ w_hat @ w_hat.T @ L.T
        trace = np.trace(np.linalg.solve(k_mm, s_u))
        quad = m_u @ np.linalg.solve(k_mm, m_u)
        logdets = np.linalg.slogdet(k_mm)[1] - np.linalg.slogdet(s_u)[1]
        total_want += 0.5 * (trace + quad - 5 + logdets)
    assert kl_inducing(cols) == pytest.approx(total_want, abs=1e-8)
    assert kl_inducing(cols) >= 0


def test_kl_is_nonnegative_across_random_posteriors():
    rng = np.random.default_rng(8)
    for _ in range(25):
        m = int(rng.integers(1, 7))
        cols = [WhitenedColumnPosterior(rng.standard_normal(m), random_lower(m, rng))]
        assert kl_inducing(cols) >= -1e-12


# -- gradients ----------------------------------------------------------


def test_predictive_and_kl_gradients_match_differences():
    rng = np.random.default_rng(5)
    m, b, q, c = 3, 4, 2, 2
    x = rng.standard_normal((b, q))
    y = rng.standard_normal((c, b))
    strict = np.tril(np.ones((m, m)), -1)
    eye = np.eye(m)

    pv = ParameterVector()
    pv.add("var", np.array(1.2), transform="log")
    pv.add("alpha", np.array([0.7, 1.9]), transform="log")
    pv.add("z", rng.standard_normal((m, q)))
    pv.add("m_hat", rng.standard_normal((c, m)) * 0.5)
    pv.add("w_raw", rng.standard_normal((c, m, m)) * 0.3)

    def objective(lv):
        w_raw = lv["w_raw"]
        w = ad.add(ad.mul(w_raw, strict), ad.mul(ad.exp(w_raw), eye))
        mean, var = predictive_nodes(lv["var"], lv["alpha"], lv["z"], lv["m_hat"], w, x)
        fit = ad.sum_(ad.square(ad.sub(mean, y))) + ad.sum_(ad.log(var))
        log_diag = ad.sum_(ad.mul(w_raw, eye))
        kl = kl_whitened_nodes(lv["m_hat"], w, log_diag, c, m)
        return ad.add(fit, kl)

    report = check_gradient(objective, pv)
    assert report.passed, report.per_block
