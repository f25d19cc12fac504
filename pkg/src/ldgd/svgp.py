"""One sparse variational GP path.

M pseudo-inputs Z summarize the function; each output column carries a
Gaussian posterior over the function values at Z, stored in whitened
form: with L the Cholesky factor of K_MM, the column posterior is
N(L m_hat, L W_hat W_hat^T L^T). Whitening keeps the optimized
parameters well-conditioned and makes the prior exactly
(m_hat, W_hat) = (0, I).

Predictive moments at a batch X_b, with A = L^{-1} K_MB:

    mean = A^T m_hat
    cov  = K_BB + A^T (W_hat W_hat^T - I) A

Training needs only the diagonal of the covariance, which costs two
column-sums of squares instead of a B x B product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import InvalidArgumentError
from .kernels import gram_nodes

VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class InducingSet:
    """Trainable pseudo-input locations, one row per inducing point."""

    Z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.Z, dtype=float)
        object.__setattr__(self, "Z", z)
        if z.ndim != 2 or z.shape[0] < 1:
            raise InvalidArgumentError(f"inducing inputs must be M x Q with M >= 1, got {z.shape}")
        if not np.all(np.isfinite(z)):
            raise InvalidArgumentError("inducing inputs must be finite")

    @property
    def m(self) -> int:
        return self.Z.shape[0]


@dataclass(frozen=True)
class WhitenedColumnPosterior:
    """Whitened Gaussian over one column's inducing values."""

    m_hat: np.ndarray
    w_hat: np.ndarray

    def __post_init__(self):
        m_hat = np.asarray(self.m_hat, dtype=float)
        w_hat = np.asarray(self.w_hat, dtype=float)
        object.__setattr__(self, "m_hat", m_hat)
        object.__setattr__(self, "w_hat", w_hat)
        m = m_hat.shape[0]
        if m_hat.ndim != 1 or w_hat.shape != (m, m):
            raise InvalidArgumentError(
                f"mean {m_hat.shape} and scale {w_hat.shape} must be (M,) and (M, M)"
            )
        if np.any(np.triu(w_hat, 1) != 0):
            raise InvalidArgumentError("whitened scale must be lower-triangular")
        if np.any(np.diag(w_hat) <= 0):
            raise InvalidArgumentError("whitened scale needs a positive diagonal")


@dataclass(frozen=True)
class PredictiveGaussian:
    """Per-point predictive moments; full covariance only on request."""

    mean: np.ndarray
    variance: np.ndarray
    cov: np.ndarray | None = None


def predictive_nodes(variance, alpha, z, m_hat, w_hat, x, *, full_cov=False):
    """Tape-ready predictive moments for stacked columns.

    m_hat: (C, M); w_hat: (C, M, M) lower-triangular with positive
    diagonal; x: (B, Q). Returns (mean (C, B), var (C, B)) or, with
    full_cov, (mean, cov (C, B, B)).
    """
    z = ad.as_var(z)
    x = ad.as_var(x)
    m_hat, w_hat = ad.as_var(m_hat), ad.as_var(w_hat)
    k_mm = gram_nodes(variance, alpha, z, z)
    chol = ad.cholesky(k_mm)
    k_mb = gram_nodes(variance, alpha, z, x)
    a = ad.triangular_solve(chol, k_mb)
    mean = ad.matmul(m_hat, a)
    wa = ad.matmul(ad.transpose_last(w_hat), a)
    if not full_cov:
        # diag K_BB is just the kernel variance; stationary kernel.
        nystrom = ad.sum_(ad.square(a), axis=0)
        extra = ad.sum_(ad.square(wa), axis=-2)
        var = ad.maximum(ad.add(ad.sub(variance, nystrom), extra), VARIANCE_FLOOR)
        return mean, var
    k_bb = gram_nodes(variance, alpha, x, x)
    cov = ad.add(
        ad.sub(k_bb, ad.matmul(ad.transpose_last(a), a)),
        ad.matmul(ad.transpose_last(wa), wa),
    )
    return mean, cov


def kl_whitened_nodes(m_hat, w_hat, log_diag_total, columns: int, m: int):
    """Tape-ready KL(q(U) || p(U)) summed over stacked whitened columns.

    Per column: 0.5 (|m_hat|^2 + |W_hat|_F^2 - M - 2 sum log diag W_hat).
    `log_diag_total` is the summed log-diagonal across columns, supplied
    separately because the caller usually has it exactly (the storage of
    a log-parameterized diagonal) rather than through log(exp(.)).
    """
    m_hat, w_hat = ad.as_var(m_hat), ad.as_var(w_hat)
    total = ad.add(ad.sum_(ad.square(m_hat)), ad.sum_(ad.square(w_hat)))
    total = ad.sub(total, float(columns * m))
    total = ad.sub(total, ad.mul(log_diag_total, 2.0))
    return ad.mul(total, 0.5)


def _stack(columns):
    if not columns:
        raise InvalidArgumentError("need at least one column posterior")
    m_hat = np.stack([c.m_hat for c in columns])
    w_hat = np.stack([c.w_hat for c in columns])
    return m_hat, w_hat


def predictive(column: WhitenedColumnPosterior, z: InducingSet, kernel, x_b, *, full_cov=False) -> PredictiveGaussian:
    """Numeric single-column predictive distribution at a latent batch."""
    x_b = np.asarray(x_b, dtype=float)
    if x_b.ndim != 2 or x_b.shape[1] != z.Z.shape[1]:
        raise InvalidArgumentError(
            f"latent batch {x_b.shape} does not match inducing inputs {z.Z.shape}"
        )
    if column.m_hat.shape[0] != z.m:
        raise InvalidArgumentError("column posterior size does not match inducing count")
    mean, second = predictive_nodes(
        kernel.variance,
        kernel.inv_lengthscales,
        z.Z,
        column.m_hat[None, :],
        column.w_hat[None, :, :],
        x_b,
        full_cov=full_cov,
    )
    if full_cov:
        cov = second.value[0]
        var = np.maximum(np.diag(cov), VARIANCE_FLOOR)
        return PredictiveGaussian(mean=mean.value[0], variance=var, cov=cov)
    return PredictiveGaussian(mean=mean.value[0], variance=second.value[0])


def kl_inducing(columns) -> float:
    """Numeric KL against the whitened prior, summed over columns."""
    m_hat, w_hat = _stack(list(columns))
    c, m = m_hat.shape
    log_diag = float(np.sum(np.log(np.diagonal(w_hat, axis1=-2, axis2=-1))))
    node = kl_whitened_nodes(m_hat, w_hat, log_diag, c, m)
    return float(node.value)
