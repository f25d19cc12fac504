"""Probabilistic PCA fitted in closed form.

Serves three jobs: initializing the latent means of the main model,
giving a linear baseline to compare reconstructions against, and acting
as an independently checkable oracle (the eigendecomposition solution is
exact, so tests can lean on it).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NumericalError


@dataclass(frozen=True)
class PpcaModel:
    """Linear-Gaussian factor model y = W x + mean + noise.

    loadings: (D, Q); noise_variance: scalar > 0; mean: (D,).
    Columns of the loading matrix carry non-increasing norms and each
    column's largest-magnitude entry is positive, so fits are unique and
    reproducible across runs.
    """

    loadings: np.ndarray
    noise_variance: float
    mean: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.loadings, dtype=float)
        mean = np.asarray(self.mean, dtype=float)
        object.__setattr__(self, "loadings", w)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        if w.ndim != 2:
            raise InvalidArgumentError("loadings must be a (D, Q) matrix")
        if mean.shape != (w.shape[0],):
            raise InvalidArgumentError(
                f"mean shape {mean.shape} does not match loadings {w.shape}"
            )
        if not self.noise_variance > 0:
            raise InvalidArgumentError("noise variance must be strictly positive")
        norms = np.linalg.norm(w, axis=0)
        slack = 1e-9 * (1.0 + norms.max(initial=0.0))
        if np.any(np.diff(norms) > slack):
            raise InvalidArgumentError("loading columns must have non-increasing norms")

    @property
    def d(self) -> int:
        return self.loadings.shape[0]

    @property
    def q(self) -> int:
        return self.loadings.shape[1]


def fit_ppca(y, q: int) -> PpcaModel:
    """Maximum-likelihood fit via eigendecomposition of the sample covariance.

    Keeps the top `q` eigenpairs; the noise variance is the mean of the
    discarded eigenvalues and each kept column is scaled by
    sqrt(eigenvalue - noise).
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 2:
        raise InvalidArgumentError("data must be a (N, D) matrix")
    if not np.all(np.isfinite(y)):
        raise InvalidArgumentError("data must be finite")
    n, d = y.shape
    if not 1 <= q < d:
        raise InvalidArgumentError(f"need 1 <= q < D, got q={q}, D={d}")
    if n <= q:
        raise InvalidArgumentError(f"need more rows than latent dimensions, got N={n}, q={q}")

    mean = y.mean(axis=0)
    centered = y - mean
    cov = centered.T @ centered / n
    evals, evecs = np.linalg.eigh(cov)
    evals, evecs = evals[::-1], evecs[:, ::-1]

    tol = max(float(evals[0]), 0.0) * d * np.finfo(float).eps
    positive = int(np.sum(evals > tol))
    if positive < q:
        raise NumericalError(
            f"covariance has only {positive} positive eigenvalues, need {q}"
        )

    # Mean of discarded eigenvalues can round to <= 0 on noiseless data;
    # keep it positive but far below anything the tests treat as noise.
    sigma2 = float(np.mean(evals[q:]))
    sigma2 = max(sigma2, float(evals[0]) * 1e-14, np.finfo(float).tiny)

    scales = np.sqrt(np.clip(evals[:q] - sigma2, 0.0, None))
    w = evecs[:, :q] * scales
    anchor = np.argmax(np.abs(w), axis=0)
    signs = np.sign(w[anchor, np.arange(q)])
    signs[signs == 0] = 1.0
    return PpcaModel(loadings=w * signs, noise_variance=sigma2, mean=mean)


def ppca_project(model: PpcaModel, y) -> np.ndarray:
    """Posterior-mean latents (WtW + sigma2 I)^-1 Wt (y - mean), rows in, rows out."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape[1] != model.d:
        raise InvalidArgumentError(
            f"data shape {y.shape} does not match model dimension {model.d}"
        )
    w = model.loadings
    gram = w.T @ w + model.noise_variance * np.eye(model.q)
    return np.linalg.solve(gram, w.T @ (y - model.mean).T).T


def ppca_reconstruct(model: PpcaModel, latents) -> np.ndarray:
    """Map latents back through the loadings: x Wt + mean."""
    latents = np.asarray(latents, dtype=float)
    if latents.ndim != 2 or latents.shape[1] != model.q:
        raise InvalidArgumentError(
            f"latent shape {latents.shape} does not match model width {model.q}"
        )
    return latents @ model.loadings.T + model.mean


def marginal_log_likelihood(loadings, noise_variance: float, mean, y) -> float:
    """Row-wise marginal: sum_i log N(y_i | mean, W Wt + sigma2 I).

    Takes raw arrays, not a fitted model, so perturbation probes can
    evaluate candidates that violate the canonical-form invariants.
    """
    w = np.asarray(loadings, dtype=float)
    y = np.asarray(y, dtype=float)
    d = w.shape[0]
    cov = w @ w.T + float(noise_variance) * np.eye(d)
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise NumericalError("marginal covariance is not positive definite")
    centered = y - np.asarray(mean, dtype=float)
    quad = float(np.sum(centered.T * np.linalg.solve(cov, centered.T)))
    n = y.shape[0]
    return -0.5 * (n * (d * np.log(2.0 * np.pi) + logdet) + quad)


def ppca_log_likelihood(model: PpcaModel, y) -> float:
    """Marginal log-likelihood of the data under a fitted model."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape[1] != model.d:
        raise InvalidArgumentError(
            f"data shape {y.shape} does not match model dimension {model.d}"
        )
    return marginal_log_likelihood(model.loadings, model.noise_variance, model.mean, y)


def column_marginal_log_likelihood(latents, noise_variance: float, y) -> float:
    """Column-wise marginal: sum_d log N(y_:,d | 0, X Xt + sigma2 I).

    The mirror-image factorization of the same linear model, with the
    roles of latents and loadings swapped; deliberately built on the
    N x N Gram side so it shares no covariance code with the row-wise
    evaluator above.
    """
    x = np.asarray(latents, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.shape[0] != x.shape[0]:
        raise InvalidArgumentError(
            f"row counts differ: latents {x.shape[0]}, data {y.shape[0]}"
        )
    n = x.shape[0]
    gram = x @ x.T + float(noise_variance) * np.eye(n)
    chol = np.linalg.cholesky(gram)
    logdet = 2.0 * float(np.sum(np.log(np.diagonal(chol))))
    half = np.linalg.solve(chol, y)
    quad = float(np.sum(half * half))
    d = y.shape[1]
    return -0.5 * (d * (n * np.log(2.0 * np.pi) + logdet) + quad)
