"""Expected log-likelihoods under Gaussian predictive moments.

Continuous columns have the Gaussian expectation in closed form; binary
columns push a probit likelihood through Gauss-Hermite quadrature. Both
are written once as tape-ready node builders and wrapped thinly for
numeric callers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import InvalidArgumentError
from .numerics import QuadratureRule, normal_cdf

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GaussianNoise:
    """Per-dimension observation noise variances for the continuous path."""

    variances: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.variances, dtype=float)
        object.__setattr__(self, "variances", v)
        if v.ndim != 1 or not np.all(v > 0):
            raise InvalidArgumentError("noise variances must be a positive vector")


def gaussian_ell_nodes(y, mean, var, sigma2, log_sigma2):
    """E_{f ~ N(mean, var)} [ log N(y | f, sigma2) ], elementwise.

        -0.5 [ log 2 pi + log sigma2 + ((y - mean)^2 + var) / sigma2 ]

    `log_sigma2` is passed alongside sigma2 so a log-parameterized
    caller keeps the logarithm exact instead of routing through
    log(exp(.)).
    """
    resid = ad.sub(y, mean)
    quad = ad.div(ad.add(ad.square(resid), var), sigma2)
    return ad.mul(ad.add(ad.add(quad, log_sigma2), LOG_2PI), -0.5)


def probit_ell_nodes(y_sign, mean, var, rule: QuadratureRule):
    """E_{f ~ N(mean, var)} [ log Phi(y_sign * f) ] by Gauss-Hermite.

    Substituting f = sqrt(2 var) z + mean turns the expectation into
    (1/sqrt pi) sum_l w_l log Phi(y_sign (sqrt(2 var) z_l + mean)).
    y_sign is +-1; shapes broadcast elementwise, the quadrature axis is
    prepended.
    """
    extra = (1,) * np.ndim(ad.as_var(mean).value)
    nodes = rule.nodes.reshape((rule.order,) + extra)
    weights = rule.weights.reshape((rule.order,) + extra)
    spread = ad.sqrt(ad.mul(var, 2.0))
    f_vals = ad.add(ad.mul(nodes, spread), mean)
    logs = ad.log_normal_cdf(ad.mul(f_vals, y_sign))
    terms = ad.mul(logs, weights)
    # Fold mirrored nodes pairwise before reducing. Flipping the label and
    # negating the mean maps each term to its mirror bitwise (antisymmetric
    # nodes, symmetric weights), and addition commutes, so the folded sum is
    # bit-identical under that transformation; a flat sum would reorder it.
    half = rule.order // 2
    if half:
        front = terms[0:half]
        back = terms[rule.order - 1 : rule.order - 1 - half : -1]
        total = ad.sum_(ad.add(front, back), axis=0)
        if rule.order % 2:
            total = ad.add(total, ad.sum_(terms[half : half + 1], axis=0))
    else:
        total = ad.sum_(terms, axis=0)
    return ad.mul(total, 1.0 / np.sqrt(np.pi))


def ell_regression(y: float, mean: float, var: float, sigma2: float) -> float:
    """Closed-form Gaussian expected log-likelihood for one entry."""
    if var < 0:
        raise InvalidArgumentError(f"predictive variance must be >= 0, got {var}")
    node = gaussian_ell_nodes(
        float(y), float(mean), float(var), float(sigma2), float(np.log(sigma2))
    )
    return float(node.value)


def ell_classification(y: int, mean: float, var: float, rule: QuadratureRule) -> float:
    """Quadrature probit expected log-likelihood for one binary entry."""
    if var < 0:
        raise InvalidArgumentError(f"predictive variance must be >= 0, got {var}")
    if y not in (0, 1):
        raise InvalidArgumentError(f"binary target must be 0 or 1, got {y}")
    node = probit_ell_nodes(float(2 * y - 1), float(mean), float(var), rule)
    return float(node.value)


def class_probability(mean, var):
    """P(y = 1) = integral Phi(f) N(f | mean, var) df = Phi(mean / sqrt(1 + var)).

    Shrinks toward 1/2 as predictive variance grows; used at decode time
    where gradients are never needed.
    """
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    if np.any(var < 0):
        raise InvalidArgumentError("predictive variance must be >= 0")
    return normal_cdf(mean / np.sqrt(1.0 + var))
