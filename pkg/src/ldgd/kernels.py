"""Squared-exponential kernel with per-dimension relevance weights.

    k(x, x') = variance * exp(-0.5 * sum_q alpha_q (x_q - x'_q)^2)

The alpha_q are inverse squared length-scales: a dimension with alpha
near zero contributes nothing to any distance, so the kernel (and the
paths built on it) simply stops seeing it. Reporting which dimensions
survive is what `ard_report` is for.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import InvalidArgumentError


def gram_nodes(variance, alpha, a, b):
    """Tape-ready Gram matrix between row sets `a` (P,Q) and `b` (R,Q).

    Distances use the expansion |u|^2 + |v|^2 - 2 u.v, clamped at zero
    because round-off can push tiny self-distances negative.
    """
    a, b = ad.as_var(a), ad.as_var(b)
    variance, alpha = ad.as_var(variance), ad.as_var(alpha)
    if a.shape[-1] != b.shape[-1]:
        raise InvalidArgumentError(
            f"column mismatch: {a.shape[-1]} vs {b.shape[-1]} latent dimensions"
        )
    if alpha.shape != (a.shape[-1],):
        raise InvalidArgumentError(
            f"alpha has {alpha.shape} entries for {a.shape[-1]}-column inputs"
        )
    root = ad.reshape(ad.sqrt(alpha), (1, alpha.shape[0]))
    sa = ad.mul(a, root)
    sb = ad.mul(b, root)
    na = ad.sum_(ad.square(sa), axis=1, keepdims=True)
    nb = ad.sum_(ad.square(sb), axis=1, keepdims=True)
    d2 = ad.add(ad.add(na, ad.transpose_last(nb)), ad.mul(ad.matmul(sa, ad.transpose_last(sb)), -2.0))
    d2 = ad.maximum(d2, 0.0)
    return ad.mul(variance, ad.exp(ad.mul(d2, -0.5)))


@dataclass(frozen=True)
class ArdKernel:
    """Numeric kernel value: a positive variance and positive alphas."""

    variance: float
    inv_lengthscales: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.inv_lengthscales, dtype=float)
        object.__setattr__(self, "inv_lengthscales", alpha)
        if not self.variance > 0:
            raise InvalidArgumentError(f"kernel variance must be positive, got {self.variance}")
        if alpha.ndim != 1 or alpha.size == 0 or not np.all(alpha > 0):
            raise InvalidArgumentError("inverse length-scales must be a positive vector")

    @property
    def q(self) -> int:
        return self.inv_lengthscales.size

    def gram(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return gram_nodes(self.variance, self.inv_lengthscales, a, b).value


def gram(kernel: ArdKernel, a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return kernel.gram(a, b)


@dataclass(frozen=True)
class ArdReport:
    """Relevance ranking: selected dimensions, most relevant first."""

    dims: np.ndarray
    alphas: np.ndarray
    threshold: float


def ard_report(kernel: ArdKernel, threshold_ratio: float = 0.2) -> ArdReport:
    """Dimensions whose alpha reaches threshold_ratio of the largest one."""
    if not 0 < threshold_ratio <= 1:
        raise InvalidArgumentError(f"threshold_ratio must be in (0, 1], got {threshold_ratio}")
    alpha = kernel.inv_lengthscales
    cutoff = threshold_ratio * float(alpha.max())
    keep = np.flatnonzero(alpha >= cutoff)
    order = keep[np.argsort(-alpha[keep], kind="stable")]
    return ArdReport(dims=order, alphas=alpha[order], threshold=cutoff)
