"""Foundational numerical routines.

Gauss-Hermite rules for integrals of the form

    integral e^{-z^2} g(z) dz  ~=  sum_l w_l g(z_l),

a Cholesky factorization that escalates diagonal jitter instead of dying
on near-singular kernel matrices, a log Phi that stays finite deep into
the lower tail, and a seedable random source with labeled substreams so
independent consumers never perturb each other's draws.

Everything here runs in float64; kernel-matrix factorizations are too
fragile in single precision.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.linalg.lapack import dpotrf
from scipy.special import erfc

from .errors import InvalidArgumentError, NumericalError

SQRT_PI = np.sqrt(np.pi)
SQRT_2 = np.sqrt(2.0)

# Escalation schedule for cholesky_with_jitter, both relative to mean(diag).
DEFAULT_JITTER_SCALE = 1e-6
MAX_JITTER_SCALE = 1e-2

# Below this point log(0.5 * erfc(-x / sqrt 2)) loses all precision to
# cancellation and the asymptotic tail expansion takes over.
_TAIL_SWITCH = -8.0


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights of a physicists' Gauss-Hermite rule.

    nodes: roots of the degree-`order` Hermite polynomial, ascending.
    weights: positive, summing to sqrt(pi).
    """

    nodes: np.ndarray
    weights: np.ndarray
    order: int


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor plus the diagonal jitter that made it work."""

    lower: np.ndarray
    jitter_used: float


def gauss_hermite(order: int) -> QuadratureRule:
    """Build a Gauss-Hermite rule by the Golub-Welsch eigenvalue method.

    The three-term Hermite recurrence yields a symmetric tridiagonal
    Jacobi matrix with zero diagonal and off-diagonal entries
    sqrt(i / 2), i = 1..order-1. Its eigenvalues are the nodes; each
    weight is sqrt(pi) times the squared first component of the
    corresponding normalized eigenvector. Stable to order 100, unlike
    Newton polishing of the polynomial roots.
    """
    if not isinstance(order, (int, np.integer)) or isinstance(order, bool):
        raise InvalidArgumentError(f"quadrature order must be an integer, got {order!r}")
    if not 1 <= order <= 100:
        raise InvalidArgumentError(f"quadrature order must be in [1, 100], got {order}")
    if order == 1:
        return QuadratureRule(nodes=np.zeros(1), weights=np.array([SQRT_PI]), order=1)

    diag = np.zeros(order)
    offdiag = np.sqrt(np.arange(1, order) / 2.0)
    nodes, vecs = eigh_tridiagonal(diag, offdiag)
    weights = SQRT_PI * vecs[0, :] ** 2

    # Eigenvalues of a symmetric tridiagonal come back sorted; enforce the
    # exact +/- symmetry of the rule against rounding drift.
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    return QuadratureRule(nodes=nodes, weights=weights, order=order)


def cholesky_with_jitter(mat: np.ndarray, base_jitter: float | None = None) -> CholeskyFactor:
    """Factor a symmetric matrix, escalating diagonal jitter on failure.

    Attempts jitter 0 first, then base_jitter (default
    1e-6 * mean(diag)), then powers of 10 up to 1e-2 * mean(diag).
    Records the jitter that succeeded so exactness-sensitive callers can
    verify nothing was added.
    """
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise InvalidArgumentError(f"expected a square matrix, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        # Overflowed parameters land here during training; dpotrf's
        # behavior on non-finite input is undefined, so fail loudly.
        raise NumericalError("matrix to factor contains non-finite entries")
    scale = np.max(np.abs(mat))
    if scale > 0 and np.max(np.abs(mat - mat.T)) > 1e-10 * scale:
        raise InvalidArgumentError("matrix is not symmetric within 1e-10 relative tolerance")
    if base_jitter is not None and base_jitter < 0:
        raise InvalidArgumentError(f"base_jitter must be >= 0, got {base_jitter}")

    mean_diag = float(np.mean(np.diag(mat)))
    if base_jitter is None or base_jitter == 0.0:
        base_jitter = DEFAULT_JITTER_SCALE * max(mean_diag, 0.0)
    if base_jitter == 0.0:
        # Degenerate diagonal; only the exact attempt is available.
        base_jitter = np.inf
    cap = MAX_JITTER_SCALE * max(mean_diag, 0.0)

    jitter = 0.0
    last_info = None
    n = mat.shape[0]
    while True:
        attempt = mat if jitter == 0.0 else mat + jitter * np.eye(n)
        c, info = dpotrf(attempt, lower=1, clean=1, overwrite_a=0)
        if info == 0:
            return CholeskyFactor(lower=c, jitter_used=jitter)
        if info < 0:
            raise NumericalError(f"dpotrf rejected argument {-info}")
        last_info = info
        jitter = base_jitter if jitter == 0.0 else jitter * 10.0
        if jitter > cap:
            raise NumericalError(
                f"matrix not positive definite even with jitter up to {cap:.3e}; "
                f"leading minor of order {last_info} is not positive",
                minor_index=last_info,
            )


def log_normal_cdf(x):
    """log Phi(x), finite for every finite x.

    For x >= -8 the direct route log(0.5 erfc(-x/sqrt 2)) is accurate to
    better than 1e-10 absolute. Further down, erfc underflows toward an
    all-cancellation regime, so the standard asymptotic expansion of the
    Mills ratio takes over:

        log Phi(x) ~ -x^2/2 - log(-x sqrt(2 pi))
                     + log1p( sum_k (-1)^k (2k-1)!! / x^{2k} )

    truncated where the terms stop shrinking. Relative error stays below
    1e-6 over the whole tail.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.empty_like(x)

    body = (x >= _TAIL_SWITCH) & (x <= 5.0)
    if np.any(body):
        out[body] = np.log(0.5 * erfc(-x[body] / SQRT_2))
    upper = x > 5.0
    if np.any(upper):
        # log(1 - eps) via log1p keeps distinct values out to the erfc
        # underflow point instead of flushing to exactly 0.
        out[upper] = np.log1p(-0.5 * erfc(x[upper] / SQRT_2))
    body |= upper
    if np.any(~body):
        t = x[~body]
        with np.errstate(over="ignore"):
            inv2 = 1.0 / (t * t)
            # (2k-1)!! / x^{2k}, alternating. Truncating at 10 terms leaves
            # at most the first omitted term, under 2e-10 relative at the
            # switch point and vanishing further out.
            series = np.zeros_like(t)
            term = np.ones_like(t)
            for k in range(1, 11):
                term = term * (2 * k - 1) * inv2
                series = series - term if k % 2 == 1 else series + term
            out[~body] = -0.5 * t * t - np.log(-t * np.sqrt(2.0 * np.pi)) + np.log1p(series)
        # -x^2/2 can overflow float64 long before x stops being finite;
        # pin to the largest representable magnitude rather than -inf.
        out[~body] = np.maximum(out[~body], -np.finfo(float).max)
    return float(out[0]) if scalar else out


def normal_cdf(x):
    """Phi(x) through the erfc route (no cancellation on either tail)."""
    x = np.asarray(x, dtype=float)
    return 0.5 * erfc(-x / SQRT_2)


def log_normal_pdf(x):
    """log N(x | 0, 1)."""
    x = np.asarray(x, dtype=float)
    return -0.5 * x * x - 0.5 * np.log(2.0 * np.pi)


def _label_key(label: str) -> int:
    # Stable across processes, unlike hash(); 64 bits of sha256.
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class RandomSource:
    """Deterministic random stream with labeled, independent substreams.

    Built on PCG64 seeded through SeedSequence. substream(label) derives
    a child keyed by a stable hash of the label, so the set of consumers
    can grow without shifting anyone else's draws.
    """

    def __init__(self, seed):
        if not isinstance(seed, np.random.SeedSequence):
            seed = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF)
        self._seed_seq = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def substream(self, label: str) -> "RandomSource":
        child = np.random.SeedSequence(
            entropy=self._seed_seq.entropy,
            spawn_key=self._seed_seq.spawn_key + (_label_key(label),),
        )
        return RandomSource(child)

    def normal(self, shape=()) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, shape=()) -> np.ndarray:
        return self._gen.random(shape)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self._gen.integers(low, high=high, size=size)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def seeded_rng(seed: int) -> RandomSource:
    """Root random source for a run; all randomness should flow from here."""
    # Negative seeds are accepted and folded into the 64-bit space.
    return RandomSource(np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF))
