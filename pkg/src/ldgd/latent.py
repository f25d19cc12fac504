"""Variational posterior over the shared latent coordinates.

Two interchangeable families: a free-form table of per-sample Gaussians
(mean and diagonal standard deviation per row), or a small network that
maps an observed feature row straight to those quantities, which is the
amortized route that makes test-time inference a single forward pass.
Either way the prior is standard normal and the KL has the usual closed
form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import InvalidArgumentError
from .numerics import RandomSource


@dataclass(frozen=True)
class FreeFormLatent:
    """Per-row diagonal Gaussians: mu (N, Q), s (N, Q) standard deviations."""

    mu: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        s = np.asarray(self.s, dtype=float)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "s", s)
        if mu.shape != s.shape or mu.ndim != 2:
            raise InvalidArgumentError(f"mu {mu.shape} and s {s.shape} must match as (N, Q)")
        if not np.all(s > 0):
            raise InvalidArgumentError("latent scales must be strictly positive")

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    @property
    def q(self) -> int:
        return self.mu.shape[1]


def sample_latent(mu, s, eps):
    """Reparameterized draw mu + s * eps; works on rows or full batches."""
    mu, s = ad.as_var(mu), ad.as_var(s)
    eps = np.asarray(eps, dtype=float)
    if eps.shape[-1] != mu.shape[-1]:
        raise InvalidArgumentError(f"noise shape {eps.shape} does not match latent {mu.shape}")
    return ad.add(mu, ad.mul(s, eps))


def kl_latent_nodes(mu, s, log_s):
    """Tape-ready KL(q(x) || N(0, I)) summed over the rows in scope.

    Per row: 0.5 sum_q (mu^2 + s^2 - 1 - 2 log s). `log_s` rides along
    separately for log-parameterized callers.
    """
    mu, s = ad.as_var(mu), ad.as_var(s)
    inner = ad.sub(ad.add(ad.square(mu), ad.square(s)), 1.0)
    inner = ad.sub(inner, ad.mul(log_s, 2.0))
    return ad.mul(ad.sum_(inner), 0.5)


def kl_latent(latent: FreeFormLatent, rows=None) -> float:
    """Numeric latent KL over all rows, or a subset."""
    mu, s = latent.mu, latent.s
    if rows is not None:
        mu, s = mu[rows], s[rows]
    return float(kl_latent_nodes(mu, s, np.log(s)).value)


@dataclass(frozen=True)
class AmortizedEncoder:
    """Feature row -> (latent mean, latent scale) network.

    tanh hidden layers; the final layer emits 2Q values, the second half
    squashed through softplus so scales stay positive with no clamping.
    Parameter count never depends on the dataset size, which is the
    whole point.
    """

    input_dim: int
    hidden_sizes: tuple
    latent_dim: int
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    def __post_init__(self):
        sizes = self.layer_sizes
        n_layers = len(sizes) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise InvalidArgumentError(
                f"encoder needs {n_layers} weight/bias pairs, "
                f"got {len(self.weights)}/{len(self.biases)}"
            )
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            want_w, want_b = (sizes[i], sizes[i + 1]), (sizes[i + 1],)
            if np.shape(w) != want_w or np.shape(b) != want_b:
                raise InvalidArgumentError(
                    f"encoder layer {i}: weight {np.shape(w)} / bias {np.shape(b)} "
                    f"do not match {want_w} / {want_b}"
                )

    @property
    def layer_sizes(self) -> list:
        return [self.input_dim, *self.hidden_sizes, 2 * self.latent_dim]

    def block_names(self):
        names = []
        for i in range(len(self.layer_sizes) - 1):
            names.append((f"enc_w{i}", f"enc_b{i}"))
        return names


def init_encoder(input_dim: int, hidden_sizes, latent_dim: int, rng: RandomSource) -> AmortizedEncoder:
    """Scaled-normal weights, zero biases."""
    sizes = [input_dim, *hidden_sizes, 2 * latent_dim]
    weights, biases = [], []
    stream = rng.substream("encoder-init")
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(stream.normal((fan_in, fan_out)) / np.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return AmortizedEncoder(
        input_dim=input_dim,
        hidden_sizes=tuple(int(h) for h in hidden_sizes),
        latent_dim=latent_dim,
        weights=weights,
        biases=biases,
    )


def encode_nodes(weights, biases, x, latent_dim: int):
    """Tape-ready forward pass. weights/biases are Vars or arrays.

    Returns (mu (B, Q), s (B, Q)); s comes from softplus so it is
    strictly positive by construction.
    """
    h = ad.as_var(x)
    n_layers = len(weights)
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = ad.add(ad.matmul(h, ad.as_var(w)), ad.as_var(b))
        if i < n_layers - 1:
            h = ad.tanh(h)
    mu = h[:, :latent_dim]
    s = ad.softplus(h[:, latent_dim:])
    return mu, s


def encode(encoder: AmortizedEncoder, y_batch) -> tuple:
    """Numeric forward pass: (mu, s) arrays for a feature batch."""
    y_batch = np.asarray(y_batch, dtype=float)
    if y_batch.ndim != 2 or y_batch.shape[1] != encoder.input_dim:
        raise InvalidArgumentError(
            f"batch shape {y_batch.shape} does not match encoder input {encoder.input_dim}"
        )
    mu, s = encode_nodes(encoder.weights, encoder.biases, y_batch, encoder.latent_dim)
    return mu.value, s.value
