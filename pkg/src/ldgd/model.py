"""Full model assembly.

One shared latent space feeding two sparse variational GP paths: a
regression path reconstructing the continuous features (D columns, each
with its own noise variance) and a classification path scoring one-hot
labels through a probit likelihood. Training maximizes the five-term
evidence lower bound by minibatch Adam over every parameter block at
once; test rows get fresh latent posteriors optimized against the
regression path only, or a single encoder pass in the amortized
variant.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .baselines import fit_ppca, ppca_project
from .data import Dataset
from .errors import InvalidArgumentError, NumericalError
from .kernels import ArdKernel, ard_report, gram_nodes
from .latent import (
    AmortizedEncoder,
    FreeFormLatent,
    encode,
    encode_nodes,
    init_encoder,
    kl_latent_nodes,
    sample_latent,
)
from .likelihoods import gaussian_ell_nodes, probit_ell_nodes, class_probability
from .numerics import QuadratureRule, RandomSource, gauss_hermite
from .optim import (
    Leaves,
    ParameterVector,
    adam_step,
    init_adam,
    value_and_gradient,
)
from .svgp import InducingSet, WhitenedColumnPosterior, kl_whitened_nodes, predictive_nodes

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ElboReport:
    """Signed five-term decomposition at one iteration.

    elbo is always the literal float sum of the stored fields, so the
    decomposition can be recomputed from the report exactly.
    """

    ell_reg: float
    ell_cls: float
    kl_x: float
    kl_u_reg: float
    kl_u_cls: float
    elbo: float
    iteration: int

    @classmethod
    def from_terms(cls, ell_reg, ell_cls, kl_x, kl_u_reg, kl_u_cls, iteration):
        # The KL terms are nonnegative mathematically; cancellation can
        # leave a float a few ulps below zero, which is pinned here so
        # the report honors the sign contract without moving the value.
        kl_x = max(float(kl_x), 0.0)
        kl_u_reg = max(float(kl_u_reg), 0.0)
        kl_u_cls = max(float(kl_u_cls), 0.0)
        ell_reg, ell_cls = float(ell_reg), float(ell_cls)
        return cls(
            ell_reg=ell_reg,
            ell_cls=ell_cls,
            kl_x=kl_x,
            kl_u_reg=kl_u_reg,
            kl_u_cls=kl_u_cls,
            elbo=ell_reg + ell_cls - kl_x - kl_u_reg - kl_u_cls,
            iteration=int(iteration),
        )


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int | None = None
    lr: float = 0.01
    iters: int = 1500
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise InvalidArgumentError(f"learning rate must be positive, got {self.lr}")
        if self.iters < 0:
            raise InvalidArgumentError(f"iteration count must be >= 0, got {self.iters}")
        if self.batch_size is not None and self.batch_size < 1:
            raise InvalidArgumentError(f"batch size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class InferenceConfig:
    lr: float = 0.01
    iters: int = 500
    seed: int = 0
    init: str = "zeros"

    def __post_init__(self):
        if self.lr <= 0:
            raise InvalidArgumentError(f"learning rate must be positive, got {self.lr}")
        if self.iters < 0:
            raise InvalidArgumentError(f"iteration count must be >= 0, got {self.iters}")
        if self.init not in ("zeros", "ppca"):
            raise InvalidArgumentError(f"unknown test-latent init {self.init!r}")


@dataclass(frozen=True)
class InferenceResult:
    latent: FreeFormLatent
    iterations_run: int
    trace: tuple


@dataclass(frozen=True)
class GenerationResult:
    """Feature-space predictive at requested latent points.

    output_variance adds the learned observation noise on top of the
    GP function variance; samples are mean plus noise draws when asked.
    """

    mean: np.ndarray
    function_variance: np.ndarray
    output_variance: np.ndarray
    samples: np.ndarray | None = None


class LdgdModel:
    """Parameter container for both GP paths plus the latent posterior.

    All trainable state lives in one ParameterVector so the optimizer,
    the gradient harness, and the checkpoint format see an identical
    flat layout.
    """

    def __init__(self, *, n: int, d: int, k: int, q: int, m_r: int, m_c: int,
                 quad_order: int = 20, j_samples: int = 1,
                 amortized: bool = False, encoder_hidden=(64, 32)):
        if d < 1 or k < 1:
            raise InvalidArgumentError(f"need D >= 1 and K >= 1, got D={d}, K={k}")
        if m_r < 1 or m_c < 1:
            raise InvalidArgumentError(f"need M >= 1 on both paths, got {m_r}, {m_c}")
        if q < 1 or n < 1:
            raise InvalidArgumentError(f"need Q >= 1 and N >= 1, got Q={q}, N={n}")
        if j_samples < 1:
            raise InvalidArgumentError(f"need at least one latent sample, got {j_samples}")
        self.n, self.d, self.k, self.q = n, d, k, q
        self.m_r, self.m_c = m_r, m_c
        self.j_samples = j_samples
        self.rule: QuadratureRule = gauss_hermite(quad_order)
        self.amortized = bool(amortized)
        self.encoder_hidden = tuple(int(h) for h in encoder_hidden) if amortized else ()
        self.params = ParameterVector()
        self._masks = {
            "reg": (np.tril(np.ones((m_r, m_r)), -1), np.eye(m_r)),
            "cls": (np.tril(np.ones((m_c, m_c)), -1), np.eye(m_c)),
        }

    # -- numeric views ---------------------------------------------------

    def kernel(self, path: str) -> ArdKernel:
        return ArdKernel(
            variance=float(self.params.constrained(f"kern_var_{path}")),
            inv_lengthscales=self.params.constrained(f"kern_alpha_{path}"),
        )

    def inducing(self, path: str) -> InducingSet:
        return InducingSet(self.params.constrained(f"inducing_{path}"))

    def column_posteriors(self, path: str) -> list:
        m_hat = self.params.constrained(f"u_mean_{path}")
        w_hat = self._numeric_scales(path)
        return [WhitenedColumnPosterior(m, w) for m, w in zip(m_hat, w_hat)]

    def noise_variances(self) -> np.ndarray:
        return self.params.constrained("noise_reg")

    def latent(self) -> FreeFormLatent:
        if self.amortized:
            raise InvalidArgumentError("amortized models have no free-form latent table")
        return FreeFormLatent(
            self.params.constrained("latent_mean"),
            self.params.constrained("latent_scale"),
        )

    def encoder(self) -> AmortizedEncoder:
        if not self.amortized:
            raise InvalidArgumentError("free-form models have no encoder")
        sizes = [self.d, *self.encoder_hidden, 2 * self.q]
        weights = [self.params.constrained(f"enc_w{i}") for i in range(len(sizes) - 1)]
        biases = [self.params.constrained(f"enc_b{i}") for i in range(len(sizes) - 1)]
        return AmortizedEncoder(
            input_dim=self.d, hidden_sizes=self.encoder_hidden, latent_dim=self.q,
            weights=weights, biases=biases,
        )

    def _numeric_scales(self, path: str) -> np.ndarray:
        strict, eye = self._masks[path]
        raw = self.params.raw(f"u_scale_{path}")
        return raw * strict + np.exp(raw) * eye

    # -- tape views ------------------------------------------------------

    def _scale_nodes(self, leaves, path: str):
        strict, eye = self._masks[path]
        raw = leaves.raw(f"u_scale_{path}")
        w = ad.add(ad.mul(raw, strict), ad.mul(ad.exp(raw), eye))
        log_diag_total = ad.sum_(ad.mul(raw, eye))
        return w, log_diag_total

    def _latent_nodes(self, leaves, rows, yr_batch):
        """(mu, s, log_s) tape nodes for the batch rows."""
        if self.amortized:
            sizes = [self.d, *self.encoder_hidden, 2 * self.q]
            ws = [leaves[f"enc_w{i}"] for i in range(len(sizes) - 1)]
            bs = [leaves[f"enc_b{i}"] for i in range(len(sizes) - 1)]
            mu, s = encode_nodes(ws, bs, yr_batch, self.q)
            return mu, s, ad.log(s)
        mu = ad.gather_rows(leaves["latent_mean"], rows)
        s = ad.gather_rows(leaves["latent_scale"], rows)
        log_s = ad.gather_rows(leaves.raw("latent_scale"), rows)
        return mu, s, log_s


def build_model(data: Dataset, q: int, m_r: int, m_c: int, *, seed: int = 0,
                quad_order: int = 20, j_samples: int = 1,
                amortized: bool = False, encoder_hidden=(64, 32),
                latent_init: str = "ppca") -> LdgdModel:
    """Construct and initialize every parameter block from a dataset."""
    if latent_init not in ("ppca", "random"):
        raise InvalidArgumentError(f"unknown latent init {latent_init!r}")
    model = LdgdModel(
        n=data.n, d=data.d, k=data.k, q=q, m_r=m_r, m_c=m_c,
        quad_order=quad_order, j_samples=j_samples,
        amortized=amortized, encoder_hidden=encoder_hidden,
    )
    root = RandomSource(seed)
    p = model.params
    p.add("kern_var_reg", 1.0, transform="log")
    p.add("kern_alpha_reg", np.ones(q), transform="log")
    p.add("kern_var_cls", 1.0, transform="log")
    p.add("kern_alpha_cls", np.ones(q), transform="log")
    p.add("inducing_reg", root.substream("inducing-reg").normal((m_r, q)))
    p.add("inducing_cls", root.substream("inducing-cls").normal((m_c, q)))
    p.add("u_mean_reg", np.zeros((data.d, m_r)))
    p.add("u_scale_reg", np.zeros((data.d, m_r, m_r)))
    p.add("u_mean_cls", np.zeros((data.k, m_c)))
    p.add("u_scale_cls", np.zeros((data.k, m_c, m_c)))
    p.add("noise_reg", np.maximum(0.1 * data.yr.var(axis=0), 1e-6), transform="log")

    if amortized:
        enc = init_encoder(data.d, model.encoder_hidden, q, root)
        for i, (w, b) in enumerate(zip(enc.weights, enc.biases)):
            p.add(f"enc_w{i}", w)
            p.add(f"enc_b{i}", b)
    else:
        p.add("latent_mean", _initial_latent_means(data.yr, q, latent_init, root))
        p.add("latent_scale", np.full((data.n, q), 0.5), transform="log")
    return model


def _initial_latent_means(yr: np.ndarray, q: int, kind: str, root: RandomSource) -> np.ndarray:
    stream = root.substream("latent-init")
    if kind == "random":
        return 0.1 * stream.normal((yr.shape[0], q))
    d = yr.shape[1]
    if q < d:
        projected = ppca_project(fit_ppca(yr, q), yr)
    else:
        # Latent width >= feature width: no projection exists, so start
        # from the centered features and fill any extra width with a
        # small random jitter.
        projected = yr - yr.mean(axis=0)
        if q > d:
            projected = np.hstack([projected, 0.1 * stream.normal((yr.shape[0], q - d))])
    std = projected.std(axis=0)
    return projected / np.where(std < 1e-12, 1.0, std)


# -- ELBO ----------------------------------------------------------------

def _elbo_nodes(model: LdgdModel, leaves, rows, yr_batch, yc_batch, eps):
    """The five term nodes for one batch; ELLs averaged over the J axis."""
    j, b = eps.shape[0], eps.shape[1]
    mu, s, log_s = model._latent_nodes(leaves, rows, yr_batch)
    x = sample_latent(mu, s, eps)
    x_flat = ad.reshape(x, (j * b, model.q))

    w_reg, log_diag_reg = model._scale_nodes(leaves, "reg")
    mean_r, var_r = predictive_nodes(
        leaves["kern_var_reg"], leaves["kern_alpha_reg"], leaves["inducing_reg"],
        leaves["u_mean_reg"], w_reg, x_flat,
    )
    yr_t = np.tile(yr_batch.T, (1, j))
    sigma2 = ad.reshape(leaves["noise_reg"], (model.d, 1))
    log_sigma2 = ad.reshape(leaves.raw("noise_reg"), (model.d, 1))
    ell_reg = ad.mul(ad.sum_(gaussian_ell_nodes(yr_t, mean_r, var_r, sigma2, log_sigma2)), 1.0 / j)

    w_cls, log_diag_cls = model._scale_nodes(leaves, "cls")
    mean_c, var_c = predictive_nodes(
        leaves["kern_var_cls"], leaves["kern_alpha_cls"], leaves["inducing_cls"],
        leaves["u_mean_cls"], w_cls, x_flat,
    )
    sign_t = np.tile((2.0 * yc_batch - 1.0).T, (1, j))
    ell_cls = ad.mul(ad.sum_(probit_ell_nodes(sign_t, mean_c, var_c, model.rule)), 1.0 / j)

    kl_x = kl_latent_nodes(mu, s, log_s)
    kl_u_reg = kl_whitened_nodes(leaves["u_mean_reg"], w_reg, log_diag_reg, model.d, model.m_r)
    kl_u_cls = kl_whitened_nodes(leaves["u_mean_cls"], w_cls, log_diag_cls, model.k, model.m_c)
    return ell_reg, ell_cls, kl_x, kl_u_reg, kl_u_cls


def _batch_objective(model: LdgdModel, data: Dataset, rows, eps, holder, iteration):
    """Objective callable over Leaves: negative scaled ELBO.

    Stashes the signed term floats into `holder` so the training loop
    can log the decomposition without a second evaluation.
    """
    rows = np.asarray(rows, dtype=int)
    yr_b, yc_b = data.yr[rows], data.yc[rows]
    scale = model.n / rows.shape[0]

    def objective(leaves):
        ell_reg, ell_cls, kl_x, kl_u_reg, kl_u_cls = _elbo_nodes(
            model, leaves, rows, yr_b, yc_b, eps
        )
        holder["report"] = ElboReport.from_terms(
            scale * float(ell_reg.value), scale * float(ell_cls.value),
            scale * float(kl_x.value), float(kl_u_reg.value), float(kl_u_cls.value),
            iteration,
        )
        data_terms = ad.sub(ad.add(ell_reg, ell_cls), kl_x)
        full = ad.sub(ad.sub(ad.mul(data_terms, scale), kl_u_reg), kl_u_cls)
        return ad.mul(full, -1.0)

    return objective


def batch_objective(model: LdgdModel, data: Dataset, rows, eps):
    """Leaves -> Var closure for the negated scaled ELBO on one batch.

    This is the exact objective the training loop differentiates; it is
    exposed so the gradient-check harness can drive the full model.
    """
    return _batch_objective(model, data, rows, np.asarray(eps, dtype=float), {}, 0)


def elbo_with_noise(model: LdgdModel, rows, data: Dataset, eps, iteration: int = 0) -> ElboReport:
    """Scaled ELBO decomposition under explicit reparameterization noise.

    eps has shape (J, B, Q) matching the batch rows; this is the entry
    point the dual-implementation oracle drives.
    """
    rows = np.asarray(rows, dtype=int)
    eps = np.asarray(eps, dtype=float)
    if rows.ndim != 1 or rows.size == 0:
        raise InvalidArgumentError("batch must be a non-empty index vector")
    if rows.min() < 0 or rows.max() >= data.n:
        raise InvalidArgumentError(f"batch indices must lie in [0, {data.n})")
    if eps.shape != (eps.shape[0], rows.size, model.q):
        raise InvalidArgumentError(
            f"noise shape {eps.shape} does not match (J, {rows.size}, {model.q})"
        )
    holder = {}
    objective = _batch_objective(model, data, rows, eps, holder, iteration)
    try:
        objective(Leaves(model.params, requires_grad=False))
    except NumericalError as err:
        raise NumericalError(f"{err} (iteration {iteration})", iteration=iteration) from err
    return holder["report"]


def elbo(model: LdgdModel, rows, data: Dataset, rng: RandomSource,
         iteration: int = 0) -> ElboReport:
    """Scaled ELBO decomposition with noise drawn from `rng`."""
    rows = np.asarray(rows, dtype=int)
    eps = rng.normal((model.j_samples, rows.size, model.q))
    return elbo_with_noise(model, rows, data, eps, iteration)


def train(model: LdgdModel, data: Dataset, config: TrainConfig) -> list:
    """Adam ascent on the minibatch ELBO; returns the per-iteration trace.

    The model's parameter vector is updated in place. Batch indices and
    reparameterization noise come from labeled substreams of the config
    seed, so traces are bitwise reproducible.
    """
    if data.n != model.n or data.d != model.d or data.k != model.k:
        raise InvalidArgumentError(
            f"data ({data.n}, {data.d}, {data.k}) does not match model "
            f"({model.n}, {model.d}, {model.k})"
        )
    batch_size = config.batch_size if config.batch_size is not None else min(100, data.n)
    batch_size = min(batch_size, data.n)
    root = RandomSource(config.seed)
    batch_stream = root.substream("batch")
    noise_stream = root.substream("latent-noise")
    adam = init_adam(model.params.size, lr=config.lr)
    trace: list[ElboReport] = []
    for it in range(config.iters):
        if batch_size < data.n:
            rows = batch_stream.choice(data.n, batch_size, replace=False)
        else:
            rows = np.arange(data.n)
        eps = noise_stream.normal((model.j_samples, batch_size, model.q))
        holder = {}
        objective = _batch_objective(model, data, rows, eps, holder, it)
        try:
            _, grad = value_and_gradient(objective, model.params)
        except NumericalError as err:
            failure = NumericalError(f"{err} (iteration {it})", iteration=it)
            failure.trace = list(trace)
            raise failure from err
        trace.append(holder["report"])
        adam_step(adam, model.params, grad)
    return trace


def evaluate_elbo(model: LdgdModel, data: Dataset, seed: int = 0, j: int = 16,
                  iteration: int = 0) -> ElboReport:
    """Low-noise full-data ELBO: J-sample estimate, chunked over rows.

    Deterministic in (model, data, seed, j); used for final reporting
    and checkpoint verification.
    """
    leaves = Leaves(model.params, requires_grad=False)
    noise = RandomSource(seed).substream("eval-noise").normal((j, data.n, model.q))

    # Keep the biggest intermediate (quadrature x classes x J x chunk)
    # bounded regardless of problem size.
    per_row = j * (model.d + model.k * (1 + model.rule.order))
    chunk = max(1, int(2_000_000 / max(per_row, 1)))

    ell_reg_total, ell_cls_total = 0.0, 0.0
    kl_x_total = 0.0
    kl_u_reg_val, kl_u_cls_val = None, None
    for start in range(0, data.n, chunk):
        rows = np.arange(start, min(start + chunk, data.n))
        ell_reg, ell_cls, kl_x, kl_u_reg, kl_u_cls = _elbo_nodes(
            model, leaves, rows, data.yr[rows], data.yc[rows], noise[:, rows, :]
        )
        ell_reg_total += float(ell_reg.value)
        ell_cls_total += float(ell_cls.value)
        kl_x_total += float(kl_x.value)
        if kl_u_reg_val is None:
            kl_u_reg_val = float(kl_u_reg.value)
            kl_u_cls_val = float(kl_u_cls.value)
    return ElboReport.from_terms(
        ell_reg_total, ell_cls_total, kl_x_total, kl_u_reg_val, kl_u_cls_val, iteration
    )


# -- test-time inference -------------------------------------------------

def infer_test_latent(model: LdgdModel, yr_test, config: InferenceConfig) -> InferenceResult:
    """Latent posteriors for unseen rows.

    Amortized models answer with one encoder pass and report zero
    optimization iterations. Free-form models optimize fresh per-row
    (mean, scale) against the regression-path likelihood plus the
    latent KL; every trained parameter stays frozen and the label path
    is never consulted.
    """
    yr_test = np.asarray(yr_test, dtype=float)
    if yr_test.ndim != 2 or yr_test.shape[1] != model.d:
        raise InvalidArgumentError(
            f"test rows {yr_test.shape} do not match feature width {model.d}"
        )
    if model.amortized:
        mu, s = encode(model.encoder(), yr_test)
        return InferenceResult(FreeFormLatent(mu, s), iterations_run=0, trace=())

    n_t = yr_test.shape[0]
    pv = ParameterVector()
    pv.add("test_mean", _initial_test_means(model, yr_test, config))
    pv.add("test_scale", np.ones((n_t, model.q)), transform="log")

    # Frozen numeric model pieces become tape constants.
    kern_var = float(model.params.constrained("kern_var_reg"))
    kern_alpha = model.params.constrained("kern_alpha_reg")
    z = model.params.constrained("inducing_reg")
    u_mean = model.params.constrained("u_mean_reg")
    w = model._numeric_scales("reg")
    sigma2 = model.noise_variances().reshape(model.d, 1)
    log_sigma2 = np.log(model.noise_variances()).reshape(model.d, 1)
    j = model.j_samples

    noise_stream = RandomSource(config.seed).substream("test-noise")
    adam = init_adam(pv.size, lr=config.lr)
    trace = []
    for it in range(config.iters):
        eps = noise_stream.normal((j, n_t, model.q))

        def objective(leaves):
            mu = leaves["test_mean"]
            s = leaves["test_scale"]
            log_s = leaves.raw("test_scale")
            x_flat = ad.reshape(sample_latent(mu, s, eps), (j * n_t, model.q))
            mean_r, var_r = predictive_nodes(kern_var, kern_alpha, z, u_mean, w, x_flat)
            yr_t = np.tile(yr_test.T, (1, j))
            ell = ad.mul(ad.sum_(gaussian_ell_nodes(yr_t, mean_r, var_r, sigma2, log_sigma2)), 1.0 / j)
            return ad.mul(ad.sub(ell, kl_latent_nodes(mu, s, log_s)), -1.0)

        try:
            value, grad = value_and_gradient(objective, pv)
        except NumericalError as err:
            failure = NumericalError(f"{err} (test iteration {it})", iteration=it)
            failure.trace = list(trace)
            raise failure from err
        trace.append(-value)
        adam_step(adam, pv, grad)

    latent = FreeFormLatent(pv.constrained("test_mean"), pv.constrained("test_scale"))
    return InferenceResult(latent, iterations_run=config.iters, trace=tuple(trace))


def _initial_test_means(model: LdgdModel, yr_test: np.ndarray, config: InferenceConfig) -> np.ndarray:
    if config.init == "ppca" and model.q < model.d and yr_test.shape[0] > model.q:
        projected = ppca_project(fit_ppca(yr_test, model.q), yr_test)
        std = projected.std(axis=0)
        return projected / np.where(std < 1e-12, 1.0, std)
    return np.zeros((yr_test.shape[0], model.q))


# -- decode / generate ---------------------------------------------------

def _stacked_predictive(model: LdgdModel, path: str, x: np.ndarray):
    """Numeric (mean, variance) for all of one path's columns at once."""
    mean, var = predictive_nodes(
        float(model.params.constrained(f"kern_var_{path}")),
        model.params.constrained(f"kern_alpha_{path}"),
        model.params.constrained(f"inducing_{path}"),
        model.params.constrained(f"u_mean_{path}"),
        model._numeric_scales(path),
        x,
    )
    return mean.value, var.value


def decode_labels(model: LdgdModel, latent) -> tuple:
    """Class probabilities and argmax labels at the latent means.

    Accepts a FreeFormLatent or a bare (N, Q) array of means. Each
    class column is an independent Bernoulli-probit, so rows need not
    sum to one; ties go to the lowest class index.
    """
    x = latent.mu if isinstance(latent, FreeFormLatent) else np.asarray(latent, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.q:
        raise InvalidArgumentError(f"latent shape {x.shape} does not match Q={model.q}")
    mean, var = _stacked_predictive(model, "cls", x)
    probs = class_probability(mean, var).T
    return probs, np.argmax(probs, axis=1)


def generate(model: LdgdModel, latent_points, *, noisy_draws: int = 0,
             seed: int = 0) -> GenerationResult:
    """Feature-space predictive at arbitrary latent points.

    Returns per-dimension mean and variance; optional samples add
    observation noise on top of the mean.
    """
    x = np.asarray(latent_points, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.q:
        raise InvalidArgumentError(f"latent points {x.shape} do not match Q={model.q}")
    if noisy_draws < 0:
        raise InvalidArgumentError("draw count must be >= 0")
    if x.shape[0] == 0:
        empty = np.zeros((0, model.d))
        return GenerationResult(empty, empty.copy(), empty.copy(), None)
    mean, f_var = _stacked_predictive(model, "reg", x)
    mean, f_var = mean.T, f_var.T
    sigma2 = model.noise_variances()
    out_var = f_var + sigma2
    samples = None
    if noisy_draws:
        stream = RandomSource(seed).substream("generate-noise")
        draws = stream.normal((noisy_draws,) + mean.shape)
        samples = mean + np.sqrt(sigma2) * draws
    return GenerationResult(mean, f_var, out_var, samples)


def ard_summary(model: LdgdModel, threshold_ratio: float = 0.2) -> dict:
    """Both paths' relevance reports keyed by path name."""
    return {
        "reg": ard_report(model.kernel("reg"), threshold_ratio),
        "cls": ard_report(model.kernel("cls"), threshold_ratio),
    }


# -- checkpointing -------------------------------------------------------

def save_checkpoint(model: LdgdModel, path, *, config_echo=None, final_report=None,
                    eval_seed: int = 0) -> None:
    """Single JSON document: dims, every block's unconstrained storage
    (row-major nested lists), config echo, and the final decomposition."""
    from . import __version__

    blocks = []
    for b in model.params.blocks:
        blocks.append({
            "name": b.name,
            "shape": list(b.shape),
            "transform": b.transform,
            "raw": model.params.raw(b.name).tolist(),
        })
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "fast_ldgd" if model.amortized else "ldgd",
        "dims": {"n": model.n, "d": model.d, "k": model.k, "q": model.q,
                 "m_r": model.m_r, "m_c": model.m_c},
        "quad_order": model.rule.order,
        "j_samples": model.j_samples,
        "encoder_hidden": list(model.encoder_hidden),
        "blocks": blocks,
        "config_echo": dict(config_echo) if config_echo else {},
        "final_report": asdict(final_report) if final_report is not None else None,
        "eval_seed": int(eval_seed),
        "tool_version": __version__,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def load_checkpoint(path) -> tuple:
    """Rebuild a model from its checkpoint; returns (model, document)."""
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise InvalidArgumentError(
            f"checkpoint format {version!r} is not supported (expected {CHECKPOINT_FORMAT_VERSION})"
        )
    dims = doc["dims"]
    amortized = doc["kind"] == "fast_ldgd"
    model = LdgdModel(
        n=dims["n"], d=dims["d"], k=dims["k"], q=dims["q"],
        m_r=dims["m_r"], m_c=dims["m_c"],
        quad_order=doc["quad_order"], j_samples=doc["j_samples"],
        amortized=amortized, encoder_hidden=doc.get("encoder_hidden", ()),
    )
    for block in doc["blocks"]:
        values = np.asarray(block["raw"], dtype=float).reshape(block["shape"])
        placeholder = values if block["transform"] == "identity" else np.ones(block["shape"])
        model.params.add(block["name"], placeholder, transform=block["transform"])
        model.params.set_raw(block["name"], values)
    return model, doc
