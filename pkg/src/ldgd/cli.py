"""Command-line front end.

Subcommands cover the whole workflow: dataset generation, training,
prediction, evaluation, latent/relevance export, feature generation,
and the gradient-check harness. Every command is deterministic given
its flags, and every output file embeds the resolved configuration and
tool version. Config values come from defaults, then a TOML file, then
explicit flags, in that order of precedence.

Exit codes: 0 success, 1 validation error, 2 numerical failure,
3 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from . import model as model_mod
from .data import (
    Standardizer,
    fit_standardizer,
    load_csv,
    make_dataset,
    make_moons,
    metrics,
    save_csv,
    standardize,
    synthetic_moons_dataset,
    unstandardize,
)
from .errors import InvalidArgumentError, NumericalError
from .latent import FreeFormLatent
from .numerics import RandomSource
from .optim import compare_gradients, finite_difference_gradient, gradient


# -- run configuration ---------------------------------------------------

_DEFAULTS = {
    "kind": "ldgd",
    "q": 10,
    "m_r": 25,
    "m_c": 25,
    "quad_order": 20,
    "j_samples": 1,
    "batch_size": 0,  # 0 means min(100, N)
    "lr": 0.01,
    "iters": 1500,
    "test_lr": 0.01,
    "test_iters": 500,
    "seed": None,  # falls back to LDGD_SEED, then 0
    "latent_init": "ppca",
    "test_init": "zeros",
    "encoder_hidden": (64, 32),
    "threads": 1,
}


@dataclass(frozen=True)
class RunConfig:
    kind: str
    q: int
    m_r: int
    m_c: int
    quad_order: int
    j_samples: int
    batch_size: int
    lr: float
    iters: int
    test_lr: float
    test_iters: int
    seed: int
    latent_init: str
    test_init: str
    encoder_hidden: tuple
    threads: int

    def __post_init__(self):
        if self.kind not in ("ldgd", "fast_ldgd"):
            raise InvalidArgumentError(f"unknown model kind {self.kind!r}")
        for name in ("q", "m_r", "m_c", "quad_order", "j_samples", "threads"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("iters", "test_iters", "batch_size", "seed"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("lr", "test_lr"):
            if getattr(self, name) <= 0:
                raise InvalidArgumentError(f"{name} must be positive, got {getattr(self, name)}")
        if self.latent_init not in ("ppca", "random"):
            raise InvalidArgumentError(f"unknown latent init {self.latent_init!r}")
        if self.test_init not in ("zeros", "ppca"):
            raise InvalidArgumentError(f"unknown test init {self.test_init!r}")
        if self.kind == "fast_ldgd" and not self.encoder_hidden:
            raise InvalidArgumentError("fast_ldgd requires at least one encoder hidden size")
        if any(h < 1 for h in self.encoder_hidden):
            raise InvalidArgumentError(f"encoder sizes must be positive, got {self.encoder_hidden}")


def _parse_hidden(value) -> tuple:
    if isinstance(value, str):
        parts = [p for p in value.replace(" ", "").split(",") if p]
        try:
            return tuple(int(p) for p in parts)
        except ValueError:
            raise InvalidArgumentError(
                f"encoder sizes must be comma-separated integers, got {value!r}"
            ) from None
    return tuple(int(v) for v in value)


def _resolve_seed(value) -> int:
    if value is not None:
        return int(value)
    raw = os.environ.get("LDGD_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise InvalidArgumentError(f"LDGD_SEED must be an integer, got {raw!r}") from None


def resolve_config(args, base: dict | None = None) -> RunConfig:
    """Layer defaults <- base (e.g. a checkpoint echo) <- TOML <- flags."""
    merged = dict(_DEFAULTS)
    if base:
        for key in _DEFAULTS:
            if key in base and base[key] is not None:
                merged[key] = base[key]
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path, "rb") as f:
                doc = tomllib.load(f)
        except tomllib.TOMLDecodeError as err:
            raise InvalidArgumentError(f"{config_path}: {err}") from None
        unknown = sorted(set(doc) - set(_DEFAULTS))
        if unknown:
            raise InvalidArgumentError(f"{config_path}: unknown config keys {unknown}")
        merged.update(doc)
    for key in _DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    merged["seed"] = _resolve_seed(merged["seed"])
    merged["encoder_hidden"] = _parse_hidden(merged["encoder_hidden"])
    int_keys = ("q", "m_r", "m_c", "quad_order", "j_samples", "batch_size",
                "iters", "test_iters", "threads")
    for key in int_keys:
        merged[key] = int(merged[key])
    return RunConfig(**merged)


def _config_dict(config: RunConfig) -> dict:
    doc = {k: getattr(config, k) for k in _DEFAULTS}
    doc["encoder_hidden"] = list(config.encoder_hidden)
    return doc


def _provenance(command: str, params: dict) -> list:
    blob = json.dumps(params, sort_keys=True)
    return [f"ldgd {__version__}", f"command {command}", f"config {blob}"]


def _write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def _write_table(path, comments, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        for line in comments:
            f.write(f"# {line}\n")
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


# -- checkpoint plumbing -------------------------------------------------

def _restore(ckpt_path):
    model, doc = model_mod.load_checkpoint(ckpt_path)
    return model, doc, doc.get("config_echo", {})


def _standardizer(echo) -> Standardizer | None:
    stored = echo.get("standardizer")
    if not stored:
        return None
    return Standardizer(
        mean=np.asarray(stored["mean"], dtype=float),
        scale=np.asarray(stored["scale"], dtype=float),
    )


def _apply_standardizer(echo, yr: np.ndarray) -> np.ndarray:
    st = _standardizer(echo)
    return standardize(st, yr) if st is not None else yr


def _check_feature_width(model, data, source: str) -> None:
    if data.d != model.d:
        raise InvalidArgumentError(
            f"{source} has {data.d} features but the checkpoint expects {model.d}"
        )


def _infer_rows(model, yr_std: np.ndarray, config: RunConfig):
    """Latents for prepared rows; contiguous chunks fan out when
    --threads > 1 (chunk seeds derived from the base seed, so thread
    count changes the draws but each count is deterministic)."""
    base = dict(lr=config.test_lr, iters=config.test_iters, init=config.test_init)
    n = yr_std.shape[0]
    if model.amortized or config.threads <= 1 or n < 2 * config.threads:
        result = model_mod.infer_test_latent(
            model, yr_std, model_mod.InferenceConfig(seed=config.seed, **base)
        )
        return result.latent, result.iterations_run
    chunks = [c for c in np.array_split(np.arange(n), config.threads) if c.size]
    root = RandomSource(config.seed)
    seeds = [
        int(root.substream(f"predict-chunk-{i}").integers(0, 2**63 - 1))
        for i in range(len(chunks))
    ]

    def work(i):
        return model_mod.infer_test_latent(
            model, yr_std[chunks[i]], model_mod.InferenceConfig(seed=seeds[i], **base)
        )

    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        results = list(pool.map(work, range(len(chunks))))
    latent = FreeFormLatent(
        np.vstack([r.latent.mu for r in results]),
        np.vstack([r.latent.s for r in results]),
    )
    return latent, results[0].iterations_run


def _training_latents(model, data, echo):
    """Latents for the training file itself: the stored table for the
    free-form kind, an encoder pass for the amortized kind."""
    if model.amortized:
        result = model_mod.infer_test_latent(
            model,
            _apply_standardizer(echo, data.yr),
            model_mod.InferenceConfig(iters=0),
        )
        return result.latent
    if data.n != model.n:
        raise InvalidArgumentError(
            f"data has {data.n} rows but the checkpoint's latent table has {model.n}; "
            "pass the training file"
        )
    return model.latent()


# -- commands ------------------------------------------------------------

def cmd_gen_data(args) -> int:
    seed = _resolve_seed(args.seed)
    if args.n < 2:
        raise InvalidArgumentError(f"need at least two samples, got {args.n}")
    params = {"kind": args.kind, "n": args.n, "noise_std": args.noise_std, "seed": seed}
    if args.kind == "moons":
        points, labels = make_moons(args.n, args.noise_std, seed)
        data = make_dataset(
            points, labels, label_names=("moon-0", "moon-1"), feature_names=("f0", "f1")
        )
    else:
        params["base_dim"] = args.base_dim
        data = synthetic_moons_dataset(
            2 * args.base_dim, n=args.n, noise_std=args.noise_std, seed=seed
        )
    save_csv(
        args.out, data.yr, data.labels, data.label_names, data.feature_names,
        header_comments=_provenance("gen-data", params),
    )
    print(f"wrote {args.out}: N={data.n} D={data.d} K={data.k}")
    return 0


def cmd_train(args) -> int:
    config = resolve_config(args)
    data = load_csv(args.data)
    st = fit_standardizer(data.yr)
    std_data = make_dataset(
        standardize(st, data.yr), data.labels,
        label_names=data.label_names, feature_names=data.feature_names,
    )
    model = model_mod.build_model(
        std_data, q=config.q, m_r=config.m_r, m_c=config.m_c, seed=config.seed,
        quad_order=config.quad_order, j_samples=config.j_samples,
        amortized=(config.kind == "fast_ldgd"),
        encoder_hidden=config.encoder_hidden, latent_init=config.latent_init,
    )
    train_cfg = model_mod.TrainConfig(
        batch_size=(config.batch_size or None), lr=config.lr,
        iters=config.iters, seed=config.seed,
    )
    trace = model_mod.train(model, std_data, train_cfg)
    final = model_mod.evaluate_elbo(
        model, std_data, seed=config.seed, j=16, iteration=config.iters
    )
    echo = _config_dict(config)
    echo.update({
        "command": "train",
        "data": str(args.data),
        "standardizer": {"mean": st.mean.tolist(), "scale": st.scale.tolist()},
        "label_names": list(data.label_names),
        "feature_names": list(data.feature_names),
    })
    model_mod.save_checkpoint(
        model, args.out, config_echo=echo, final_report=final, eval_seed=config.seed
    )
    trace_path = args.trace if args.trace else f"{args.out}.trace.json"
    _write_json(trace_path, {
        "tool_version": __version__,
        "config": echo,
        "reports": [
            {"iteration": r.iteration, "elbo": r.elbo, "ell_reg": r.ell_reg,
             "ell_cls": r.ell_cls, "kl_x": r.kl_x, "kl_u_reg": r.kl_u_reg,
             "kl_u_cls": r.kl_u_cls}
            for r in trace
        ],
    })
    print(f"trained {config.kind} for {config.iters} iterations: final elbo {final.elbo:.4f}")
    print(f"wrote {args.out} and {trace_path}")
    return 0


def _predict_core(args):
    model, _, echo = _restore(args.ckpt)
    config = resolve_config(args, base=echo)
    data = load_csv(args.data)
    _check_feature_width(model, data, args.data)
    latent, iterations = _infer_rows(model, _apply_standardizer(echo, data.yr), config)
    probs, labels = model_mod.decode_labels(model, latent)
    label_names = echo.get("label_names") or [f"class-{i}" for i in range(model.k)]
    return model, config, echo, data, latent, probs, labels, label_names, iterations


def _write_predictions(path, config, label_names, probs, labels, latent) -> None:
    header = (
        [f"prob-{name}" for name in label_names]
        + ["predicted-label"]
        + [f"latent-mean-{i}" for i in range(latent.mu.shape[1])]
        + [f"latent-scale-{i}" for i in range(latent.mu.shape[1])]
    )
    rows = []
    for i in range(probs.shape[0]):
        rows.append(
            [repr(float(p)) for p in probs[i]]
            + [label_names[int(labels[i])]]
            + [repr(float(v)) for v in latent.mu[i]]
            + [repr(float(v)) for v in latent.s[i]]
        )
    _write_table(path, _provenance("predict", _config_dict(config)), header, rows)


def cmd_predict(args) -> int:
    _, config, _, data, latent, probs, labels, label_names, iterations = _predict_core(args)
    _write_predictions(args.out, config, label_names, probs, labels, latent)
    print(f"wrote {args.out}: {data.n} rows, {iterations} inference iterations per row set")
    return 0


def cmd_evaluate(args) -> int:
    model, config, _, data, latent, probs, labels, label_names, _ = _predict_core(args)
    if list(label_names) != list(data.label_names):
        raise InvalidArgumentError(
            f"label names in {args.data} {list(data.label_names)} do not match "
            f"the checkpoint's {list(label_names)}"
        )
    report = metrics(labels, data.labels, k=model.k)
    doc = {
        "accuracy": float(report.accuracy),
        "precision": float(report.precision),
        "recall": float(report.recall),
        "f1": float(report.f1),
        "confusion": np.asarray(report.confusion).tolist(),
        "zero_division_classes": [int(c) for c in report.zero_division_classes],
        "n": data.n,
        "label_names": list(label_names),
        "tool_version": __version__,
        "config": _config_dict(config),
    }
    _write_json(args.metrics, doc)
    if args.out:
        _write_predictions(args.out, config, label_names, probs, labels, latent)
    print(
        f"accuracy {report.accuracy:.4f}  precision {report.precision:.4f}  "
        f"recall {report.recall:.4f}  f1 {report.f1:.4f}"
    )
    print(f"wrote {args.metrics}")
    return 0


def cmd_latent(args) -> int:
    model, _, echo = _restore(args.ckpt)
    data = load_csv(args.data)
    _check_feature_width(model, data, args.data)
    latent = _training_latents(model, data, echo)
    q = latent.mu.shape[1]
    header = ["label"] + [f"latent-mean-{i}" for i in range(q)] + [
        f"latent-scale-{i}" for i in range(q)
    ]
    rows = []
    for i in range(data.n):
        rows.append(
            [data.label_names[int(data.labels[i])]]
            + [repr(float(v)) for v in latent.mu[i]]
            + [repr(float(v)) for v in latent.s[i]]
        )
    _write_table(args.out, _provenance("latent", {"ckpt": str(args.ckpt)}), header, rows)
    print(f"wrote {args.out}: {data.n} rows, {q} latent dims")
    return 0


def cmd_ard(args) -> int:
    model, _, _ = _restore(args.ckpt)
    if not 0 < args.threshold_ratio <= 1:
        raise InvalidArgumentError(
            f"threshold ratio must be in (0, 1], got {args.threshold_ratio}"
        )
    summary = model_mod.ard_summary(model, threshold_ratio=args.threshold_ratio)
    doc = {"tool_version": __version__, "threshold_ratio": args.threshold_ratio}
    for path, report in summary.items():
        doc[path] = {
            "alphas": model.kernel(path).inv_lengthscales.tolist(),
            "selected_dims": [int(i) for i in report.dims],
            "selected_alphas": np.asarray(report.alphas).tolist(),
            "threshold": float(report.threshold),
        }
    _write_json(args.out, doc)
    print(
        f"wrote {args.out}: regression keeps {len(summary['reg'].dims)} dims, "
        f"classification keeps {len(summary['cls'].dims)}"
    )
    return 0


def _read_latent_points(path, q: int) -> np.ndarray:
    """Latent coordinates from CSV: uses latent-mean-* columns when the
    file came from the latent export, all columns otherwise. A file
    with a header and no data rows yields an empty (0, Q) array."""
    with open(path, encoding="utf-8") as f:
        lines = [
            (i + 1, line) for i, line in enumerate(f)
            if not line.startswith("#") and line.strip()
        ]
    if not lines:
        raise InvalidArgumentError(f"{path}: no header row")
    header = next(csv.reader([lines[0][1]]))
    mean_cols = [i for i, name in enumerate(header) if name.startswith("latent-mean-")]
    cols = mean_cols if mean_cols else list(range(len(header)))
    if len(cols) != q:
        raise InvalidArgumentError(
            f"{path}: found {len(cols)} coordinate columns, model expects {q}"
        )
    points = []
    for lineno, line in lines[1:]:
        cells = next(csv.reader([line]))
        if len(cells) != len(header):
            raise InvalidArgumentError(
                f"{path}: line {lineno} has {len(cells)} cells, header has {len(header)}"
            )
        try:
            points.append([float(cells[i]) for i in cols])
        except ValueError:
            raise InvalidArgumentError(
                f"{path}: line {lineno} has a non-numeric coordinate"
            ) from None
    return np.asarray(points, dtype=float).reshape(len(points), q)


def cmd_generate(args) -> int:
    model, _, echo = _restore(args.ckpt)
    seed = _resolve_seed(args.seed)
    if (args.latents is None) == (args.near_class is None):
        raise InvalidArgumentError("pass exactly one of --latents or --near-class")
    if args.draws < 0:
        raise InvalidArgumentError(f"draw count must be >= 0, got {args.draws}")

    if args.near_class is not None:
        if not 0 <= args.near_class < model.k:
            raise InvalidArgumentError(
                f"class index {args.near_class} out of range for K={model.k}"
            )
        if not args.data:
            raise InvalidArgumentError("--near-class needs --data to locate class latents")
        data = load_csv(args.data)
        _check_feature_width(model, data, args.data)
        latent = _training_latents(model, data, echo)
        mask = data.labels == args.near_class
        if not np.any(mask):
            raise InvalidArgumentError(
                f"no rows of class {args.near_class} in {args.data}"
            )
        centroid = latent.mu[mask].mean(axis=0)
        spread = latent.mu[mask].std(axis=0)
        wiggle = RandomSource(seed).substream("near-class").normal((model.q,))
        points = (centroid + 0.1 * spread * wiggle)[None, :]
    else:
        points = _read_latent_points(args.latents, model.q)

    result = model_mod.generate(model, points, noisy_draws=args.draws, seed=seed)
    st = _standardizer(echo)
    mean = result.mean
    out_std = np.sqrt(result.output_variance)
    samples = result.samples
    if st is not None and points.shape[0]:
        mean = unstandardize(st, mean)
        out_std = out_std * st.scale
        if samples is not None:
            samples = np.stack([unstandardize(st, s) for s in samples])

    feature_names = echo.get("feature_names") or [f"f{i}" for i in range(model.d)]
    header = ["point", "row-kind"] + list(feature_names)
    rows = []
    for i in range(points.shape[0]):
        rows.append([i, "mean"] + [repr(float(v)) for v in mean[i]])
        rows.append([i, "output-std"] + [repr(float(v)) for v in out_std[i]])
        for d in range(args.draws):
            rows.append([i, f"draw-{d}"] + [repr(float(v)) for v in samples[d, i]])
    params = {"seed": seed, "draws": args.draws, "near_class": args.near_class}
    _write_table(args.out, _provenance("generate", params), header, rows)
    print(f"wrote {args.out}: {points.shape[0]} latent points")
    return 0


def _random_check_instance(seed: int):
    """Tiny randomized model with every block nudged off initialization;
    exercises the full objective, not a special case."""
    rng = RandomSource(seed)
    dims = rng.substream("dims")
    n = int(dims.integers(5, 9))
    d = int(dims.integers(2, 4))
    k = int(dims.integers(2, 4))
    m_r = int(dims.integers(2, 4))
    m_c = int(dims.integers(2, 4))
    q = 2
    yr = rng.substream("features").normal((n, d))
    data = make_dataset(yr, np.arange(n) % k)
    model = model_mod.build_model(data, q=q, m_r=m_r, m_c=m_c, seed=seed)
    model.params.storage += 0.3 * rng.substream("perturb").normal((model.params.size,))
    eps = rng.substream("noise").normal((1, n, q))
    return model, data, eps


def cmd_gradcheck(args) -> int:
    if args.instances < 1:
        raise InvalidArgumentError(f"need at least one instance, got {args.instances}")
    if args.threshold <= 0:
        raise InvalidArgumentError(f"threshold must be positive, got {args.threshold}")
    base_seed = _resolve_seed(args.seed)
    instances = []
    failed_block = None
    for i in range(args.instances):
        seed = base_seed + i
        model, data, eps = _random_check_instance(seed)
        objective = model_mod.batch_objective(model, data, np.arange(data.n), eps)
        tape = gradient(objective, model.params)
        diff = finite_difference_gradient(objective, model.params)
        if args.corrupt_block:
            block = model.params.block(args.corrupt_block)
            sl = slice(block.offset, block.offset + block.size)
            tape[sl] = tape[sl] * 1.5 + 1.0
        report = compare_gradients(model.params, tape, diff, threshold=args.threshold)
        instances.append({
            "seed": seed,
            "passed": report.passed,
            "worst_block": report.worst_block,
            "per_block": report.per_block,
        })
        if not report.passed and failed_block is None:
            failed = report.failing_blocks()
            failed_block = failed[0] if failed else report.worst_block
    passed = all(inst["passed"] for inst in instances)
    doc = {
        "passed": passed,
        "threshold": args.threshold,
        "instances": instances,
        "tool_version": __version__,
    }
    if args.out:
        _write_json(args.out, doc)
    if passed:
        worst = max(e for inst in instances for e in inst["per_block"].values())
        print(
            f"gradient check passed: {args.instances} instances, "
            f"worst relative error {worst:.3e} < {args.threshold:g}"
        )
        return 0
    print(f"gradient check FAILED in block {failed_block!r}", file=sys.stderr)
    return 2


# -- argument parsing ----------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as validation errors (exit 1)
    instead of its default exit code."""

    def error(self, message):
        raise InvalidArgumentError(f"{self.prog}: {message}")


def _add_run_flags(p: argparse.ArgumentParser, full: bool) -> None:
    p.add_argument("--config", help="TOML file with config keys (flags override)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--test-lr", dest="test_lr", type=float)
    p.add_argument("--test-iters", dest="test_iters", type=int)
    p.add_argument("--test-init", dest="test_init", choices=("zeros", "ppca"))
    if full:
        p.add_argument("--kind", choices=("ldgd", "fast_ldgd"))
        p.add_argument("--q", type=int)
        p.add_argument("--m-r", dest="m_r", type=int)
        p.add_argument("--m-c", dest="m_c", type=int)
        p.add_argument("--quad-order", dest="quad_order", type=int)
        p.add_argument("--j-samples", dest="j_samples", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--iters", type=int)
        p.add_argument("--latent-init", dest="latent_init", choices=("ppca", "random"))
        p.add_argument("--encoder-hidden", dest="encoder_hidden",
                       help="comma-separated sizes, e.g. 64,32")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ldgd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ldgd {__version__}")
    sub = parser.add_subparsers(dest="subcommand", metavar="command")

    p = sub.add_parser("gen-data", help="write a synthetic dataset CSV")
    p.add_argument("--kind", choices=("moons", "moons-linear"), default="moons-linear")
    p.add_argument("--base-dim", dest="base_dim", type=int, default=5,
                   help="pre-noise dimension; output has twice this many columns")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--noise-std", dest="noise_std", type=float, default=0.1)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fit a model and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="training-trace JSON path (default <out>.trace.json)")
    _add_run_flags(p, full=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="infer latents and label rows")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_run_flags(p, full=False)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="predict plus metrics against true labels")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--metrics", required=True, help="metrics JSON path")
    p.add_argument("--out", help="optional predictions CSV path")
    _add_run_flags(p, full=False)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("latent", help="export training latents for plotting")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="the training CSV (labels and row order)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_latent)

    p = sub.add_parser("ard", help="export kernel relevance reports")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold-ratio", dest="threshold_ratio", type=float, default=0.2)
    p.set_defaults(func=cmd_ard)

    p = sub.add_parser("generate", help="decode latent points into feature space")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--latents", help="CSV of latent coordinates")
    p.add_argument("--near-class", dest="near_class", type=int,
                   help="generate near this class's latent centroid")
    p.add_argument("--data", help="training CSV (needed with --near-class)")
    p.add_argument("--draws", type=int, default=0)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("gradcheck", help="finite-difference audit of the objective gradient")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--out", help="optional JSON report path")
    p.add_argument("--corrupt-block", dest="corrupt_block", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help / --version
        return exc.code if isinstance(exc.code, int) else 0
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if not getattr(args, "subcommand", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (json.JSONDecodeError, KeyError) as exc:
        print(f"error: malformed input file ({exc})", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
