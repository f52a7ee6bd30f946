"""Experiment driver: configs, fitting, weight-decay sweeps and benchmarks.

Configs are YAML documents validated by pydantic models that reject unknown
keys. Every command writes plain CSV traces plus a JSON summary into an
output directory, and returns a process exit code:

==  =====================================================
0   success
1   invalid config (the message names the offending field)
2   runtime failure (non-finite ELBO, model-domain error)
3   a benchmark variant missed the ELBO threshold
==  =====================================================

Trace CSV columns are ``step,step_kind,model_grad_evals,logp_evals,wall_ms,
elbo,mean_weight``; the full-data evaluation stream is written alongside as
``step,model_grad_evals,logp_evals,wall_ms,elbo``. Benchmark thresholds and
crossings are recomputed from these files by :func:`crossing_from_csv`.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import approximation as ap
from . import estimators as es
from . import models as md
from . import optimizers as op

__all__ = [
    "ConfigError",
    "ModelSection",
    "ApproxSection",
    "AdamSection",
    "OptimizerSection",
    "RunConfig",
    "WeightDecayConfig",
    "BenchConfig",
    "load_config",
    "build_target",
    "build_initial_params",
    "build_optim_config",
    "build_stop_rule",
    "build_options",
    "fit",
    "weight_decay_curves",
    "smooth",
    "threshold_from_elbos",
    "first_crossing",
    "crossing_from_csv",
    "bench",
    "rank_rows",
    "write_trace_csv",
    "read_trace_csv",
    "write_eval_csv",
    "read_eval_csv",
    "cmd_fit",
    "cmd_weight_decay",
    "cmd_bench",
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_RUNTIME",
    "EXIT_THRESHOLD",
]

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_THRESHOLD = 0, 1, 2, 3


class ConfigError(ValueError):
    """Raised for configs that parse but cannot describe a valid run."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelSection(_Strict):
    kind: Literal[md.MODEL_KINDS]  # type: ignore[valid-type]
    dim: int = Field(ge=1)
    n: int = Field(default=1000, ge=1, description="number of synthetic records")
    hyperparameters: dict[str, float] = Field(default_factory=dict)
    data_seed: Optional[int] = Field(default=None, ge=0, description="defaults to the run seed")
    data_csv: Optional[str] = Field(default=None, description="read records from CSV instead of simulating")


class ApproxSection(_Strict):
    factor_size: int = Field(default=1, ge=1)
    init_location: float = 0.0
    init_scale: float = Field(default=0.1, gt=0)


class AdamSection(_Strict):
    lr: float = Field(default=0.05, ge=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    decay_steps: Optional[float] = Field(default=None, gt=0)
    decay_power: float = Field(default=0.5, ge=0)


class OptimizerSection(_Strict):
    name: Literal["sgd", "isgd", "sag", "isag", "sra"] = "isgd"
    label: Optional[str] = None
    reuse_probability: float = Field(default=0.9, ge=0, lt=1, description="t, in [0, 1)")
    max_reuse_steps: int = Field(default=50, ge=0)
    latest_k: Optional[int] = Field(default=None, ge=1, description="K for I-SAG/SAG")
    sra_decay: float = Field(default=0.9, gt=0, lt=1, description="alpha for SRA")
    warm_start_epochs: int = Field(default=1, ge=0)
    warm_start_reuse: float = Field(default=0.9, ge=0, lt=1)

    @property
    def display(self) -> str:
        return self.label or self.name


class _Shared(_Strict):
    """Settings shared by ``fit`` and every ``bench`` variant."""

    model: ModelSection
    approximation: ApproxSection = ApproxSection()
    estimator: Literal["reparam", "score"] = "reparam"
    num_samples: int = Field(default=1, ge=1, description="M")
    batch_size: int = Field(default=100, ge=1)
    epochs: int = Field(default=10, ge=0)
    max_steps: Optional[int] = Field(default=None, ge=1)
    plateau_tol: Optional[float] = Field(default=None, gt=0)
    plateau_epochs: int = Field(default=5, ge=1)
    eval_every: int = Field(default=0, ge=0, description="fresh steps between full-data evaluations")
    eval_samples: int = Field(default=64, ge=1)
    weight_floor: float = Field(default=1e-3, ge=0, lt=1)
    weight_ceiling: float = Field(default=1e3, gt=1)
    adam: AdamSection = AdamSection()
    seed: int = Field(ge=0)
    out: str = "out"
    wall_clock: bool = Field(default=True, description="false writes wall_ms as 0 for byte-stable traces")

    @model_validator(mode="after")
    def _check_model(self):
        try:
            md.ModelSpec(self.model.kind, self.model.dim, dict(self.model.hyperparameters))
        except ValueError as exc:
            raise ValueError(f"model.hyperparameters: {exc}") from None
        return self


class RunConfig(_Shared):
    optimizer: OptimizerSection = OptimizerSection()


class WeightDecayConfig(_Strict):
    dim: int = Field(default=100, ge=1)
    factor_sizes: list[int] = Field(default_factory=lambda: [1, 5, 10, 25, 50, 100], min_length=1)
    replicates: int = Field(default=100, ge=1)
    reuse_steps: int = Field(default=10, ge=1)
    lr: float = Field(default=0.09, ge=0, description="Adam step size, shared by every factor size")
    n: int = Field(default=20, ge=1, description="records behind the Gaussian target")
    init_location: float = 0.0
    init_scale: float = Field(default=1.0, gt=0)
    seed: int = Field(ge=0)
    out: str = "out"

    @field_validator("factor_sizes")
    @classmethod
    def _positive_sizes(cls, v):
        if any(s < 1 for s in v):
            raise ValueError("factor sizes must be >= 1")
        return v


class BenchConfig(_Shared):
    variants: list[OptimizerSection] = Field(min_length=2, description="at least two optimizers to compare")
    threshold_margin: float = Field(default=1.0, ge=0, description="nats below the best smoothed SGD ELBO")
    smooth_window: int = Field(default=3, ge=1)
    baseline_plateau_tol: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _unique_labels(self):
        labels = [v.display for v in self.variants]
        if len(set(labels)) != len(labels):
            raise ValueError(f"variants: labels must be unique, got {labels}")
        return self


_CONFIGS = {"fit": RunConfig, "weight-decay": WeightDecayConfig, "bench": BenchConfig}


def _format_validation(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def load_config(path, command: str, seed: int | None = None, out: str | None = None):
    """Read a YAML config for ``command`` and apply CLI overrides.

    Raises :class:`ConfigError` with field-level messages on any problem.
    """
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of keys to values")
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw["out"] = out
    try:
        return _CONFIGS[command].model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from None


# -- building library objects from a config


def build_target(cfg: _Shared) -> md.Target:
    m = cfg.model
    spec = md.ModelSpec(m.kind, m.dim, dict(m.hyperparameters))
    if m.data_csv is not None:
        data = md.read_csv(m.data_csv)
    else:
        seed = cfg.seed if m.data_seed is None else m.data_seed
        data = md.make_synthetic(spec, np.random.default_rng(seed), m.n)
    return md.Target(spec, data)


def build_initial_params(cfg: _Shared, target: md.Target) -> ap.FactorizedApproxParams:
    a = cfg.approximation
    return ap.make_params(
        transforms=md.default_transforms(target.spec),
        factor_size=a.factor_size,
        location=a.init_location,
        scale=a.init_scale,
    )


def build_optim_config(cfg: _Shared) -> op.OptimConfig:
    a = cfg.adam
    return op.OptimConfig(
        batch_size=cfg.batch_size,
        estimator=cfg.estimator,
        estimator_cfg=es.EstimatorConfig(cfg.num_samples, cfg.weight_floor, cfg.weight_ceiling),
        adam=op.AdamConfig(a.lr, a.beta1, a.beta2, a.eps, a.decay_steps, a.decay_power),
        eval_every=cfg.eval_every,
        eval_samples=cfg.eval_samples,
    )


def build_stop_rule(cfg: _Shared, epochs: int | None = None, plateau_tol: float | None = None) -> op.StopRule:
    return op.StopRule(
        epochs=cfg.epochs if epochs is None else epochs,
        max_steps=cfg.max_steps,
        plateau_tol=plateau_tol,
        plateau_epochs=cfg.plateau_epochs,
    )


def build_options(o: OptimizerSection):
    if o.name == "isgd":
        return op.ISgdConfig(o.reuse_probability, o.max_reuse_steps)
    if o.name in ("sag", "isag"):
        return op.ISagConfig(o.latest_k, o.warm_start_epochs, o.warm_start_reuse)
    if o.name == "sra":
        return op.SraConfig(o.sra_decay, o.warm_start_epochs, o.warm_start_reuse)
    return None


# -- CSV persistence


def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, (float, np.floating)) else str(value)


def _write_rows(path, fields, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(getattr(r, f)) for f in fields])


def write_trace_csv(path, trace, wall_clock: bool = True) -> None:
    if not wall_clock:
        trace = [op.TraceRecord(**{**r.__dict__, "wall_ms": 0.0}) for r in trace]
    _write_rows(path, op.TraceRecord.FIELDS, trace)


def write_eval_csv(path, evals, wall_clock: bool = True) -> None:
    if not wall_clock:
        evals = [op.EvalRecord(**{**r.__dict__, "wall_ms": 0.0}) for r in evals]
    _write_rows(path, op.EvalRecord.FIELDS, evals)


def _read_rows(path, cls, ints, strs=()):
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != cls.FIELDS:
            raise ValueError(f"{path}: expected columns {','.join(cls.FIELDS)}")
        out = []
        for row in reader:
            kw = {}
            for k, v in row.items():
                kw[k] = v if k in strs else int(v) if k in ints else float(v)
            out.append(cls(**kw))
    return out


def read_trace_csv(path) -> list:
    return _read_rows(path, op.TraceRecord, ("step", "model_grad_evals", "logp_evals"), ("step_kind",))


def read_eval_csv(path) -> list:
    return _read_rows(path, op.EvalRecord, ("step", "model_grad_evals", "logp_evals"))


def _write_json(path, doc):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n")


# -- fit


def _posterior_mean(params, n_draws=4096, seed=0):
    """Mean of ``z`` under the approximation; exact on identity coordinates."""
    eps = np.random.default_rng(seed).standard_normal((n_draws, params.dim))
    mean = ap.forward(params, eps).mean(axis=0)
    ident = params.coordinate_transform == "identity"
    mean[ident] = params.location[ident]
    return mean


def fit(cfg: RunConfig):
    """Run the configured optimizer. Returns ``(RunResult, summary dict)``."""
    target = build_target(cfg)
    params = build_initial_params(cfg, target)
    ocfg = build_optim_config(cfg)
    stop = build_stop_rule(cfg, plateau_tol=cfg.plateau_tol)
    result = op.run_optimizer(cfg.optimizer.name, target, params, ocfg, cfg.seed, stop, build_options(cfg.optimizer))
    eval_eps = np.random.default_rng([cfg.seed, 1]).standard_normal((cfg.eval_samples, params.dim))
    final_elbo = op.evaluate_elbo(target, result.params, eval_eps)
    last = result.trace[-1] if result.trace else None
    summary = {
        "optimizer": cfg.optimizer.display,
        "seed": cfg.seed,
        "final_elbo": final_elbo,
        "posterior_mean": _posterior_mean(result.params).tolist(),
        "location": result.params.location.tolist(),
        "scale": result.params.scale.tolist(),
        "steps": len(result.trace),
        "fresh_steps": sum(r.step_kind == "fresh" for r in result.trace),
        "reuse_steps": sum(r.step_kind == "reuse" for r in result.trace),
        "epochs_completed": result.epochs_completed,
        "model_grad_evals": last.model_grad_evals if last else 0,
        "logp_evals": last.logp_evals if last else 0,
    }
    if cfg.model.kind == "conjugate-normal-known-variance":
        mean, _ = md.conjugate_normal_posterior(target.spec, target.data)
        summary["analytic_posterior_mean"] = mean.tolist()
        w = target.spec["likelihood_weight"]
        if w in (0.0, 1.0):
            summary["log_evidence"] = md.conjugate_normal_log_evidence(target.spec, target.data)
    return result, summary


# -- weight decay


def weight_decay_curves(cfg: WeightDecayConfig) -> dict:
    """Mean factor weight after each consecutive reuse step, per factor size.

    Each replicate draws one fresh sample on a diagonal Gaussian target,
    then takes ``reuse_steps`` Adam steps driven by the importance-sampled
    gradient of that same sample. The recorded weight is the base-density
    ratio ``phi(eps') / phi(eps)`` per factor, averaged over factors.
    All factor sizes see the same random draws.

    Returns ``{factor_size: array (replicates, reuse_steps + 1)}`` where
    column 0 is the fresh step (weight 1).
    """
    spec = md.ModelSpec("conjugate-normal-known-variance", cfg.dim)
    data = md.make_synthetic(spec, np.random.default_rng([cfg.seed, 0]), cfg.n)
    target = md.Target(spec, data)
    batch = md.full_batch(data)
    ecfg = es.EstimatorConfig()
    adam = op.AdamConfig(lr=cfg.lr)
    out = {}
    for size in cfg.factor_sizes:
        rng = np.random.default_rng([cfg.seed, 1])
        w = np.ones((cfg.replicates, cfg.reuse_steps + 1))
        for r in range(cfg.replicates):
            params = ap.make_params(
                transforms=[("identity", cfg.dim)], factor_size=size, location=cfg.init_location, scale=cfg.init_scale
            )
            state = op.AdamState.fresh(2 * cfg.dim, adam)
            grad, cache, _ = es.reparam_gradient(params, target, batch, ecfg, rng)
            for k in range(1, cfg.reuse_steps + 1):
                state, params = op.adam_step(state, params, grad)
                weights, _ = es.importance_weights(cache, params)
                w[r, k] = weights.mean
                grad, _ = es.importance_gradient(cache, params)
        out[size] = w
    return out


# -- benchmark


def smooth(values, window: int) -> np.ndarray:
    """Trailing moving average (shorter windows at the start)."""
    v = np.asarray(values, dtype=float)
    if window <= 1 or v.size == 0:
        return v
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def threshold_from_elbos(elbos, window: int = 3, margin: float = 1.0) -> float:
    """Best smoothed ELBO minus ``margin`` nats."""
    s = smooth(elbos, window)
    s = s[np.isfinite(s)]
    if s.size == 0:
        raise ValueError("no finite ELBO values to set a threshold from")
    return float(s.max() - margin)


def first_crossing(records, threshold: float, window: int = 3):
    """First record whose smoothed ELBO reaches ``threshold``, or None."""
    s = smooth([r.elbo for r in records], window)
    hit = np.flatnonzero(s >= threshold)
    return records[int(hit[0])] if hit.size else None


def crossing_from_csv(baseline_csv, variant_csv, window: int = 3, margin: float = 1.0):
    """Recompute ``(threshold, crossing record or None)`` from persisted evaluation CSVs."""
    reader = read_eval_csv if _is_eval_csv(baseline_csv) else read_trace_csv
    threshold = threshold_from_elbos([r.elbo for r in reader(baseline_csv)], window, margin)
    return threshold, first_crossing(reader(variant_csv), threshold, window)


def _is_eval_csv(path) -> bool:
    with Path(path).open() as fh:
        return fh.readline().strip() == ",".join(op.EvalRecord.FIELDS)


def _scored(result):
    """Records used for thresholds: full-data evaluations when available."""
    return result.evals if result.evals else result.trace


def bench(cfg: BenchConfig) -> dict:
    """Run every variant on one dataset and initialization and compare them.

    The SGD baseline (the first ``sgd`` variant, or an extra run when none
    is listed) sets the threshold and, when ``baseline_plateau_tol`` is
    given, the epoch budget every variant then shares.

    Returns a dict with ``threshold``, ``budget_epochs``, ``rows`` (one per
    variant) and ``results`` (label -> RunResult, baseline included).
    """
    target = build_target(cfg)
    params = build_initial_params(cfg, target)
    ocfg = build_optim_config(cfg)
    results = {}

    base_variant = next((v for v in cfg.variants if v.name == "sgd"), None)
    base_label = base_variant.display if base_variant else "sgd-baseline"
    baseline = op.run_optimizer(
        "sgd", target, params, ocfg, cfg.seed, build_stop_rule(cfg, plateau_tol=cfg.baseline_plateau_tol)
    )
    results[base_label] = baseline
    budget = baseline.epochs_completed if cfg.baseline_plateau_tol is not None else cfg.epochs
    threshold = threshold_from_elbos([r.elbo for r in _scored(baseline)], cfg.smooth_window, cfg.threshold_margin)

    for v in cfg.variants:
        if v is base_variant:
            continue
        results[v.display] = op.run_optimizer(
            v.name, target, params, ocfg, cfg.seed, build_stop_rule(cfg, epochs=budget), build_options(v)
        )

    rows = []
    labels = [v.display for v in cfg.variants] + ([] if base_variant else [base_label])
    for label in labels:
        res = results[label]
        rec = first_crossing(_scored(res), threshold, cfg.smooth_window)
        finite = smooth([r.elbo for r in _scored(res)], cfg.smooth_window)
        finite = finite[np.isfinite(finite)]
        rows.append(
            {
                "variant": label,
                "reached": rec is not None,
                "step_to_threshold": rec.step if rec else None,
                "model_grad_evals_to_threshold": rec.model_grad_evals if rec else None,
                "logp_evals_to_threshold": rec.logp_evals if rec else None,
                "wall_ms_to_threshold": rec.wall_ms if rec else None,
                "best_smoothed_elbo": float(finite.max()) if finite.size else None,
                "baseline": label == base_label,
            }
        )
    return {"threshold": threshold, "budget_epochs": budget, "baseline": base_label, "rows": rows, "results": results}


def rank_rows(rows, metric: str = "model_grad_evals_to_threshold") -> list[str]:
    """Variant labels from best to worst.

    Variants that reached the threshold come first, fewest evaluations
    first; the rest follow by how close their best smoothed ELBO came.
    """

    def key(row):
        if row["reached"]:
            return (0, row[metric])
        best = row["best_smoothed_elbo"]
        return (1, -best if best is not None else np.inf)

    return [r["variant"] for r in sorted(rows, key=key)]


_TABLE_FIELDS = (
    "variant",
    "reached",
    "step_to_threshold",
    "model_grad_evals_to_threshold",
    "logp_evals_to_threshold",
    "wall_ms_to_threshold",
    "best_smoothed_elbo",
    "baseline",
)


def _write_table(path, rows, wall_clock):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_TABLE_FIELDS)
        for row in rows:
            vals = []
            for f in _TABLE_FIELDS:
                v = row[f]
                if f == "wall_ms_to_threshold" and not wall_clock and v is not None:
                    v = 0.0
                vals.append("" if v is None else _fmt(v))
            w.writerow(vals)


# -- commands


def _finite_or_raise(values, what):
    if not np.all(np.isfinite(values)):
        raise FloatingPointError(f"non-finite {what}")


def _run_command(fn, path, command, seed, out, log):
    try:
        cfg = load_config(path, command, seed, out)
    except ConfigError as exc:
        log(f"config error: {exc}")
        return EXIT_CONFIG
    try:
        return fn(cfg, log)
    except (ValueError, FloatingPointError) as exc:
        log(f"runtime error: {exc}")
        return EXIT_RUNTIME


def _fit(cfg: RunConfig, log) -> int:
    out = Path(cfg.out)
    result, summary = fit(cfg)
    write_trace_csv(out / "trace.csv", result.trace, cfg.wall_clock)
    if result.evals:
        write_eval_csv(out / "evals.csv", result.evals, cfg.wall_clock)
    _write_json(out / "summary.json", summary)
    _finite_or_raise([summary["final_elbo"]] + [r.elbo for r in result.trace], "ELBO")
    log(f"final ELBO {summary['final_elbo']:.6g} after {summary['steps']} steps; wrote {out}")
    return EXIT_OK


def _weight_decay(cfg: WeightDecayConfig, log) -> int:
    out = Path(cfg.out)
    curves = weight_decay_curves(cfg)
    table = {}
    for size, w in curves.items():
        mean = w.mean(axis=0)
        se = w.std(axis=0, ddof=1) / np.sqrt(w.shape[0]) if w.shape[0] > 1 else np.zeros_like(mean)
        path = out / f"weights_factor_{size}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(("reuse_step", "mean_weight", "std_error"))
            for k in range(w.shape[1]):
                wr.writerow((k, _fmt(mean[k]), _fmt(se[k])))
        table[str(size)] = mean.tolist()
    sizes = sorted(curves)
    means = np.array([curves[s].mean(axis=0) for s in sizes])
    monotone = bool(np.all(np.diff(means, axis=0) <= 0))
    _write_json(
        out / "summary.json",
        {
            "seed": cfg.seed,
            "factor_sizes": sizes,
            "replicates": cfg.replicates,
            "lr": cfg.lr,
            "mean_weight": table,
            "non_increasing_in_factor_size": monotone,
        },
    )
    log(f"weights for factor sizes {sizes}; non-increasing in size: {monotone}; wrote {out}")
    return EXIT_OK


def _bench(cfg: BenchConfig, log) -> int:
    out = Path(cfg.out)
    report = bench(cfg)
    for label, res in report["results"].items():
        write_trace_csv(out / f"trace_{label}.csv", res.trace, cfg.wall_clock)
        write_eval_csv(out / f"evals_{label}.csv", res.evals, cfg.wall_clock)
    _write_table(out / "comparison.csv", report["rows"], cfg.wall_clock)
    _write_json(
        out / "summary.json",
        {
            "seed": cfg.seed,
            "threshold": report["threshold"],
            "threshold_margin": cfg.threshold_margin,
            "smooth_window": cfg.smooth_window,
            "baseline": report["baseline"],
            "budget_epochs": report["budget_epochs"],
            "rows": report["rows"],
            "final_location": {k: r.params.location.tolist() for k, r in report["results"].items()},
            "final_scale": {k: r.params.scale.tolist() for k, r in report["results"].items()},
        },
    )
    for row in report["rows"]:
        log(
            f"{row['variant']:>14}  reached={row['reached']!s:5}  "
            f"grad_evals={row['model_grad_evals_to_threshold']}  logp_evals={row['logp_evals_to_threshold']}"
        )
    missed = [r["variant"] for r in report["rows"] if not r["reached"]]
    if missed:
        log(f"threshold {report['threshold']:.6g} not reached by: {', '.join(missed)}")
        return EXIT_THRESHOLD
    return EXIT_OK


def cmd_fit(config_path, seed=None, out=None, log=print) -> int:
    return _run_command(_fit, config_path, "fit", seed, out, log)


def cmd_weight_decay(config_path, seed=None, out=None, log=print) -> int:
    return _run_command(_weight_decay, config_path, "weight-decay", seed, out, log)


def cmd_bench(config_path, seed=None, out=None, log=print) -> int:
    return _run_command(_bench, config_path, "bench", seed, out, log)
