"""Differentiable target models with mini-batch-scaled log-joints.

Every model evaluates

    log p(x_b, z) = w * (N / |b|) * sum_{i in b} log p(x_i | z) + log p(z)

where ``w`` is the ``likelihood_weight`` hyperparameter (1 by default, 0 for
a prior-only target). ``z`` may carry leading sample axes; values come back
with shape ``z.shape[:-1]`` and gradients with the shape of ``z``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammaln, logsumexp

__all__ = [
    "MODEL_KINDS",
    "ModelSpec",
    "Dataset",
    "MiniBatch",
    "make_batches",
    "full_batch",
    "log_joint",
    "grad_log_joint",
    "value_and_grad",
    "make_synthetic",
    "default_transforms",
    "conjugate_normal_posterior",
    "conjugate_normal_log_evidence",
    "EvalCounters",
    "Target",
    "write_csv",
    "read_csv",
]

_LOG_2PI = np.log(2.0 * np.pi)

MODEL_KINDS = (
    "diag-gaussian-conjugate",
    "bayes-linear-regression",
    "poisson-gamma",
    "gmm",
    "conjugate-normal-known-variance",
)

_DEFAULT_HYPER = {
    "diag-gaussian-conjugate": {"prior_var": 1.0, "gamma_shape": 1.0, "gamma_rate": 1.0},
    "bayes-linear-regression": {"prior_var": 1.0, "gamma_shape": 1.0, "gamma_rate": 1.0},
    "poisson-gamma": {"gamma_shape": 1.0, "gamma_rate": 1.0},
    "gmm": {"num_components": 5, "prior_var": 25.0, "obs_var": 1.0, "dirichlet_alpha": 1.0},
    "conjugate-normal-known-variance": {"prior_mean": 0.0, "prior_var": 1.0, "obs_var": 1.0},
}


@dataclass(frozen=True)
class ModelSpec:
    """Model kind, data dimension and hyperparameters.

    Missing hyperparameters are filled from per-kind defaults; unknown ones
    raise. ``likelihood_weight`` is accepted by every kind.
    """

    kind: str
    dim: int = 1
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        hyper = dict(_DEFAULT_HYPER[self.kind])
        hyper["likelihood_weight"] = 1.0
        unknown = set(self.hyperparameters) - set(hyper)
        if unknown:
            raise ValueError(f"unknown hyperparameters for {self.kind}: {sorted(unknown)}")
        hyper.update(self.hyperparameters)
        if self.kind == "gmm":
            hyper["num_components"] = int(hyper["num_components"])
            if hyper["num_components"] < 2:
                raise ValueError("gmm needs num_components >= 2")
        object.__setattr__(self, "hyperparameters", hyper)

    def __getitem__(self, key):
        return self.hyperparameters[key]

    @property
    def latent_dim(self) -> int:
        d = self.dim
        if self.kind == "diag-gaussian-conjugate":
            return 2 * d
        if self.kind == "bayes-linear-regression":
            return d + 1
        if self.kind == "poisson-gamma":
            return d
        if self.kind == "gmm":
            k = self["num_components"]
            return k * d + k - 1
        return d


@dataclass(frozen=True, eq=False)
class Dataset:
    """``x`` holds features (or observations), ``y`` optional targets/counts."""

    x: np.ndarray
    y: np.ndarray | None = None
    ground_truth: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] < 1:
            raise ValueError("dataset needs at least one record")
        if not np.all(np.isfinite(x)):
            raise ValueError("dataset contains non-finite entries")
        object.__setattr__(self, "x", x)
        if self.y is not None:
            y = np.asarray(self.y, dtype=float).reshape(-1)
            if y.shape[0] != x.shape[0]:
                raise ValueError("x and y disagree on the number of records")
            if not np.all(np.isfinite(y)):
                raise ValueError("dataset contains non-finite entries")
            object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True, eq=False)
class MiniBatch:
    indices: np.ndarray
    batch_id: int = 0

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.intp).reshape(-1)
        if idx.size == 0:
            raise ValueError("mini-batch must not be empty")
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return self.indices.size


def make_batches(n: int, batch_size: int) -> list[MiniBatch]:
    """Consecutive disjoint mini-batches; the last one may be smaller."""
    if n < 1 or batch_size < 1:
        raise ValueError("n and batch_size must be >= 1")
    return [MiniBatch(np.arange(s, min(s + batch_size, n)), b) for b, s in enumerate(range(0, n, batch_size))]


def full_batch(data: Dataset) -> MiniBatch:
    return MiniBatch(np.arange(data.n), -1)


def _as_2d(z):
    z = np.asarray(z, dtype=float)
    return z.reshape(-1, z.shape[-1]), z.shape[:-1]


def _require_positive(values, offset, what):
    bad = ~(values > 0)
    if bad.any():
        col = int(np.argwhere(bad)[0][-1])
        raise ValueError(f"coordinate {offset + col}: {what} must be positive")


def _gamma_logpdf(t, a, b):
    return a * np.log(b) - gammaln(a) + (a - 1.0) * np.log(t) - b * t


def _normal_logpdf(x, mean, var):
    return -0.5 * (_LOG_2PI + np.log(var)) - 0.5 * (x - mean) ** 2 / var


# Per-kind kernels: (spec, data, batch indices, z (M, L)) -> (loglik sum, grad), (logprior, grad)


def _diag_gaussian(spec, data, idx, z, need_grad):
    d = spec.dim
    m, tau = z[:, :d], z[:, d:]
    _require_positive(tau, d, "precision")
    xb = data.x[idx]
    n = xb.shape[0]
    s1 = xb.sum(axis=0)
    s2 = (xb * xb).sum(axis=0)
    sq = s2 - 2.0 * m * s1 + n * m * m
    ll = np.sum(0.5 * n * np.log(tau) - 0.5 * n * _LOG_2PI - 0.5 * tau * sq, axis=1)
    a, b, pv = spec["gamma_shape"], spec["gamma_rate"], spec["prior_var"]
    lp = np.sum(_normal_logpdf(m, 0.0, pv), axis=1) + np.sum(_gamma_logpdf(tau, a, b), axis=1)
    if not need_grad:
        return ll, None, lp, None
    gll = np.concatenate([tau * (s1 - n * m), 0.5 * n / tau - 0.5 * sq], axis=1)
    glp = np.concatenate([-m / pv, (a - 1.0) / tau - b], axis=1)
    return ll, gll, lp, glp


def _linear_regression(spec, data, idx, z, need_grad):
    d = spec.dim
    w, tau = z[:, :d], z[:, d]
    _require_positive(tau[:, None], d, "precision")
    xb, yb = data.x[idx], data.y[idx]
    n = xb.shape[0]
    resid = yb[None, :] - w @ xb.T  # (M, n)
    rss = np.sum(resid * resid, axis=1)
    ll = 0.5 * n * np.log(tau) - 0.5 * n * _LOG_2PI - 0.5 * tau * rss
    a, b, pv = spec["gamma_shape"], spec["gamma_rate"], spec["prior_var"]
    lp = np.sum(_normal_logpdf(w, 0.0, pv), axis=1) + _gamma_logpdf(tau, a, b)
    if not need_grad:
        return ll, None, lp, None
    gll = np.concatenate([tau[:, None] * (resid @ xb), (0.5 * n / tau - 0.5 * rss)[:, None]], axis=1)
    glp = np.concatenate([-w / pv, ((a - 1.0) / tau - b)[:, None]], axis=1)
    return ll, gll, lp, glp


def _poisson_gamma(spec, data, idx, z, need_grad):
    _require_positive(z, 0, "rate")
    counts = data.x[idx]
    # evaluated record by record, as a black-box likelihood would be, so
    # the cost grows with the batch instead of collapsing to sufficient statistics
    per_record = counts[None] * np.log(z)[:, None] - z[:, None] - gammaln(counts + 1.0)[None]
    ll = per_record.sum(axis=(1, 2))
    a, b = spec["gamma_shape"], spec["gamma_rate"]
    lp = np.sum(_gamma_logpdf(z, a, b), axis=1)
    if not need_grad:
        return ll, None, lp, None
    gll = (counts[None] / z[:, None] - 1.0).sum(axis=1)
    return ll, gll, lp, (a - 1.0) / z - b


def _gmm(spec, data, idx, z, need_grad):
    d, k = spec.dim, spec["num_components"]
    mu = z[:, : k * d].reshape(-1, k, d)
    pi_head = z[:, k * d :]
    _require_positive(pi_head, k * d, "mixture weight")
    pi_last = 1.0 - pi_head.sum(axis=1)
    _require_positive(pi_last[:, None], k * d + k - 2, "implied last mixture weight")
    pi = np.concatenate([pi_head, pi_last[:, None]], axis=1)  # (M, K)
    xb = data.x[idx]
    v = spec["obs_var"]
    diff = xb[None, :, None, :] - mu[:, None, :, :]  # (M, n, K, D)
    comp = -0.5 * np.sum(diff * diff, axis=-1) / v - 0.5 * d * (_LOG_2PI + np.log(v))
    logits = np.log(pi)[:, None, :] + comp  # (M, n, K)
    lse = logsumexp(logits, axis=2)
    ll = np.sum(lse, axis=1)
    alpha, pv = spec["dirichlet_alpha"], spec["prior_var"]
    lp = (
        np.sum(_normal_logpdf(mu, 0.0, pv), axis=(1, 2))
        + gammaln(k * alpha)
        - k * gammaln(alpha)
        + (alpha - 1.0) * np.sum(np.log(pi), axis=1)
    )
    if not need_grad:
        return ll, None, lp, None
    resp = np.exp(logits - lse[:, :, None])  # (M, n, K)
    g_mu = np.einsum("mnk,mnkd->mkd", resp, diff) / v
    r_sum = resp.sum(axis=1)  # (M, K)
    g_pi = r_sum[:, :-1] / pi_head - (r_sum[:, -1] / pi_last)[:, None]
    gll = np.concatenate([g_mu.reshape(-1, k * d), g_pi], axis=1)
    glp = np.concatenate(
        [(-mu / pv).reshape(-1, k * d), (alpha - 1.0) * (1.0 / pi_head - (1.0 / pi_last)[:, None])], axis=1
    )
    return ll, gll, lp, glp


def _conjugate_normal(spec, data, idx, z, need_grad):
    xb = data.x[idx]
    n = xb.shape[0]
    v = spec["obs_var"]
    s1 = xb.sum(axis=0)
    s2 = (xb * xb).sum(axis=0)
    sq = s2 - 2.0 * z * s1 + n * z * z
    ll = np.sum(-0.5 * n * (_LOG_2PI + np.log(v)) - 0.5 * sq / v, axis=1)
    m0, pv = spec["prior_mean"], spec["prior_var"]
    lp = np.sum(_normal_logpdf(z, m0, pv), axis=1)
    if not need_grad:
        return ll, None, lp, None
    return ll, (s1 - n * z) / v, lp, -(z - m0) / pv


_KERNELS = {
    "diag-gaussian-conjugate": _diag_gaussian,
    "bayes-linear-regression": _linear_regression,
    "poisson-gamma": _poisson_gamma,
    "gmm": _gmm,
    "conjugate-normal-known-variance": _conjugate_normal,
}


def _evaluate(spec, data, batch, z, need_grad):
    z2, lead = _as_2d(z)
    if z2.shape[1] != spec.latent_dim:
        raise ValueError(f"z has dimension {z2.shape[1]}, model expects {spec.latent_dim}")
    idx = batch.indices
    if idx.min() < 0 or idx.max() >= data.n:
        raise IndexError("mini-batch indices out of range")
    ll, gll, lp, glp = _KERNELS[spec.kind](spec, data, idx, z2, need_grad)
    scale = spec["likelihood_weight"] * data.n / idx.size
    value = (scale * ll + lp).reshape(lead)
    if not need_grad:
        return value, None
    return value, (scale * gll + glp).reshape(np.shape(z))


def log_joint(spec: ModelSpec, data: Dataset, batch: MiniBatch, z) -> np.ndarray:
    """Mini-batch-scaled ``log p(x, z)``; a scalar for a single ``z``."""
    value, _ = _evaluate(spec, data, batch, z, False)
    return value[()] if value.ndim == 0 else value


def grad_log_joint(spec: ModelSpec, data: Dataset, batch: MiniBatch, z) -> np.ndarray:
    """Analytic ``d/dz`` of :func:`log_joint`."""
    return _evaluate(spec, data, batch, z, True)[1]


def value_and_grad(spec: ModelSpec, data: Dataset, batch: MiniBatch, z):
    value, grad = _evaluate(spec, data, batch, z, True)
    return (value[()] if value.ndim == 0 else value), grad


def default_transforms(spec: ModelSpec) -> list[tuple[str, int]]:
    """Constraining transform segments matching the model's latent layout."""
    d = spec.dim
    if spec.kind == "diag-gaussian-conjugate":
        return [("identity", d), ("softplus", d)]
    if spec.kind == "bayes-linear-regression":
        return [("identity", d), ("softplus", 1)]
    if spec.kind == "poisson-gamma":
        return [("softplus", d)]
    if spec.kind == "gmm":
        k = spec["num_components"]
        return [("identity", k * d), ("stick_breaking", k - 1)]
    return [("identity", d)]


def make_synthetic(spec: ModelSpec, rng: np.random.Generator, n: int, dim: int | None = None) -> Dataset:
    """Draw ground-truth latents from the prior, then ``n`` records from the likelihood.

    ``dim`` defaults to ``spec.dim`` and must agree with it when given.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    d = spec.dim if dim is None else dim
    if d != spec.dim:
        raise ValueError(f"dim {d} does not match spec.dim {spec.dim}")
    kind = spec.kind
    if kind == "diag-gaussian-conjugate":
        m = rng.normal(0.0, np.sqrt(spec["prior_var"]), d)
        tau = rng.gamma(spec["gamma_shape"], 1.0 / spec["gamma_rate"], d)
        x = m + rng.standard_normal((n, d)) / np.sqrt(tau)
        return Dataset(x, None, {"mean": m, "precision": tau})
    if kind == "bayes-linear-regression":
        w = rng.normal(0.0, np.sqrt(spec["prior_var"]), d)
        tau = rng.gamma(spec["gamma_shape"], 1.0 / spec["gamma_rate"])
        x = rng.standard_normal((n, d))
        y = x @ w + rng.standard_normal(n) / np.sqrt(tau)
        return Dataset(x, y, {"weights": w, "precision": np.array([tau])})
    if kind == "poisson-gamma":
        rate = rng.gamma(spec["gamma_shape"], 1.0 / spec["gamma_rate"], d)
        counts = rng.poisson(rate, (n, d)).astype(float)
        return Dataset(counts, None, {"rate": rate})
    if kind == "gmm":
        k = spec["num_components"]
        means = rng.normal(0.0, np.sqrt(spec["prior_var"]), (k, d))
        weights = rng.dirichlet(np.full(k, spec["dirichlet_alpha"]))
        labels = rng.choice(k, size=n, p=weights)
        x = means[labels] + rng.standard_normal((n, d)) * np.sqrt(spec["obs_var"])
        return Dataset(x, None, {"means": means, "weights": weights, "labels": labels})
    theta = rng.normal(spec["prior_mean"], np.sqrt(spec["prior_var"]), d)
    x = theta + rng.standard_normal((n, d)) * np.sqrt(spec["obs_var"])
    return Dataset(x, None, {"mean": theta})


def conjugate_normal_posterior(spec: ModelSpec, data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Exact posterior mean and variance per coordinate for the known-variance model."""
    if spec.kind != "conjugate-normal-known-variance":
        raise ValueError("closed-form posterior only exists for conjugate-normal-known-variance")
    w = spec["likelihood_weight"]
    prec = 1.0 / spec["prior_var"] + w * data.n / spec["obs_var"]
    mean = (spec["prior_mean"] / spec["prior_var"] + w * data.x.sum(axis=0) / spec["obs_var"]) / prec
    return mean, np.full(spec.dim, 1.0 / prec)


def conjugate_normal_log_evidence(spec: ModelSpec, data: Dataset) -> float:
    """Exact ``log p(x)`` for the known-variance model (``likelihood_weight`` 1 or 0)."""
    if spec.kind != "conjugate-normal-known-variance":
        raise ValueError("closed-form evidence only exists for conjugate-normal-known-variance")
    w = spec["likelihood_weight"]
    if w == 0:
        return 0.0
    if w != 1:
        raise ValueError("closed-form evidence needs likelihood_weight 0 or 1")
    n, v, pv = data.n, spec["obs_var"], spec["prior_var"]
    r = data.x - spec["prior_mean"]
    s1 = r.sum(axis=0)
    s2 = (r * r).sum(axis=0)
    per_dim = (
        -0.5 * n * (_LOG_2PI + np.log(v))
        - 0.5 * np.log1p(n * pv / v)
        - 0.5 * (s2 / v - s1 * s1 * pv / (v * (v + n * pv)))
    )
    return float(np.sum(per_dim))


@dataclass
class EvalCounters:
    """Cumulative per-sample model evaluations."""

    grad_evals: int = 0
    logp_evals: int = 0

    def snapshot(self) -> "EvalCounters":
        return EvalCounters(self.grad_evals, self.logp_evals)


class Target:
    """A model bound to its data, counting every model evaluation.

    A call with ``M`` samples of ``z`` counts as ``M`` evaluations.
    """

    def __init__(self, spec: ModelSpec, data: Dataset):
        if spec.kind in ("bayes-linear-regression",) and data.y is None:
            raise ValueError("bayes-linear-regression needs targets")
        self.spec = spec
        self.data = data
        self.counters = EvalCounters()

    @property
    def n(self) -> int:
        return self.data.n

    @property
    def latent_dim(self) -> int:
        return self.spec.latent_dim

    def _count(self, z):
        return int(np.prod(np.shape(z)[:-1], dtype=int))

    def log_joint(self, batch: MiniBatch, z):
        out = log_joint(self.spec, self.data, batch, z)
        self.counters.logp_evals += self._count(z)
        return out

    def grad_log_joint(self, batch: MiniBatch, z):
        out = grad_log_joint(self.spec, self.data, batch, z)
        self.counters.grad_evals += self._count(z)
        return out

    def value_and_grad(self, batch: MiniBatch, z):
        out = value_and_grad(self.spec, self.data, batch, z)
        m = self._count(z)
        self.counters.grad_evals += m
        self.counters.logp_evals += m
        return out


def write_csv(data: Dataset, path) -> None:
    """Header row ``x0..x{D-1}[,y]``; one record per line."""
    path = Path(path)
    header = [f"x{j}" for j in range(data.dim)]
    if data.y is not None:
        header.append("y")
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n):
            row = [repr(float(v)) for v in data.x[i]]
            if data.y is not None:
                row.append(repr(float(data.y[i])))
            writer.writerow(row)


def read_csv(path) -> Dataset:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in row] for row in reader], dtype=float)
    if rows.size == 0:
        raise ValueError(f"{path}: no records")
    if header and header[-1] == "y":
        return Dataset(rows[:, :-1], rows[:, -1])
    return Dataset(rows)
