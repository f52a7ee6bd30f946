"""Stochastic optimizers over approximation parameters.

All runs maximize the ELBO with Adam on mini-batches and differ only in
which gradient is handed to Adam:

* ``sgd_run``   one fresh estimate per mini-batch
* ``isgd_run``  a fresh estimate followed by a random number of
  importance-sampled reuse steps on the same mini-batch
* ``sag_run``   the mean of a table of stored per-batch estimates
* ``isag_run``  the table re-weighted and transformed to the current
  parameters by importance sampling
* ``sra_run``   an exponential running average of fresh estimates

Every run is deterministic given its seed. Randomness is split into
independent streams for model sampling, reuse decisions, batch order and
ELBO evaluation, so that the reuse coin flips never perturb the samples.
"""
from __future__ import annotations

import time
from collections import OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np

from . import approximation as ap
from .approximation import FactorizedApproxParams
from .estimators import (
    EstimatorConfig,
    ReuseRefused,
    cache_elbo,
    importance_elbo,
    importance_gradient,
    importance_score_gradient,
    reparam_gradient,
    score_gradient,
)
from .models import Target, full_batch, log_joint, make_batches

__all__ = [
    "AdamConfig",
    "AdamState",
    "adam_step",
    "OptimConfig",
    "StopRule",
    "ISgdConfig",
    "ISagConfig",
    "SraConfig",
    "TraceRecord",
    "EvalRecord",
    "RunResult",
    "evaluate_elbo",
    "sgd_run",
    "isgd_run",
    "sag_run",
    "isag_run",
    "sra_run",
    "run_optimizer",
    "OPTIMIZERS",
]


@dataclass(frozen=True)
class AdamConfig:
    """Adam hyperparameters.

    With ``decay_steps`` set, the step size after ``t`` updates is
    ``lr * (1 + t / decay_steps) ** -decay_power``; otherwise it is constant.
    """

    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_steps: float | None = None
    decay_power: float = 0.5

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.decay_steps is not None and self.decay_steps <= 0:
            raise ValueError("decay_steps must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")


@dataclass(frozen=True, eq=False)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_stabilizer: float = 1e-8
    decay_steps: float | None = None
    decay_power: float = 0.5

    @classmethod
    def fresh(cls, size: int, cfg: AdamConfig = AdamConfig()) -> "AdamState":
        return cls(
            np.zeros(size), np.zeros(size), 0, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.decay_steps, cfg.decay_power
        )

    def current_lr(self) -> float:
        if self.decay_steps is None:
            return self.learning_rate
        return self.learning_rate * (1.0 + self.step_count / self.decay_steps) ** -self.decay_power


def adam_step(state: AdamState, params: FactorizedApproxParams, grad) -> tuple[AdamState, FactorizedApproxParams]:
    """One bias-corrected Adam ascent step; returns new state and parameters."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.first_moment.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match optimizer state {state.first_moment.shape}")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * (grad * grad)
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_flat = params.flat() + state.current_lr() * m_hat / (np.sqrt(v_hat) + state.epsilon_stabilizer)
    return replace(state, first_moment=m, second_moment=v, step_count=t), params.with_flat(new_flat)


@dataclass(frozen=True)
class OptimConfig:
    """Settings shared by every optimizer.

    ``eval_every`` is the number of fresh steps between full-data ELBO
    evaluations (0 disables them); evaluations reuse one fixed set of
    ``eval_samples`` base draws so that all runs are scored by the same
    function.
    """

    batch_size: int = 100
    estimator: str = "reparam"
    estimator_cfg: EstimatorConfig = field(default_factory=EstimatorConfig)
    adam: AdamConfig = field(default_factory=AdamConfig)
    eval_every: int = 0
    eval_samples: int = 64

    def __post_init__(self):
        if self.estimator not in ("reparam", "score"):
            raise ValueError("estimator must be 'reparam' or 'score'")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.eval_every < 0 or self.eval_samples < 1:
            raise ValueError("eval_every must be >= 0 and eval_samples >= 1")


@dataclass(frozen=True)
class StopRule:
    """Epoch budget, optional step cap, and an optional plateau rule on the
    per-epoch mean ELBO (relative improvement below ``plateau_tol`` over
    ``plateau_epochs`` epochs)."""

    epochs: int = 10
    max_steps: int | None = None
    plateau_tol: float | None = None
    plateau_epochs: int = 5

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass(frozen=True)
class ISgdConfig:
    reuse_probability: float = 0.9
    max_reuse_steps: int = 50

    def __post_init__(self):
        if not 0.0 <= self.reuse_probability < 1.0:
            raise ValueError(f"reuse_probability must lie in [0, 1), got {self.reuse_probability}")
        if self.max_reuse_steps < 0:
            raise ValueError("max_reuse_steps must be >= 0")


@dataclass(frozen=True)
class ISagConfig:
    """``latest_k`` bounds the table to the most recently refreshed batches
    (None keeps all). The table is seeded by ``warm_start_epochs`` passes of
    I-SGD with reuse probability ``warm_start_reuse``."""

    latest_k: int | None = None
    warm_start_epochs: int = 1
    warm_start_reuse: float = 0.9

    def __post_init__(self):
        if self.latest_k is not None and self.latest_k < 1:
            raise ValueError("latest_k must be >= 1")
        if self.warm_start_epochs < 0:
            raise ValueError("warm_start_epochs must be >= 0")
        if not 0.0 <= self.warm_start_reuse < 1.0:
            raise ValueError("warm_start_reuse must lie in [0, 1)")


@dataclass(frozen=True)
class SraConfig:
    decay: float = 0.9
    warm_start_epochs: int = 1
    warm_start_reuse: float = 0.9

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ValueError(f"decay must lie in (0, 1), got {self.decay}")
        if self.warm_start_epochs < 0:
            raise ValueError("warm_start_epochs must be >= 0")
        if not 0.0 <= self.warm_start_reuse < 1.0:
            raise ValueError("warm_start_reuse must lie in [0, 1)")


@dataclass(frozen=True)
class TraceRecord:
    step: int
    step_kind: str
    model_grad_evals: int
    logp_evals: int
    wall_ms: float
    elbo: float
    mean_weight: float

    FIELDS = ("step", "step_kind", "model_grad_evals", "logp_evals", "wall_ms", "elbo", "mean_weight")


@dataclass(frozen=True)
class EvalRecord:
    step: int
    model_grad_evals: int
    logp_evals: int
    wall_ms: float
    elbo: float

    FIELDS = ("step", "model_grad_evals", "logp_evals", "wall_ms", "elbo")


@dataclass
class RunResult:
    params: FactorizedApproxParams
    trace: list
    evals: list
    epochs_completed: int = 0


def evaluate_elbo(target: Target, params: FactorizedApproxParams, eps) -> float:
    """Full-data ELBO estimate at fixed base draws ``eps`` (not counted)."""
    z = ap.forward(params, eps)
    try:
        logp = log_joint(target.spec, target.data, full_batch(target.data), z)
    except ValueError:
        # a draw fell outside the model support, e.g. a precision underflowed to 0
        return -np.inf
    return float(np.mean(logp - ap.log_q(params, eps)))


class _Run:
    """Bookkeeping shared by all optimizers: streams, Adam, trace, stopping."""

    def __init__(self, target, params, cfg, seed, stop, callback):
        if params.dim != target.latent_dim:
            raise ValueError(f"approximation has {params.dim} coordinates, model has {target.latent_dim}")
        self.target = target
        self.params = params
        self.cfg = cfg
        self.stop = stop
        self.callback = callback
        self.batches = make_batches(target.n, cfg.batch_size)
        streams = np.random.SeedSequence(seed).spawn(4)
        self.sample_rng, self.decision_rng, self.order_rng, eval_rng = (np.random.default_rng(s) for s in streams)
        self.eval_eps = eval_rng.standard_normal((cfg.eval_samples, params.dim))
        self.adam = AdamState.fresh(2 * params.dim, cfg.adam)
        self.trace: list[TraceRecord] = []
        self.evals: list[EvalRecord] = []
        self.fresh_steps = 0
        self.epoch = 0
        self._base = target.counters.snapshot()
        self._t0 = time.perf_counter()
        self._excluded = 0.0
        self._epoch_elbos: list[float] = []

    # -- clocks and counters
    def _wall_ms(self):
        return (time.perf_counter() - self._t0 - self._excluded) * 1e3

    def _counts(self):
        c = self.target.counters
        return c.grad_evals - self._base.grad_evals, c.logp_evals - self._base.logp_evals

    # -- stopping
    @property
    def out_of_steps(self) -> bool:
        return self.stop.max_steps is not None and len(self.trace) >= self.stop.max_steps

    def _plateaued(self):
        tol, k = self.stop.plateau_tol, self.stop.plateau_epochs
        e = self._epoch_elbos
        if tol is None or len(e) <= k:
            return False
        return (e[-1] - e[-1 - k]) / max(abs(e[-1 - k]), 1e-300) < tol

    def epoch_batches(self, epochs=None):
        """Yield mini-batches epoch by epoch in shuffled order until a stop fires."""
        last = self.stop.epochs if epochs is None else min(self.epoch + epochs, self.stop.epochs)
        while self.epoch < last:
            start, start_eval = len(self.trace), len(self.evals)
            for b in self.order_rng.permutation(len(self.batches)):
                if self.out_of_steps:
                    return
                yield self.batches[b]
            self.epoch += 1
            # full-data evaluations are far less noisy than mini-batch estimates
            elbos = [r.elbo for r in self.evals[start_eval:]] or [r.elbo for r in self.trace[start:]]
            self._epoch_elbos.append(float(np.mean(elbos)) if elbos else np.nan)
            if self._plateaued():
                return

    # -- gradient sources
    def fresh(self, batch):
        self._maybe_eval()
        ecfg = self.cfg.estimator_cfg
        if self.cfg.estimator == "reparam":
            grad, cache, elbo = reparam_gradient(self.params, self.target, batch, ecfg, self.sample_rng)
        else:
            grad, cache = score_gradient(self.params, self.target, batch, ecfg, self.sample_rng)
            elbo = cache_elbo(cache)
        self.fresh_steps += 1
        return grad, cache, elbo

    def reuse(self, cache):
        """Importance-sampled gradient at the current parameters, or None when refused."""
        ecfg = self.cfg.estimator_cfg
        try:
            if self.cfg.estimator == "reparam":
                grad, mean_w = importance_gradient(cache, self.params, ecfg)
            else:
                grad, mean_w = importance_score_gradient(cache, self.params, ecfg)
        except ReuseRefused:
            return None
        if not np.all(np.isfinite(grad)):
            return None
        return grad, mean_w

    # -- stepping and recording
    def step(self, grad, kind, elbo, mean_weight):
        if self.callback is not None:
            self.callback(len(self.trace) + 1, kind, self.params, grad)
        self.adam, self.params = adam_step(self.adam, self.params, grad)
        grad_evals, logp_evals = self._counts()
        self.trace.append(
            TraceRecord(len(self.trace) + 1, kind, grad_evals, logp_evals, self._wall_ms(), float(elbo), float(mean_weight))
        )

    def _maybe_eval(self, force=False):
        every = self.cfg.eval_every
        if not every:
            return
        if not force and self.fresh_steps % every:
            return
        if self.evals and self.evals[-1].step == len(self.trace):
            return
        t = time.perf_counter()
        elbo = evaluate_elbo(self.target, self.params, self.eval_eps)
        self._excluded += time.perf_counter() - t
        grad_evals, logp_evals = self._counts()
        self.evals.append(EvalRecord(len(self.trace), grad_evals, logp_evals, self._wall_ms(), elbo))

    def result(self):
        self._maybe_eval(force=True)
        return RunResult(self.params, self.trace, self.evals, self.epoch)


def _isgd_visit(run: _Run, batch, isgd: ISgdConfig):
    """Fresh step on ``batch`` followed by randomly many reuse steps."""
    grad, cache, elbo = run.fresh(batch)
    run.step(grad, "fresh", elbo, 1.0)
    floor = run.cfg.estimator_cfg.weight_floor
    for _ in range(isgd.max_reuse_steps):
        if run.out_of_steps or not run.decision_rng.random() < isgd.reuse_probability:
            break
        reused = run.reuse(cache)
        if reused is None or reused[1] < floor:
            break
        run.step(reused[0], "reuse", importance_elbo(cache, run.params), reused[1])
    return grad, cache


def sgd_run(
    target: Target,
    approx_init: FactorizedApproxParams,
    cfg: OptimConfig = OptimConfig(),
    seed=0,
    stop: StopRule = StopRule(),
    callback=None,
) -> RunResult:
    """Plain mini-batch SGD (with Adam): one fresh gradient per mini-batch."""
    run = _Run(target, approx_init, cfg, seed, stop, callback)
    for batch in run.epoch_batches():
        grad, _, elbo = run.fresh(batch)
        run.step(grad, "fresh", elbo, 1.0)
    return run.result()


def isgd_run(
    target: Target,
    approx_init: FactorizedApproxParams,
    cfg: OptimConfig = OptimConfig(),
    isgd: ISgdConfig = ISgdConfig(),
    seed=0,
    stop: StopRule = StopRule(),
    callback=None,
) -> RunResult:
    """Importance-sampled SGD.

    After each fresh step the cached samples are reused with probability
    ``reuse_probability`` for another step; a refused or exhausted cache
    (weight above the ceiling or mean weight below the floor) moves on to
    the next mini-batch.
    """
    run = _Run(target, approx_init, cfg, seed, stop, callback)
    for batch in run.epoch_batches():
        _isgd_visit(run, batch, isgd)
    return run.result()


def _warm_start(run: _Run, epochs, reuse_probability, table):
    isgd = ISgdConfig(reuse_probability)
    for batch in run.epoch_batches(epochs):
        table[batch.batch_id] = _isgd_visit(run, batch, isgd)
        table.move_to_end(batch.batch_id)


def _trim(table, latest_k):
    while latest_k is not None and len(table) > latest_k:
        table.popitem(last=False)


def sag_run(
    target: Target,
    approx_init: FactorizedApproxParams,
    cfg: OptimConfig = OptimConfig(),
    sag: ISagConfig = ISagConfig(),
    seed=0,
    stop: StopRule = StopRule(),
    callback=None,
) -> RunResult:
    """Stochastic average gradient over a table of per-batch estimates.

    Each per-batch estimate is already scaled to the full data set, so the
    step direction is the mean over the table. Stale entries are used as is.
    """
    run = _Run(target, approx_init, cfg, seed, stop, callback)
    table: OrderedDict = OrderedDict()
    _warm_start(run, sag.warm_start_epochs, sag.warm_start_reuse, table)
    _trim(table, sag.latest_k)
    for batch in run.epoch_batches():
        grad, cache, elbo = run.fresh(batch)
        table[batch.batch_id] = (grad, cache)
        table.move_to_end(batch.batch_id)
        _trim(table, sag.latest_k)
        total = np.zeros_like(grad)
        for g, _ in table.values():
            total = total + g
        run.step(total / len(table), "fresh", elbo, 1.0)
    return run.result()


def isag_run(
    target: Target,
    approx_init: FactorizedApproxParams,
    cfg: OptimConfig = OptimConfig(),
    sag: ISagConfig = ISagConfig(),
    seed=0,
    stop: StopRule = StopRule(),
    callback=None,
) -> RunResult:
    """SAG whose historical entries are recomputed from their sample caches.

    The current batch contributes a fresh estimate; every other retained
    batch contributes its importance-sampled gradient at the current
    parameters, which shrinks towards zero as its cache goes stale. A
    refused historical entry contributes zero. The sum is divided by the
    number of retained batches.
    """
    run = _Run(target, approx_init, cfg, seed, stop, callback)
    table: OrderedDict = OrderedDict()
    _warm_start(run, sag.warm_start_epochs, sag.warm_start_reuse, table)
    _trim(table, sag.latest_k)
    for batch in run.epoch_batches():
        grad, cache, elbo = run.fresh(batch)
        table[batch.batch_id] = (grad, cache)
        table.move_to_end(batch.batch_id)
        _trim(table, sag.latest_k)
        total = np.zeros_like(grad)
        weights = []
        for bid, (_, old) in table.items():
            if bid == batch.batch_id:
                total = total + grad
                continue
            reused = run.reuse(old)
            if reused is None:
                weights.append(0.0)
                continue
            total = total + reused[0]
            weights.append(reused[1])
        run.step(total / len(table), "fresh", elbo, float(np.mean(weights)) if weights else 1.0)
    return run.result()


def sra_run(
    target: Target,
    approx_init: FactorizedApproxParams,
    cfg: OptimConfig = OptimConfig(),
    sra: SraConfig = SraConfig(),
    seed=0,
    stop: StopRule = StopRule(),
    callback=None,
) -> RunResult:
    """Stochastic running average: ``g <- decay * g + (1 - decay) * fresh``.

    With a warm start the average begins at the mean of the warm-start
    fresh estimates; otherwise it begins at zero.
    """
    run = _Run(target, approx_init, cfg, seed, stop, callback)
    table: OrderedDict = OrderedDict()
    _warm_start(run, sra.warm_start_epochs, sra.warm_start_reuse, table)
    g_avg = np.zeros(2 * approx_init.dim)
    if table:
        g_avg = np.mean([g for g, _ in table.values()], axis=0)
    for batch in run.epoch_batches():
        grad, _, elbo = run.fresh(batch)
        g_avg = sra.decay * g_avg + (1.0 - sra.decay) * grad
        run.step(g_avg, "fresh", elbo, 1.0)
    return run.result()


OPTIMIZERS = {"sgd": sgd_run, "isgd": isgd_run, "sag": sag_run, "isag": isag_run, "sra": sra_run}


def run_optimizer(name: str, target, approx_init, cfg, seed, stop, options=None, callback=None) -> RunResult:
    """Dispatch by name; ``options`` is the optimizer-specific config (or None)."""
    if name not in OPTIMIZERS:
        raise ValueError(f"unknown optimizer {name!r}; expected one of {sorted(OPTIMIZERS)}")
    fn = OPTIMIZERS[name]
    if name == "sgd":
        return fn(target, approx_init, cfg, seed=seed, stop=stop, callback=callback)
    if options is None:
        options = {"isgd": ISgdConfig, "sag": ISagConfig, "isag": ISagConfig, "sra": SraConfig}[name]()
    return fn(target, approx_init, cfg, options, seed=seed, stop=stop, callback=callback)
