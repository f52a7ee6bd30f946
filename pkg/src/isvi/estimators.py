"""Monte Carlo ELBO gradient estimators and their importance-sampled reuse.

Fresh estimators draw ``M`` base samples and evaluate the model; the
importance-sampled variants take a :class:`SampleCache` recorded at earlier
parameters and produce a gradient at new parameters without touching the
model again.

Weights are formed per approximation factor and in log space. For the
reparameterization estimator the weight applied to a cached sample is the
approximation density ratio ``q_new(z) / q_old(z)``; for the location-scale
family this is the base-density ratio ``phi(eps') / phi(eps)`` times the
scale ratio ``prod_i sigma_i / sigma'_i`` of the factor. The bare base-density
ratio is available from :func:`importance_weights`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import approximation as ap
from .approximation import FactorizedApproxParams
from .models import MiniBatch, Target

__all__ = [
    "EstimatorConfig",
    "SampleCache",
    "FactorWeights",
    "ReuseRefused",
    "reparam_gradient",
    "score_gradient",
    "importance_weights",
    "importance_gradient",
    "importance_score_gradient",
    "importance_elbo",
    "cache_elbo",
]


class ReuseRefused(Exception):
    """A cached sample carries a weight above the configured ceiling."""

    def __init__(self, max_weight: float, ceiling: float):
        super().__init__(f"importance weight {max_weight:.3g} exceeds ceiling {ceiling:.3g}")
        self.max_weight = max_weight


@dataclass(frozen=True)
class EstimatorConfig:
    """``num_samples`` is M; weights above ``weight_ceiling`` refuse reuse and
    a mean weight below ``weight_floor`` marks the cache as exhausted."""

    num_samples: int = 1
    weight_floor: float = 1e-3
    weight_ceiling: float = 1e3

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if not 0.0 <= self.weight_floor < 1.0 < self.weight_ceiling:
            raise ValueError("need 0 <= weight_floor < 1 < weight_ceiling")


@dataclass(frozen=True, eq=False)
class SampleCache:
    """Everything one fresh estimate leaves behind for later reuse."""

    eps: np.ndarray  # (M, D)
    z: np.ndarray  # (M, D)
    grad_z: np.ndarray | None  # (M, D); None for score-function caches
    log_phi: np.ndarray  # (M, S)
    logp: np.ndarray  # (M,)
    batch_id: int
    params: FactorizedApproxParams

    @property
    def num_samples(self) -> int:
        return self.eps.shape[0]


@dataclass(frozen=True, eq=False)
class FactorWeights:
    values: np.ndarray  # (M, S), nonnegative
    degenerate: np.ndarray  # (M, S) bool, cached z outside the new transform range

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    def per_coordinate(self, params: FactorizedApproxParams) -> np.ndarray:
        return self.values[:, params.factor_of]


def _new_cache(params, eps, z, grad_z, logp, batch):
    return SampleCache(
        eps=eps,
        z=z,
        grad_z=grad_z,
        log_phi=ap.base_log_density_per_factor(params, eps),
        logp=np.asarray(logp, dtype=float),
        batch_id=batch.batch_id,
        params=params,
    )


def reparam_gradient(
    params: FactorizedApproxParams,
    target: Target,
    batch: MiniBatch,
    cfg: EstimatorConfig,
    rng: np.random.Generator,
):
    """Fresh reparameterization gradient from ``cfg.num_samples`` draws.

    Returns ``(gradient, cache, elbo)`` where ``elbo`` is the sample mean of
    ``log p - log q``.
    """
    eps = ap.sample_epsilon(rng, params.dim, cfg.num_samples)
    z = ap.forward(params, eps)
    logp, grad_z = target.value_and_grad(batch, z)
    grad = np.mean(ap.reparam_pullback(params, eps, grad_z), axis=0)
    elbo = float(np.mean(logp - ap.log_q(params, eps)))
    return grad, _new_cache(params, eps, z, grad_z, logp, batch), elbo


def score_gradient(
    params: FactorizedApproxParams,
    target: Target,
    batch: MiniBatch,
    cfg: EstimatorConfig,
    rng: np.random.Generator,
):
    """Fresh score-function gradient ``mean((log p - log q) * grad log q)``.

    Only model log-densities are evaluated, never model gradients.
    """
    eps = ap.sample_epsilon(rng, params.dim, cfg.num_samples)
    z = ap.forward(params, eps)
    logp = target.log_joint(batch, z)
    f = logp - ap.log_q(params, eps)
    grad = np.mean(f[:, None] * ap.score(params, eps), axis=0)
    return grad, _new_cache(params, eps, z, None, logp, batch)


def cache_elbo(cache: SampleCache) -> float:
    """ELBO estimate at the parameters the cache was drawn under."""
    return float(np.mean(cache.logp - ap.log_q(cache.params, cache.eps)))


def _log_weights(cache, new_params, density_ratio):
    old = cache.params
    if not old.same_structure(new_params):
        raise ValueError("new parameters differ in dimension, transforms or factor partition")
    eps_new = ap.inverse(new_params, cache.z, strict=False)
    unchanged = old.factor_unchanged(new_params)
    if unchanged.any():
        keep = unchanged[new_params.factor_of]
        eps_new[:, keep] = cache.eps[:, keep]
    bad_coord = ~np.isfinite(eps_new)
    degenerate = ap.sum_per_factor(new_params, bad_coord) > 0
    safe = np.where(bad_coord, 0.0, eps_new)
    log_w = ap.base_log_density_per_factor(new_params, safe) - cache.log_phi
    if density_ratio:
        log_w += ap.sum_per_factor(new_params, old.unconstrained_scale - new_params.unconstrained_scale)
    log_w[:, unchanged] = 0.0
    log_w[degenerate] = -np.inf
    return log_w, safe, degenerate


def importance_weights(cache: SampleCache, new_params: FactorizedApproxParams, density_ratio: bool = False):
    """Per-factor weights of the cached samples under ``new_params``.

    By default this is the base-density ratio ``phi(eps') / phi(eps)`` with
    ``eps' = inverse(new_params, z)``. With ``density_ratio=True`` the scale
    ratio is folded in, giving ``q_new(z) / q_old(z)`` per factor.

    Returns ``(FactorWeights, eps_new)``. Coordinates whose cached ``z`` lies
    outside the new transform range get ``eps_new = 0`` and their factor a
    weight of 0 with the degenerate flag set.
    """
    log_w, eps_new, degenerate = _log_weights(cache, new_params, density_ratio)
    return FactorWeights(np.exp(log_w), degenerate), eps_new


def _check_ceiling(weights, cfg):
    if cfg is None:
        return
    top = float(np.max(weights.values))
    if top > cfg.weight_ceiling:
        raise ReuseRefused(top, cfg.weight_ceiling)


def importance_gradient_terms(cache: SampleCache, new_params: FactorizedApproxParams):
    """Per-sample weighted gradient terms ``(M, 2D)`` and the weights."""
    if cache.grad_z is None:
        raise ValueError("cache holds no model gradients (score-function cache)")
    weights, eps_new = importance_weights(cache, new_params, density_ratio=True)
    w = weights.per_coordinate(new_params)
    terms = ap.reparam_pullback(new_params, eps_new, cache.grad_z)
    terms = np.where(np.tile(w, 2) > 0, terms, 0.0) * np.tile(w, 2)
    return terms, weights


def importance_gradient(
    cache: SampleCache, new_params: FactorizedApproxParams, cfg: EstimatorConfig | None = None
):
    """Reparameterization gradient at ``new_params`` reusing cached model gradients.

    Returns ``(gradient, mean_weight)``. Raises :class:`ReuseRefused` when any
    weight exceeds ``cfg.weight_ceiling``.
    """
    terms, weights = importance_gradient_terms(cache, new_params)
    _check_ceiling(weights, cfg)
    return np.mean(terms, axis=0), weights.mean


def importance_score_gradient(
    cache: SampleCache, new_params: FactorizedApproxParams, cfg: EstimatorConfig | None = None
):
    """Score-function gradient at ``new_params`` from cached ``log p`` values.

    ``log q`` and its score are re-evaluated at ``new_params``; the weights
    are approximation-density ratios. Returns ``(gradient, mean_weight)``.
    """
    weights, eps_new = importance_weights(cache, new_params, density_ratio=True)
    _check_ceiling(weights, cfg)
    w = weights.per_coordinate(new_params)
    f = cache.logp - ap.log_q(new_params, eps_new)
    terms = np.tile(w, 2) * (f[:, None] * ap.score(new_params, eps_new))
    terms = np.where(np.tile(w, 2) > 0, terms, 0.0)
    return np.mean(terms, axis=0), weights.mean


def importance_elbo(cache: SampleCache, new_params: FactorizedApproxParams) -> float:
    """ELBO at ``new_params`` from cached ``log p`` values (joint weights)."""
    log_w, eps_new, degenerate = _log_weights(cache, new_params, True)
    joint = np.exp(np.sum(log_w, axis=1))
    f = cache.logp - ap.log_q(new_params, eps_new)
    return float(np.mean(np.where(joint > 0, joint * f, 0.0)))
