"""Factorized reparameterized Gaussian approximations.

A sample is produced as ``z = T(mu + sigma * eps)`` with ``eps ~ N(0, I)``,
``sigma = exp(rho)`` and ``T`` a fixed per-block constraining transform
(identity, softplus, or logistic stick-breaking). Coordinates are grouped
into factors; each factor shares a single importance weight.

All functions accept ``eps``/``z`` with arbitrary leading sample axes, the
last axis being the coordinate axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit, logit

__all__ = [
    "TRANSFORM_KINDS",
    "TransformBlock",
    "FactorizedApproxParams",
    "make_params",
    "contiguous_factors",
    "sample_epsilon",
    "forward",
    "inverse",
    "log_det_jacobian",
    "base_log_density",
    "base_log_density_per_factor",
    "sum_per_factor",
    "log_q",
    "score",
    "reparam_pullback",
]

TRANSFORM_KINDS = ("identity", "softplus", "stick_breaking")
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class TransformBlock:
    """A contiguous run of coordinates ``[start, stop)`` sharing one transform.

    A ``stick_breaking`` block of size ``K - 1`` maps onto the interior of the
    ``K``-simplex; its outputs are the first ``K - 1`` simplex weights.
    """

    kind: str
    start: int
    stop: int

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if not 0 <= self.start < self.stop:
            raise ValueError(f"empty or negative block [{self.start}, {self.stop})")

    @property
    def slice(self) -> slice:
        return slice(self.start, self.stop)

    @property
    def size(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True, eq=False)
class FactorizedApproxParams:
    """Location/scale parameters of a factorized Gaussian approximation.

    Attributes
    ----------
    location : ndarray of shape (D,)
        Per-coordinate location ``mu``.
    unconstrained_scale : ndarray of shape (D,)
        Per-coordinate ``rho``; the scale is ``exp(rho)``.
    factors : tuple of int ndarrays
        Disjoint coordinate groups covering ``0..D-1``.
    blocks : tuple of TransformBlock
        Contiguous transform blocks covering ``0..D-1`` in order.
    """

    location: np.ndarray
    unconstrained_scale: np.ndarray
    factors: tuple = field(default=None)
    blocks: tuple = field(default=None)

    def __post_init__(self):
        mu = np.array(self.location, dtype=float).reshape(-1)
        rho = np.array(self.unconstrained_scale, dtype=float).reshape(-1)
        if mu.shape != rho.shape or mu.size == 0:
            raise ValueError("location and unconstrained_scale must be non-empty and equal length")
        mu.setflags(write=False)
        rho.setflags(write=False)
        object.__setattr__(self, "location", mu)
        object.__setattr__(self, "unconstrained_scale", rho)
        dim = mu.size

        factors = self.factors
        if factors is None:
            factors = contiguous_factors(dim, 1)
        factors = tuple(np.array(f, dtype=np.intp).reshape(-1) for f in factors)
        seen = np.concatenate(factors) if factors else np.empty(0, np.intp)
        if seen.size != dim or not np.array_equal(np.sort(seen), np.arange(dim)):
            raise ValueError("factor partition must be disjoint and cover every coordinate")
        for f in factors:
            f.setflags(write=False)
        object.__setattr__(self, "factors", factors)

        blocks = self.blocks
        if blocks is None:
            blocks = (TransformBlock("identity", 0, dim),)
        blocks = tuple(b if isinstance(b, TransformBlock) else TransformBlock(*b) for b in blocks)
        pos = 0
        for b in blocks:
            if b.start != pos:
                raise ValueError("transform blocks must be contiguous and ordered")
            pos = b.stop
        if pos != dim:
            raise ValueError("transform blocks must cover every coordinate")
        object.__setattr__(self, "blocks", blocks)

        factor_of = np.empty(dim, dtype=np.intp)
        for s, f in enumerate(factors):
            factor_of[f] = s
        factor_of.setflags(write=False)
        indicator = np.zeros((dim, len(factors)))
        indicator[np.arange(dim), factor_of] = 1.0
        indicator.setflags(write=False)
        object.__setattr__(self, "_factor_of", factor_of)
        object.__setattr__(self, "_indicator", indicator)

    @property
    def dim(self) -> int:
        return self.location.size

    @property
    def num_factors(self) -> int:
        return len(self.factors)

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.unconstrained_scale)

    @property
    def factor_of(self) -> np.ndarray:
        """Factor index of every coordinate."""
        return self._factor_of

    @property
    def coordinate_transform(self) -> np.ndarray:
        tags = np.empty(self.dim, dtype=object)
        for b in self.blocks:
            tags[b.slice] = b.kind
        return tags

    def flat(self) -> np.ndarray:
        """Parameters as one vector ``[mu, rho]`` (the gradient layout)."""
        return np.concatenate([self.location, self.unconstrained_scale])

    def with_flat(self, vec) -> "FactorizedApproxParams":
        vec = np.array(vec, dtype=float)
        if vec.shape != (2 * self.dim,):
            raise ValueError(f"expected a vector of length {2 * self.dim}, got shape {vec.shape}")
        vec.setflags(write=False)
        # structure is shared with self, so validation can be skipped
        out = object.__new__(FactorizedApproxParams)
        out.__dict__.update(self.__dict__)
        object.__setattr__(out, "location", vec[: self.dim])
        object.__setattr__(out, "unconstrained_scale", vec[self.dim :])
        return out

    def same_structure(self, other: "FactorizedApproxParams") -> bool:
        if self.factors is other.factors and self.blocks is other.blocks:
            return True
        return (
            self.dim == other.dim
            and self.blocks == other.blocks
            and len(self.factors) == len(other.factors)
            and all(np.array_equal(a, b) for a, b in zip(self.factors, other.factors))
        )

    def factor_unchanged(self, other: "FactorizedApproxParams") -> np.ndarray:
        """Boolean per factor: all of its parameters are bitwise equal in ``other``."""
        changed = (self.location != other.location) | (self.unconstrained_scale != other.unconstrained_scale)
        return (changed @ self._indicator) == 0


def contiguous_factors(dim: int, factor_size: int) -> tuple:
    """Partition ``0..dim-1`` into consecutive groups of ``factor_size`` (ragged tail)."""
    if factor_size < 1:
        raise ValueError("factor_size must be >= 1")
    return tuple(np.arange(i, min(i + factor_size, dim)) for i in range(0, dim, factor_size))


def make_params(
    dim: int | None = None,
    transforms: Sequence[tuple[str, int]] | None = None,
    factor_size: int = 1,
    factors: Iterable | None = None,
    location: float | np.ndarray = 0.0,
    scale: float | np.ndarray = 0.1,
) -> FactorizedApproxParams:
    """Build parameters from a list of ``(kind, size)`` transform segments.

    The defaults give ``mu = 0`` and ``sigma = 0.1``.
    """
    if transforms is None:
        if dim is None:
            raise ValueError("either dim or transforms is required")
        transforms = [("identity", dim)]
    blocks, pos = [], 0
    for kind, size in transforms:
        blocks.append(TransformBlock(kind, pos, pos + int(size)))
        pos += int(size)
    if dim is not None and pos != dim:
        raise ValueError(f"transform segments cover {pos} coordinates, expected {dim}")
    dim = pos
    mu = np.broadcast_to(np.asarray(location, dtype=float), (dim,))
    rho = np.log(np.broadcast_to(np.asarray(scale, dtype=float), (dim,)))
    if factors is None:
        factors = contiguous_factors(dim, factor_size)
    return FactorizedApproxParams(mu, rho, tuple(factors), tuple(blocks))


def sample_epsilon(rng: np.random.Generator, dim: int, num: int | None = None) -> np.ndarray:
    """Standard-normal base draws of shape ``(dim,)`` or ``(num, dim)``."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if num is None:
        return rng.standard_normal(dim)
    if num < 1:
        raise ValueError("num must be >= 1")
    return rng.standard_normal((num, dim))


def _check_dim(params, arr, name):
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] != params.dim:
        raise ValueError(f"{name} has trailing dimension {arr.shape[-1:]}, expected {params.dim}")
    return arr


# -- elementwise and block transforms ---------------------------------------


def _softplus(u):
    return np.logaddexp(0.0, u)


def _softplus_inv(z):
    # log(expm1(z)) without overflow for large z
    return z + np.log(-np.expm1(-z))


def _stick_offsets(k1):
    return np.log(np.arange(k1, 0, -1, dtype=float))


def _stick_forward(y):
    """Map ``(..., K-1)`` reals to the first ``K-1`` weights of a K-simplex."""
    a = y - _stick_offsets(y.shape[-1])
    v = expit(a)
    log1mv = -_softplus(a)
    log_rem = np.concatenate(
        [np.zeros(y.shape[:-1] + (1,)), np.cumsum(log1mv, axis=-1)[..., :-1]], axis=-1
    )
    return v * np.exp(log_rem)


def _stick_logdet(y):
    a = y - _stick_offsets(y.shape[-1])
    log_v = -_softplus(-a)
    log1mv = -_softplus(a)
    log_rem = np.cumsum(log1mv, axis=-1) - log1mv
    return np.sum(log_v + log1mv + log_rem, axis=-1)


def _stick_inverse(x):
    rem = 1.0 - np.concatenate([np.zeros(x.shape[:-1] + (1,)), np.cumsum(x, axis=-1)[..., :-1]], axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = x / rem
        y = logit(v) + _stick_offsets(x.shape[-1])
    bad = ~((x > 0) & (rem > 0) & (v > 0) & (v < 1) & np.isfinite(y))
    return y, bad


def _stick_pullback(y, g):
    """Pull ``g = d/dx`` back to ``d/dy`` and add the log-Jacobian gradient."""
    k1 = y.shape[-1]
    a = y - _stick_offsets(k1)
    v = expit(a)
    x = _stick_forward(y)
    gx = g * x
    later = np.cumsum(gx[..., ::-1], axis=-1)[..., ::-1] - gx  # sum over k > j
    n_later = np.arange(k1 - 1, -1, -1, dtype=float)
    return gx * (1.0 - v) - v * later + 1.0 - 2.0 * v - n_later * v


def _affine(params, eps):
    return params.location + params.scale * eps


def forward(params: FactorizedApproxParams, eps) -> np.ndarray:
    """``z = T(mu + sigma * eps)``."""
    eps = _check_dim(params, eps, "eps")
    u = _affine(params, eps)
    z = u.copy()
    for b in params.blocks:
        if b.kind == "softplus":
            z[..., b.slice] = _softplus(u[..., b.slice])
        elif b.kind == "stick_breaking":
            z[..., b.slice] = _stick_forward(u[..., b.slice])
    return z


def _unconstrain(params, z):
    u = z.copy()
    bad = np.zeros(z.shape, dtype=bool)
    for b in params.blocks:
        if b.kind == "softplus":
            zb = z[..., b.slice]
            ok = zb > 0
            with np.errstate(divide="ignore", invalid="ignore"):
                u[..., b.slice] = np.where(ok, _softplus_inv(np.where(ok, zb, 1.0)), np.nan)
            bad[..., b.slice] = ~ok
        elif b.kind == "stick_breaking":
            yb, badb = _stick_inverse(z[..., b.slice])
            u[..., b.slice] = np.where(badb, np.nan, yb)
            bad[..., b.slice] = badb
    return u, bad


def inverse(params: FactorizedApproxParams, z, strict: bool = True) -> np.ndarray:
    """Base draws that ``forward`` maps onto ``z``.

    With ``strict=False`` coordinates outside the transform range come back
    as NaN instead of raising.
    """
    z = _check_dim(params, z, "z")
    u, bad = _unconstrain(params, z)
    if strict and bad.any():
        idx = int(np.argwhere(bad)[0][-1])
        raise ValueError(f"coordinate {idx} is outside the range of its {params.coordinate_transform[idx]} transform")
    return (u - params.location) / params.scale


def log_det_jacobian(params: FactorizedApproxParams, eps) -> np.ndarray:
    """``log |det df/deps|`` per sample."""
    eps = _check_dim(params, eps, "eps")
    u = _affine(params, eps)
    out = np.broadcast_to(np.sum(params.unconstrained_scale), eps.shape[:-1]).astype(float)
    for b in params.blocks:
        ub = u[..., b.slice]
        if b.kind == "softplus":
            out = out - np.sum(_softplus(-ub), axis=-1)
        elif b.kind == "stick_breaking":
            out = out + _stick_logdet(ub)
    return out


def base_log_density(eps) -> np.ndarray:
    """Elementwise ``log phi(eps)`` of the standard normal."""
    eps = np.asarray(eps, dtype=float)
    return -0.5 * eps * eps - _HALF_LOG_2PI


def sum_per_factor(params: FactorizedApproxParams, values) -> np.ndarray:
    """Sum a per-coordinate array ``(..., D)`` within each factor -> ``(..., S)``."""
    return np.asarray(values, dtype=float) @ params._indicator


def base_log_density_per_factor(params: FactorizedApproxParams, eps) -> np.ndarray:
    """``sum_{i in S} log phi(eps_i)`` for every factor ``S``; shape ``(..., S)``."""
    eps = _check_dim(params, eps, "eps")
    return sum_per_factor(params, base_log_density(eps))


def log_q(params: FactorizedApproxParams, eps) -> np.ndarray:
    """Approximation log-density at ``z = forward(params, eps)``."""
    eps = _check_dim(params, eps, "eps")
    return np.sum(base_log_density(eps), axis=-1) - log_det_jacobian(params, eps)


def score(params: FactorizedApproxParams, eps) -> np.ndarray:
    """``grad_lambda log q_lambda(z)`` at fixed ``z = forward(params, eps)``.

    The constraining transform does not depend on ``lambda``, so only the
    affine part contributes: ``d/dmu = eps / sigma`` and ``d/drho = eps**2 - 1``.
    """
    eps = _check_dim(params, eps, "eps")
    return np.concatenate([eps / params.scale, eps * eps - 1.0], axis=-1)


def reparam_pullback(params: FactorizedApproxParams, eps, grad_z) -> np.ndarray:
    """Per-sample gradient of ``log p(f(eps, lam)) + log|det J_f(eps, lam)|`` in ``lam``.

    Parameters
    ----------
    params : FactorizedApproxParams
    eps : ndarray of shape (..., D)
    grad_z : ndarray of shape (..., D)
        Model gradient ``d log p / dz`` at ``z = forward(params, eps)``.

    Returns
    -------
    ndarray of shape (..., 2D)
        ``[d/dmu, d/drho]`` for every sample.
    """
    eps = _check_dim(params, eps, "eps")
    grad_z = _check_dim(params, grad_z, "grad_z")
    u = _affine(params, eps)
    grad_u = np.array(np.broadcast_to(grad_z, np.broadcast_shapes(grad_z.shape, u.shape)), dtype=float)
    for b in params.blocks:
        if b.kind == "softplus":
            ub = u[..., b.slice]
            grad_u[..., b.slice] = grad_u[..., b.slice] * expit(ub) + expit(-ub)
        elif b.kind == "stick_breaking":
            grad_u[..., b.slice] = _stick_pullback(u[..., b.slice], grad_u[..., b.slice])
    return np.concatenate([grad_u, grad_u * params.scale * eps + 1.0], axis=-1)
