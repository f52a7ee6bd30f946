import numpy as np
import pytest

from isvi import approximation as ap
from isvi import estimators as es
from isvi import models as md

HALF_LOG_2PI = 0.5 * np.log(2 * np.pi)


def prior_only_target(dim=2, mean=1.0, var=1.0):
    """log p(z) = sum_i log N(z_i; mean, var); the data are ignored."""
    spec = md.ModelSpec(
        "conjugate-normal-known-variance", dim, {"likelihood_weight": 0.0, "prior_mean": mean, "prior_var": var}
    )
    data = md.Dataset(x=np.zeros((4, dim)))
    return md.Target(spec, data), md.full_batch(data)


def gaussian_elbo_gradient(mu, sigma, mean):
    # location then log-scale, for a unit-variance Gaussian target
    return np.concatenate([mean - mu, 1.0 - sigma**2])


def identity(mu, sigma, dim=1, factor_size=1):
    return ap.make_params(dim=dim, location=mu, scale=sigma, factor_size=factor_size)


def cache_at(params, eps, target, batch, score=False):
    """Build a cache from chosen base draws by replaying a fixed generator."""

    class Fixed:
        def standard_normal(self, shape):
            return np.asarray(eps, dtype=float).reshape(shape)

    cfg = es.EstimatorConfig(num_samples=np.atleast_2d(eps).shape[0])
    fn = es.score_gradient if score else es.reparam_gradient
    return fn(params, target, batch, cfg, Fixed())


# -- fresh estimators


def test_reparam_single_draw_example():
    target, batch = prior_only_target(dim=1)
    grad, cache, _ = cache_at(identity(0.0, 1.0), [[0.0]], target, batch)
    assert grad[0] == pytest.approx(1.0)
    assert cache.grad_z.shape == (1, 1)


@pytest.mark.parametrize("score", [False, True])
def test_fresh_estimators_match_analytic_gradient(score):
    target, batch = prior_only_target(dim=1)
    p = identity(0.0, 1.0)
    cfg = es.EstimatorConfig(num_samples=100_000)
    fn = es.score_gradient if score else es.reparam_gradient
    eps = ap.sample_epsilon(np.random.default_rng(5), 1, cfg.num_samples)
    out = fn(p, target, batch, cfg, np.random.default_rng(5))
    grad = out[0]
    # per-sample terms give the standard error of the mean
    f = target.log_joint(batch, ap.forward(p, eps)) - ap.log_q(p, eps)
    terms = f[:, None] * ap.score(p, eps) if score else ap.reparam_pullback(p, eps, 1.0 - ap.forward(p, eps))
    se = terms.std(axis=0) / np.sqrt(cfg.num_samples)
    assert abs(grad[0] - 1.0) < 3 * se[0]


@pytest.mark.parametrize("score", [False, True])
def test_fresh_estimators_deterministic(score):
    target, batch = prior_only_target()
    p = ap.make_params(dim=2, location=[0.3, -0.1], scale=0.8)
    cfg = es.EstimatorConfig(num_samples=7)
    fn = es.score_gradient if score else es.reparam_gradient
    a = fn(p, target, batch, cfg, np.random.default_rng(9))[0]
    b = fn(p, target, batch, cfg, np.random.default_rng(9))[0]
    assert np.array_equal(a, b)


def test_score_gradient_zero_when_target_equals_approximation():
    target, batch = prior_only_target(dim=3, mean=0.0, var=1.0)
    p = ap.make_params(dim=3, scale=1.0)
    grad, _ = es.score_gradient(p, target, batch, es.EstimatorConfig(num_samples=50), np.random.default_rng(1))
    assert np.all(grad == 0.0)


# -- weights


def test_weight_examples():
    target, batch = prior_only_target(dim=1)
    _, cache, _ = cache_at(identity(0.0, 1.0), [[0.0]], target, batch)
    w, eps_new = es.importance_weights(cache, identity(0.5, 1.0))
    assert eps_new[0, 0] == pytest.approx(-0.5)
    assert w.values[0, 0] == pytest.approx(0.882497, abs=1e-6)

    _, cache, _ = cache_at(identity(0.0, 1.0), [[1.0]], target, batch)
    w, eps_new = es.importance_weights(cache, identity(0.0, 2.0))
    assert eps_new[0, 0] == pytest.approx(0.5)
    assert w.values[0, 0] == pytest.approx(1.454991, abs=1e-6)


def test_weights_are_one_at_unchanged_parameters(rng):
    target, batch = prior_only_target(dim=6)
    p = ap.make_params(dim=6, location=rng.normal(size=6), scale=0.4, factor_size=2)
    _, cache, _ = es.reparam_gradient(p, target, batch, es.EstimatorConfig(num_samples=5), rng)
    for ratio in (False, True):
        w, _ = es.importance_weights(cache, p, density_ratio=ratio)
        assert np.all(w.values == 1.0)


def test_factor_weight_is_product_of_coordinate_weights(rng):
    target, batch = prior_only_target(dim=6)
    loc, new_loc = rng.normal(size=6), rng.normal(size=6)
    grouped = ap.make_params(dim=6, location=loc, scale=0.7, factor_size=3)
    single = ap.make_params(dim=6, location=loc, scale=0.7, factor_size=1)
    eps = rng.standard_normal((4, 6))
    _, c_grouped, _ = cache_at(grouped, eps, target, batch)
    _, c_single, _ = cache_at(single, eps, target, batch)
    w_grouped, _ = es.importance_weights(c_grouped, grouped.with_flat(np.concatenate([new_loc, grouped.unconstrained_scale])))
    w_single, _ = es.importance_weights(c_single, single.with_flat(np.concatenate([new_loc, single.unconstrained_scale])))
    log_prod = np.log(w_single.values).reshape(4, 2, 3).sum(axis=2)
    assert np.allclose(np.log(w_grouped.values), log_prod, atol=1e-12, rtol=0)


def test_weights_do_not_depend_on_normalizing_constant(rng):
    target, batch = prior_only_target(dim=4)
    p = ap.make_params(dim=4, location=rng.normal(size=4), scale=0.6, factor_size=2)
    _, cache, _ = es.reparam_gradient(p, target, batch, es.EstimatorConfig(num_samples=6), rng)
    new = p.with_flat(p.flat() + 0.05)
    w, eps_new = es.importance_weights(cache, new)
    # same ratio without the 1/2 log 2 pi term
    bare = ap.sum_per_factor(new, -0.5 * eps_new**2) - ap.sum_per_factor(p, -0.5 * cache.eps**2)
    assert np.allclose(np.log(w.values), bare, atol=1e-12, rtol=0)


def test_density_ratio_equals_base_ratio_times_scale_ratio(rng):
    target, batch = prior_only_target(dim=3)
    old = ap.make_params(dim=3, location=[0.1, 0.2, -0.3], scale=[0.5, 1.0, 2.0])
    new = ap.make_params(dim=3, location=[0.3, 0.0, -0.1], scale=[0.7, 0.8, 2.5])
    _, cache, _ = es.reparam_gradient(old, target, batch, es.EstimatorConfig(num_samples=8), rng)
    base, _ = es.importance_weights(cache, new)
    dens, _ = es.importance_weights(cache, new, density_ratio=True)
    assert np.allclose(dens.values, base.values * old.scale / new.scale, rtol=1e-12)
    # and both agree with q_new(z) / q_old(z) evaluated directly
    z = cache.z
    q = lambda prm: np.exp(-0.5 * ((z - prm.location) / prm.scale) ** 2) / (prm.scale * np.sqrt(2 * np.pi))
    assert np.allclose(dens.values, q(new) / q(old), rtol=1e-10)


def test_degenerate_inverse_gives_zero_weight():
    spec = md.ModelSpec("poisson-gamma", 2)
    data = md.Dataset(x=np.ones((3, 2)))
    target, batch = md.Target(spec, data), md.full_batch(data)
    p = ap.make_params(transforms=[("identity", 1), ("softplus", 1)], location=[0.0, 0.0], scale=1.0)
    # a cache whose second coordinate sits outside the softplus range
    cache = es.SampleCache(
        eps=np.array([[0.0, 0.0]]),
        z=np.array([[0.5, -1.0]]),
        grad_z=np.ones((1, 2)),
        log_phi=ap.base_log_density_per_factor(p, np.zeros((1, 2))),
        logp=np.zeros(1),
        batch_id=0,
        params=p,
    )
    new = p.with_flat(p.flat() + 0.1)
    w, _ = es.importance_weights(cache, new)
    assert w.values[0, 1] == 0.0 and w.degenerate[0, 1]
    assert w.values[0, 0] > 0 and not w.degenerate[0, 0]
    grad, _ = es.importance_gradient(cache, new)
    assert np.all(np.isfinite(grad))
    del target, batch


def test_softplus_cache_stays_in_range(rng):
    spec = md.ModelSpec("poisson-gamma", 2)
    data = md.make_synthetic(spec, rng, 20)
    target, batch = md.Target(spec, data), md.full_batch(data)
    p = ap.make_params(transforms=[("softplus", 2)], location=[0.5, 1.0], scale=0.3)
    _, cache, _ = es.reparam_gradient(p, target, batch, es.EstimatorConfig(num_samples=10), rng)
    new = p.with_flat(p.flat() + np.array([0.2, -0.2, 0.0, 0.0]))
    w, _ = es.importance_weights(cache, new)
    grad, _ = es.importance_gradient(cache, new)
    assert np.all(np.isfinite(w.values)) and np.all(np.isfinite(grad))


def test_ceiling_refuses_reuse():
    target, batch = prior_only_target(dim=1)
    _, cache, _ = cache_at(identity(0.0, 1.0), [[3.0]], target, batch)
    new = identity(3.0, 1.0)  # moves the draw to the mode: weight exp(4.5) ~ 90
    with pytest.raises(es.ReuseRefused):
        es.importance_gradient(cache, new, es.EstimatorConfig(weight_ceiling=10.0))
    with pytest.raises(es.ReuseRefused):
        es.importance_score_gradient(cache, new, es.EstimatorConfig(weight_ceiling=10.0))
    grad, _ = es.importance_gradient(cache, new, es.EstimatorConfig(weight_ceiling=1e3))
    assert np.all(np.isfinite(grad))


def test_structure_mismatch_rejected(rng):
    target, batch = prior_only_target(dim=2)
    p = ap.make_params(dim=2)
    _, cache, _ = es.reparam_gradient(p, target, batch, es.EstimatorConfig(), rng)
    with pytest.raises(ValueError):
        es.importance_weights(cache, ap.make_params(dim=2, factor_size=2))


# -- reuse


def test_identity_reuse_reproduces_fresh_gradient(rng):
    target, batch = prior_only_target(dim=4)
    p = ap.make_params(dim=4, location=rng.normal(size=4), scale=0.5, factor_size=2)
    cfg = es.EstimatorConfig(num_samples=20)
    fresh, cache, _ = es.reparam_gradient(p, target, batch, cfg, np.random.default_rng(3))
    reused, mean_w = es.importance_gradient(cache, p, cfg)
    assert mean_w == 1.0
    assert np.allclose(reused, fresh, atol=1e-12, rtol=0)

    fresh, cache = es.score_gradient(p, target, batch, cfg, np.random.default_rng(3))
    reused, _ = es.importance_score_gradient(cache, p, cfg)
    assert np.allclose(reused, fresh, atol=1e-12, rtol=0)


def test_importance_elbo_identity(rng):
    target, batch = prior_only_target(dim=3)
    p = ap.make_params(dim=3, location=rng.normal(size=3), scale=0.5)
    _, cache, elbo = es.reparam_gradient(p, target, batch, es.EstimatorConfig(num_samples=10), rng)
    assert es.importance_elbo(cache, p) == pytest.approx(elbo, abs=1e-12)
    assert es.cache_elbo(cache) == pytest.approx(elbo, abs=1e-12)


@pytest.mark.parametrize("score", [False, True])
def test_importance_gradient_unbiased(score):
    # R independent single-sample caches are equivalent to one cache of R
    # draws, because the estimate is a mean of independent per-sample terms
    R = 100_000
    target, batch = prior_only_target(dim=2)
    old = ap.make_params(dim=2, location=[0.2, -0.3], scale=[0.9, 1.1])
    new = old.with_flat(old.flat() + 0.01)
    cfg = es.EstimatorConfig(num_samples=R)
    rng = np.random.default_rng(2024)
    if score:
        _, cache = es.score_gradient(old, target, batch, cfg, rng)
        weights, eps_new = es.importance_weights(cache, new, density_ratio=True)
        w = weights.per_coordinate(new)
        f = cache.logp - ap.log_q(new, eps_new)
        terms = np.tile(w, 2) * f[:, None] * ap.score(new, eps_new)
        reused, _ = es.importance_score_gradient(cache, new)
    else:
        _, cache, _ = es.reparam_gradient(old, target, batch, cfg, rng)
        terms, _ = es.importance_gradient_terms(cache, new)
        reused, _ = es.importance_gradient(cache, new)
    assert np.allclose(reused, terms.mean(axis=0), rtol=1e-12)
    se = terms.std(axis=0) / np.sqrt(R)
    exact = gaussian_elbo_gradient(new.location, new.scale, 1.0)
    # the fresh estimator at the new parameters targets the same exact value
    assert np.all(np.abs(reused - exact) < 3 * se), (reused, exact, se)


def test_model_is_called_only_by_fresh_estimates(rng):
    target, batch = prior_only_target(dim=2)
    p = ap.make_params(dim=2)
    cfg = es.EstimatorConfig(num_samples=6)
    _, cache, _ = es.reparam_gradient(p, target, batch, cfg, rng)
    assert target.counters.grad_evals == 6
    before = target.counters.snapshot()
    new = p.with_flat(p.flat() + 0.01)
    es.importance_gradient(cache, new)
    es.importance_elbo(cache, new)
    assert target.counters.snapshot() == before

    _, score_cache = es.score_gradient(p, target, batch, cfg, rng)
    assert target.counters.grad_evals == 6
    es.importance_score_gradient(score_cache, new)
    assert target.counters.grad_evals == 6
    with pytest.raises(ValueError):
        es.importance_gradient(score_cache, new)


def test_config_validation():
    with pytest.raises(ValueError):
        es.EstimatorConfig(num_samples=0)
    with pytest.raises(ValueError):
        es.EstimatorConfig(weight_ceiling=0.5)
