import numpy as np
import pytest

from isvi import approximation as ap
from isvi import estimators as es
from isvi import models as md
from isvi import optimizers as op

TRACE_FIELDS_NO_CLOCK = [f for f in op.TraceRecord.FIELDS if f != "wall_ms"]


def conjugate_target(dim=2, n=200, seed=0):
    spec = md.ModelSpec("conjugate-normal-known-variance", dim)
    data = md.make_synthetic(spec, np.random.default_rng(seed), n)
    return md.Target(spec, data)


def init(target, scale=0.1):
    return ap.make_params(transforms=md.default_transforms(target.spec), scale=scale)


def trace_rows(result):
    return [tuple(getattr(r, f) for f in TRACE_FIELDS_NO_CLOCK) for r in result.trace]


def cfg(batch_size=50, lr=0.05, **kw):
    return op.OptimConfig(batch_size=batch_size, adam=op.AdamConfig(lr=lr, decay_steps=kw.pop("decay_steps", None)), **kw)


# -- Adam


def test_adam_first_step_moves_by_learning_rate():
    p = ap.make_params(dim=3)
    state = op.AdamState.fresh(6, op.AdamConfig(lr=0.1))
    new_state, q = op.adam_step(state, p, np.full(6, 2.0))
    assert np.allclose(q.flat() - p.flat(), 0.1, atol=1e-8)
    assert new_state.step_count == 1
    assert np.all(new_state.second_moment >= 0)


def test_adam_zero_gradient_leaves_parameters():
    p = ap.make_params(dim=2, location=[0.3, -0.4])
    _, q = op.adam_step(op.AdamState.fresh(4), p, np.zeros(4))
    assert np.array_equal(q.flat(), p.flat())


def test_adam_deterministic_and_shape_checked(rng):
    p = ap.make_params(dim=2)
    g = rng.normal(size=4)
    s = op.AdamState.fresh(4)
    a, b = op.adam_step(s, p, g), op.adam_step(s, p, g)
    assert np.array_equal(a[1].flat(), b[1].flat())
    with pytest.raises(ValueError):
        op.adam_step(s, p, np.zeros(3))


def test_adam_decay_schedule():
    s = op.AdamState.fresh(2, op.AdamConfig(lr=0.2, decay_steps=10, decay_power=1.0))
    assert s.current_lr() == pytest.approx(0.2)
    p = ap.make_params(dim=1)
    for _ in range(10):
        s, p = op.adam_step(s, p, np.ones(2))
    assert s.current_lr() == pytest.approx(0.1)


# -- SGD


def test_sgd_recovers_conjugate_posterior_mean():
    target = conjugate_target(dim=3, n=500)
    res = op.sgd_run(target, init(target), cfg(lr=0.05, decay_steps=100), seed=1, stop=op.StopRule(epochs=60))
    mean, _ = md.conjugate_normal_posterior(target.spec, target.data)
    assert np.max(np.abs(res.params.location - mean)) < 0.05


def test_zero_epochs_returns_initial_parameters():
    target = conjugate_target()
    p0 = init(target)
    for name in op.OPTIMIZERS:
        res = op.run_optimizer(name, target, p0, cfg(), 0, op.StopRule(epochs=0))
        assert np.array_equal(res.params.flat(), p0.flat()) and res.trace == []


@pytest.mark.parametrize("name", sorted(op.OPTIMIZERS))
def test_runs_are_deterministic_and_traces_well_formed(name):
    target = conjugate_target()
    stop = op.StopRule(epochs=4)
    a = op.run_optimizer(name, target, init(target), cfg(eval_every=3), 7, stop)
    b = op.run_optimizer(name, target, init(target), cfg(eval_every=3), 7, stop)
    assert trace_rows(a) == trace_rows(b)
    assert np.array_equal(a.params.flat(), b.params.flat())
    steps = [r.step for r in a.trace]
    assert steps == list(range(1, len(steps) + 1))
    for key in ("model_grad_evals", "logp_evals", "wall_ms"):
        vals = [getattr(r, key) for r in a.trace]
        assert all(x <= y for x, y in zip(vals, vals[1:]))
    assert {r.step_kind for r in a.trace} <= {"fresh", "reuse"}
    assert a.evals and all(np.isfinite(e.elbo) for e in a.evals)


def test_max_steps_caps_the_trace():
    target = conjugate_target()
    res = op.isgd_run(target, init(target), cfg(), seed=0, stop=op.StopRule(epochs=100, max_steps=17))
    assert len(res.trace) == 17


def test_plateau_stops_early():
    target = conjugate_target(n=100)
    stop = op.StopRule(epochs=500, plateau_tol=1e-3, plateau_epochs=3)
    res = op.sgd_run(target, init(target), cfg(batch_size=100, lr=0.1, eval_every=1), seed=0, stop=stop)
    assert res.epochs_completed < 500


def test_dimension_mismatch_rejected():
    target = conjugate_target(dim=2)
    with pytest.raises(ValueError):
        op.sgd_run(target, ap.make_params(dim=3))


# -- I-SGD


def test_isgd_without_reuse_matches_sgd():
    target = conjugate_target()
    stop = op.StopRule(epochs=3)
    a = op.sgd_run(target, init(target), cfg(eval_every=2), seed=5, stop=stop)
    b = op.isgd_run(target, init(target), cfg(eval_every=2), op.ISgdConfig(0.0), seed=5, stop=stop)
    assert trace_rows(a) == trace_rows(b)
    assert np.array_equal(a.params.flat(), b.params.flat())


def test_isgd_reuse_frequency():
    target = conjugate_target(n=50)
    # tiny steps keep every weight near 1, so only the coin decides
    c = op.OptimConfig(
        batch_size=50,
        adam=op.AdamConfig(lr=1e-6),
        estimator_cfg=es.EstimatorConfig(weight_floor=0.0, weight_ceiling=1e12),
    )
    res = op.isgd_run(target, init(target), c, op.ISgdConfig(0.9, max_reuse_steps=10**6), seed=3, stop=op.StopRule(epochs=1000))
    fresh = sum(r.step_kind == "fresh" for r in res.trace)
    reuse = len(res.trace) - fresh
    decisions = reuse + fresh
    assert decisions >= 10_000
    assert 0.88 < reuse / decisions < 0.92
    # reuse steps never touch the model gradient
    assert res.trace[-1].model_grad_evals == fresh


def test_isgd_validation():
    with pytest.raises(ValueError, match="reuse_probability"):
        op.ISgdConfig(1.5)
    with pytest.raises(ValueError):
        op.ISgdConfig(1.0)
    with pytest.raises(ValueError):
        op.ISgdConfig(0.5, max_reuse_steps=-1)


# -- SAG, I-SAG and SRA


def test_sag_single_batch_is_full_batch_ascent():
    target = conjugate_target(n=40)
    stop = op.StopRule(epochs=5)
    a = op.sgd_run(target, init(target), cfg(batch_size=40), seed=2, stop=stop)
    b = op.sag_run(target, init(target), cfg(batch_size=40), op.ISagConfig(warm_start_epochs=0), seed=2, stop=stop)
    assert trace_rows(a) == trace_rows(b)


def test_sag_table_of_one_is_sgd():
    target = conjugate_target()
    stop = op.StopRule(epochs=3)
    a = op.sgd_run(target, init(target), cfg(), seed=4, stop=stop)
    b = op.sag_run(target, init(target), cfg(), op.ISagConfig(latest_k=1, warm_start_epochs=0), seed=4, stop=stop)
    assert trace_rows(a) == trace_rows(b)


def test_sag_step_is_mean_of_table():
    # frozen parameters make the fresh estimates those of an SGD run with the same seed
    target = conjugate_target(n=200)
    sag, sgd = [], []
    c, stop = cfg(lr=0.0), op.StopRule(epochs=1)
    op.sag_run(target, init(target), c, op.ISagConfig(warm_start_epochs=0), seed=0, stop=stop,
               callback=lambda *a: sag.append(a[3]))
    op.sgd_run(target, init(target), c, seed=0, stop=stop, callback=lambda *a: sgd.append(a[3]))
    # one epoch over 4 batches: the table grows by one distinct batch per step
    for k in range(1, 5):
        assert np.allclose(sag[k - 1], np.mean(sgd[:k], axis=0), rtol=1e-12)


def test_isag_with_frozen_parameters_matches_sag():
    target = conjugate_target()
    c = cfg(lr=0.0)
    stop = op.StopRule(epochs=3)
    opts = op.ISagConfig(warm_start_epochs=0)
    ga, gb = [], []
    op.sag_run(target, init(target), c, opts, seed=8, stop=stop, callback=lambda *a: ga.append(a[3]))
    op.isag_run(target, init(target), c, opts, seed=8, stop=stop, callback=lambda *a: gb.append(a[3]))
    assert len(ga) == len(gb)
    assert np.allclose(ga, gb, atol=1e-12, rtol=0)


def test_stale_cache_contributes_almost_nothing(rng):
    target = conjugate_target(dim=5)
    p = init(target, scale=0.1)
    _, cache, _ = es.reparam_gradient(p, target, md.full_batch(target.data), es.EstimatorConfig(num_samples=10), rng)
    far = p.with_flat(p.flat() + np.concatenate([np.full(5, 3.0), np.zeros(5)]))
    grad, mean_w = es.importance_gradient(cache, far)
    assert mean_w < 1e-50 and np.max(np.abs(grad)) < 1e-40


def test_sra_with_negligible_memory_tracks_sgd():
    target = conjugate_target()
    stop = op.StopRule(epochs=3)
    a = op.sgd_run(target, init(target), cfg(), seed=6, stop=stop)
    b = op.sra_run(target, init(target), cfg(), op.SraConfig(1e-9, warm_start_epochs=0), seed=6, stop=stop)
    assert len(a.trace) == len(b.trace)
    assert np.allclose(a.params.flat(), b.params.flat(), rtol=1e-6, atol=1e-6)


def test_option_validation():
    with pytest.raises(ValueError):
        op.ISagConfig(latest_k=0)
    with pytest.raises(ValueError):
        op.SraConfig(decay=1.0)
    with pytest.raises(ValueError):
        op.OptimConfig(estimator="pathwise")
    with pytest.raises(ValueError):
        op.run_optimizer("adagrad", conjugate_target(), ap.make_params(dim=2), cfg(), 0, op.StopRule())


def test_score_estimator_runs_without_model_gradients():
    spec = md.ModelSpec("poisson-gamma", 1)
    target = md.Target(spec, md.make_synthetic(spec, np.random.default_rng(0), 100))
    p = ap.make_params(transforms=md.default_transforms(spec), location=-1.0, scale=0.1)
    c = op.OptimConfig(batch_size=50, estimator="score", estimator_cfg=es.EstimatorConfig(num_samples=20))
    res = op.isgd_run(target, p, c, seed=0, stop=op.StopRule(epochs=3))
    assert res.trace[-1].model_grad_evals == 0
    assert res.trace[-1].logp_evals == 20 * sum(r.step_kind == "fresh" for r in res.trace)


def test_sra_average_converges_geometrically_to_constant_gradient(monkeypatch):
    # replace the fresh estimate by a constant to isolate the running average
    g = np.array([1.0, -2.0, 0.5, 3.0])
    monkeypatch.setattr(op._Run, "fresh", lambda self, batch: (g, None, 0.0))
    seen = []
    target = conjugate_target()
    op.sra_run(target, init(target), cfg(), op.SraConfig(0.5, warm_start_epochs=0), seed=0,
               stop=op.StopRule(epochs=2), callback=lambda *a: seen.append(a[3]))
    for k, avg in enumerate(seen, start=1):
        assert np.allclose(avg, (1 - 0.5**k) * g, rtol=1e-12)


@pytest.mark.parametrize("name", ["sgd", "isgd"])
def test_gradient_accounting_per_epoch(name):
    target = conjugate_target(n=200)
    c = op.OptimConfig(batch_size=40, estimator_cfg=es.EstimatorConfig(num_samples=3))
    res = op.run_optimizer(name, target, init(target), c, 0, op.StopRule(epochs=1))
    fresh = sum(r.step_kind == "fresh" for r in res.trace)
    assert fresh == 5
    assert res.trace[-1].model_grad_evals == 5 * 3


@pytest.mark.parametrize("name", sorted(op.OPTIMIZERS))
def test_smoothed_elbo_trends_upwards(name):
    from scipy.stats import kendalltau

    # start far from the posterior so a short budget ends before the plateau
    target = conjugate_target(dim=3, n=1000, seed=1)
    p0 = ap.make_params(dim=3, location=-5.0, scale=0.1)
    res = op.run_optimizer(name, target, p0, cfg(batch_size=10, lr=0.01), 0, op.StopRule(epochs=100, max_steps=600))
    elbo = np.array([r.elbo for r in res.trace])
    smoothed = np.convolve(elbo, np.ones(100) / 100, mode="valid")
    tau, p = kendalltau(np.arange(smoothed.size), smoothed)
    assert tau > 0 and p < 0.01
