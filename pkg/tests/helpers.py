"""Shared numerical helpers for the test suite."""
import numpy as np

from isvi import approximation as ap


def quadratic_logp(z, a, b):
    """Smooth test log-density ``-0.5 sum a z^2 + b.z`` and its gradient."""
    return -0.5 * np.sum(a * z * z, axis=-1) + z @ b, -a * z + b


def integrand(params, eps, a, b):
    """Single-sample reparameterized integrand ``log p(f(eps)) + log|det J_f|``."""
    z = ap.forward(params, eps)
    return quadratic_logp(z, a, b)[0] + ap.log_det_jacobian(params, eps)


def fd_gradient(fn, x, h=1e-6):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fn(x + e) - fn(x - e)) / (2 * h)
    return g


def assert_rel_close(actual, expected, rtol, floor=1.0):
    actual, expected = np.asarray(actual), np.asarray(expected)
    err = np.abs(actual - expected) / np.maximum(np.abs(expected), floor)
    assert np.all(err <= rtol), f"max relative error {err.max():.3g} > {rtol}"


def fd5_gradient(fn, x, rel_step=1e-3):
    """Five-point central differences with a step proportional to ``|x_i|``."""
    g = np.empty_like(x)
    for i in range(x.size):
        h = rel_step * max(abs(x[i]), 1e-2)
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fn(x - 2 * e) - 8 * fn(x - e) + 8 * fn(x + e) - fn(x + 2 * e)) / (12 * h)
    return g


# PASS/FAIL lines from the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def report(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)
    return ok
