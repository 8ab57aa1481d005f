import numpy as np
import pytest

from mzen import autodiff as ad


def central_difference(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def assert_grad_close(analytic, numeric, rel=1e-4, abs_=1e-7):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    err = np.abs(analytic - numeric)
    tol = np.maximum(rel * np.maximum(np.abs(analytic), np.abs(numeric)), abs_)
    assert np.all(err <= tol), f"max err {err.max()} (analytic {analytic.ravel()[:6]}, numeric {numeric.ravel()[:6]})"


def check_op_gradient(fn, *inputs, rel=1e-4, abs_=1e-7, h=1e-5, seed=0):
    """Compare backward() of sum(fn(*inputs) * w) against central differences."""
    rng = np.random.default_rng(seed)
    leaves = [ad.Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    out = fn(*leaves)
    w = rng.normal(size=out.shape)
    grads = ad.backward(ad.sum_(out * w), accumulate=False)
    for k, leaf in enumerate(leaves):
        def f(xk, k=k):
            args = [ad.Tensor(x) for x in inputs]
            args[k] = ad.Tensor(xk)
            with ad.no_grad():
                return float(np.sum(fn(*args).value * w))
        numeric = central_difference(f, inputs[k], h)
        assert_grad_close(grads.get(leaf, np.zeros_like(leaf.value)), numeric, rel, abs_)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
