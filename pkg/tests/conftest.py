import numpy as np
import pytest

from codepersona.autograd import Graph, Parameter


def numeric_grad(f, x, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. array ``x`` (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    # elementwise, with a 1e-6 floor so exact zeros do not divide by zero
    return float(np.max(np.abs(a - b) / np.maximum(1e-6, np.abs(a) + np.abs(b))))


def check_grads(build, params, h=1e-5):
    """Max relative error between analytic and numeric gradients of ``build``.

    ``build(g)`` returns a scalar tensor; ``params`` are the Parameters to check.
    """
    for p in params:
        p.grad = None
    g = Graph()
    loss = build(g)
    g.backward(loss)
    worst = 0.0
    for p in params:
        num = numeric_grad(lambda: float(build(Graph(record=False)).values), p.values, h)
        worst = max(worst, rel_error(p.grad, num))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def param(rng, shape, name="p", scale=1.0):
    return Parameter(name, "test", rng.normal(size=shape) * scale)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def report_criterion(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
