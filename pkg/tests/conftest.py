import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lofno.autodiff import Tape

settings.register_profile(
    "default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("default")


def fd_check(fn, inputs, seed=0, eps=1e-6, n_dirs=2):
    """Largest relative error between reverse-mode and central-difference directional derivatives.

    ``fn(tape, vars)`` returns a scalar Var; ``inputs`` are float64/complex128 arrays.
    """
    rng = np.random.default_rng(seed)
    tape = Tape()
    vs = [tape.leaf(a) for a in inputs]
    tape.backward(fn(tape, vs))
    grads = [v.grad for v in vs]
    worst = 0.0
    for i, a in enumerate(inputs):
        for _ in range(n_dirs):
            d = rng.standard_normal(a.shape)
            if np.iscomplexobj(a):
                d = d + 1j * rng.standard_normal(a.shape)

            def ev(x):
                ins = list(inputs)
                ins[i] = x
                t = Tape(enabled=False)
                return float(fn(t, [t.const(z) for z in ins]).value)

            fd = (ev(a + eps * d) - ev(a - eps * d)) / (2 * eps)
            g = grads[i] if grads[i] is not None else np.zeros_like(a)
            ad = float(np.real(np.vdot(g, d))) if np.iscomplexobj(a) else float((g * d).sum())
            worst = max(worst, abs(fd - ad) / max(abs(fd), abs(ad), 1e-8))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
