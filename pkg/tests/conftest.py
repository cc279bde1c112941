import numpy as np
import pytest
from hypothesis import settings

from wavevae import tensor as T
from wavevae.tensor import Tensor

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def numeric_grad(f, arrays, index, h=1e-6):
    """Central differences of scalar ``f(*arrays)`` w.r.t. ``arrays[index]``, in float64."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    target = base[index]
    grad = np.zeros_like(target)
    it = np.nditer(target, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = target[i]
        target[i] = old + h
        up = f(*base)
        target[i] = old - h
        down = f(*base)
        target[i] = old
        grad[i] = (up - down) / (2 * h)
    return grad


def rel_error(a, b) -> float:
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def check_gradients(build, arrays, oracle=None):
    """Worst relative error of float32 autodiff gradients against a float64 difference oracle.

    ``build(*tensors)`` must return a scalar Tensor.  ``oracle`` (default
    ``build``) is the function differenced; it differs from ``build`` only where
    stop-gradient values have to be frozen at the base point.
    """
    oracle = oracle or build

    def value(*np_arrays):
        with T.precision(np.float64):
            return oracle(*[Tensor(a) for a in np_arrays]).item()

    leaves = [Tensor(np.asarray(a, dtype=np.float32), requires_grad=True) for a in arrays]
    build(*leaves).backward()
    worst = 0.0
    for i, leaf in enumerate(leaves):
        analytic = leaf.grad if leaf.grad is not None else np.zeros(leaf.shape)
        worst = max(worst, rel_error(analytic, numeric_grad(value, [l.data for l in leaves], i)))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criterion -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
