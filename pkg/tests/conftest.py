import numpy as np
import pytest

from retinex_ssm.autodiff import Tape, Tensor, backward, tsum
from retinex_ssm.bench import single_lane
from retinex_ssm.model import ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(n_feat=8, heads_base_width=8, d_state_base=4)


@pytest.fixture(autouse=True)
def _one_thread():
    with single_lane():
        yield


def grad_of(fn, *leaves, proj=None):
    """Gradients of sum(fn() * proj) w.r.t. each leaf."""
    for t in leaves:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        out = fn()
        weight = np.ones(out.shape) if proj is None else proj
        loss = tsum(out * Tensor(weight.astype(out.dtype)))
    backward(tape, loss)
    return [t.grad for t in leaves]


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; call before asserting so failures are reported too."""

    def record(label: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
