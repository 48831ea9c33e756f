import numpy as np
import pytest

from amidlab.autodiff import ShapeError, Tensor
from amidlab.optim import AdamState, adam_step


def _param(value):
    return {"w": Tensor(np.array([value]), requires_grad=True, name="w")}


def test_first_step_closed_form():
    params = _param(1.0)
    state = AdamState(lr=1e-3)
    adam_step(params, {"w": np.array([0.5])}, state)
    # m_hat = g and v_hat = g^2, so the step is lr * g / (|g| + eps)
    expected = 1.0 - 1e-3 * 0.5 / (0.5 + 1e-8)
    assert params["w"].data[0] == pytest.approx(expected, abs=1e-15)
    assert params["w"].data[0] == pytest.approx(0.999, abs=1e-8)
    assert state.step_count == 1


def test_zero_gradient_leaves_params():
    params = _param(2.0)
    state = AdamState(lr=0.1)
    adam_step(params, {"w": np.zeros(1)}, state)
    assert params["w"].data[0] == 2.0


def test_constant_gradient_decreases_monotonically():
    params = _param(0.0)
    state = AdamState(lr=1e-2)
    seen = [0.0]
    for _ in range(2):
        adam_step(params, {"w": np.ones(1)}, state)
        seen.append(params["w"].data[0])
    # hand-rolled two-step Adam
    m = v = 0.0
    theta = 0.0
    for t in (1, 2):
        m = 0.9 * m + 0.1
        v = 0.999 * v + 0.001
        theta -= 1e-2 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert seen[0] > seen[1] > seen[2]
    assert seen[2] == pytest.approx(theta, abs=1e-15)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step(_param(1.0), {"w": np.ones(2)}, AdamState(lr=1e-3))
