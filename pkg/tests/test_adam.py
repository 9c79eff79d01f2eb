import numpy as np
import pytest

from mer_util.adam import adam_step, init_adam
from mer_util.errors import DimensionError
from mer_util.tensor import Tensor


def test_first_step_moves_by_learning_rate():
    p = Tensor([1.0], requires_grad=True)
    state = init_adam([p], lr=5e-5)
    adam_step([p], [np.array([1.0])], state)
    assert p.data[0] == pytest.approx(0.99995, abs=1e-10)
    assert state.step == 1


def test_step_direction_follows_gradient_sign():
    p = Tensor([0.0, 0.0, 0.0], requires_grad=True)
    state = init_adam([p], lr=0.1)
    adam_step([p], [np.array([2.0, -3.0, 0.0])], state)
    assert p.data[0] < 0 < p.data[1]
    assert p.data[2] == 0.0


def test_matches_reference_over_several_steps():
    rng = np.random.default_rng(0)
    grads = rng.standard_normal((4, 3))
    p = Tensor(np.zeros(3), requires_grad=True)
    state = init_adam([p], lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8)

    theta, m, v = np.zeros(3), np.zeros(3), np.zeros(3)
    for step, g in enumerate(grads, start=1):
        adam_step([p], [g], state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta -= 0.01 * (m / (1 - 0.9**step)) / (np.sqrt(v / (1 - 0.999**step)) + 1e-8)

    assert np.allclose(p.data, theta, atol=1e-12)


def test_identity_of_parameter_tensors_is_kept():
    p = Tensor([1.0, 2.0], requires_grad=True)
    state = init_adam([p])
    adam_step([p], [np.ones(2)], state)
    assert p.requires_grad


def test_mismatched_gradients_are_rejected():
    p = Tensor([1.0, 2.0], requires_grad=True)
    state = init_adam([p])
    with pytest.raises(DimensionError):
        adam_step([p], [np.ones(3)], state)
    with pytest.raises(DimensionError):
        adam_step([p], [], state)
