import dataclasses
import math

import numpy as np
import pytest

from mer_util.errors import ConfigurationError, DatasetError, DimensionError
from mer_util.losses import (
    LossWeights,
    ce_loss,
    flow_loss,
    full_loss,
    inter_ocular_distance,
    landmark_loss,
)
from mer_util.model import active_parameters, init_model
from mer_util.synthetic import template_68
from mer_util.tensor import Tensor, backward, gradients
from mer_util.training import clip_losses


def test_ce_loss_of_uniform_logits():
    assert ce_loss(Tensor(np.zeros(5)), 2).item() == pytest.approx(math.log(5), abs=1e-12)


def test_ce_loss_rejects_label_out_of_range():
    with pytest.raises(ConfigurationError):
        ce_loss(Tensor(np.zeros(3)), 3)


def test_ce_gradient_is_softmax_minus_onehot():
    logits = Tensor([1.0, 2.0, 0.5], requires_grad=True)
    backward(ce_loss(logits, 1))
    probs = np.exp(logits.data) / np.exp(logits.data).sum()
    assert np.allclose(logits.grad, probs - np.array([0.0, 1.0, 0.0]), atol=1e-12)


def test_flow_loss_is_mean_of_per_pair_mse():
    gt = [np.zeros((2, 2, 2)), np.zeros((2, 2, 2))]
    pred = [Tensor(np.ones((2, 2, 2))), Tensor(np.full((2, 2, 2), 3.0))]
    assert flow_loss(pred, gt).item() == pytest.approx((1.0 + 9.0) / 2)


def test_flow_loss_of_exact_prediction_is_zero():
    field = np.random.default_rng(0).standard_normal((2, 3, 3))
    assert flow_loss([Tensor(field)], [field]).item() == 0.0


def test_flow_loss_rejects_length_mismatch():
    with pytest.raises(DimensionError):
        flow_loss([Tensor(np.zeros((2, 2, 2)))], [])


def test_landmark_loss_single_point_example():
    pred = [Tensor([3.0, 4.0])]
    gt = [np.zeros(2)]
    assert landmark_loss(pred, gt, [5.0]).item() == pytest.approx(1.4)


def test_landmark_loss_normalizes_by_points_and_pairs():
    pred = [Tensor(np.ones(4)), Tensor(np.zeros(4))]
    gt = [np.zeros(4), np.zeros(4)]
    assert landmark_loss(pred, gt, [2.0, 1.0]).item() == pytest.approx((4.0 / 2.0) / (2 * 2))


def test_landmark_loss_rejects_non_positive_distance():
    with pytest.raises(DatasetError):
        landmark_loss([Tensor([1.0, 1.0])], [np.zeros(2)], [0.0])


def test_inter_ocular_distance_of_shifted_eyes():
    points = np.zeros((68, 2))
    points[36:42] = (10.0, 20.0)
    points[42:48] = (40.0, 60.0)
    assert inter_ocular_distance(points.reshape(-1)) == pytest.approx(50.0)


def test_inter_ocular_distance_of_template_is_positive():
    assert inter_ocular_distance(template_68().reshape(-1)) > 0


def test_inter_ocular_distance_needs_eyes():
    with pytest.raises(ConfigurationError):
        inter_ocular_distance(np.zeros(10))


def test_full_loss_with_default_weights():
    one = Tensor(1.0)
    assert full_loss(one, one, one).item() == pytest.approx(69.1)


def test_full_loss_with_zero_weights_is_ce_loss():
    total = full_loss(Tensor(0.7), Tensor(5.0), Tensor(9.0), LossWeights(0.0, 0.0))
    assert total.item() == pytest.approx(0.7)


def test_negative_weights_are_rejected():
    with pytest.raises(ConfigurationError):
        LossWeights(lambda_f=-0.1)


def test_ce_loss_worked_example():
    logits = Tensor(np.log([7.0, 1.0, 1.0, 0.5, 0.5]))
    assert ce_loss(logits, 0).item() == pytest.approx(-math.log(0.7), abs=1e-12)
    assert ce_loss(logits, 0).item() == pytest.approx(0.35667, abs=1e-5)


def test_ce_loss_vanishes_for_confident_correct_logits():
    assert ce_loss(Tensor([50.0, 0.0, 0.0]), 0).item() < 1e-15


@pytest.mark.parametrize("shift", [-37.5, 3.0, 100.0])
def test_ce_loss_is_invariant_to_logit_shift(shift):
    logits = np.random.default_rng(4).standard_normal(5)
    for label in range(5):
        assert ce_loss(Tensor(logits + shift), label).item() == pytest.approx(
            ce_loss(Tensor(logits), label).item(), abs=1e-12
        )


def test_ce_loss_is_stable_for_large_logits():
    assert ce_loss(Tensor([1000.0, 0.0]), 1).item() == pytest.approx(1000.0)


def test_flow_loss_of_constant_offset_is_one():
    gt = np.random.default_rng(5).standard_normal((3, 2, 4, 4))
    assert flow_loss([Tensor(g + 1.0) for g in gt], list(gt)).item() == pytest.approx(1.0, abs=1e-12)


def test_flow_and_landmark_losses_match_formulas_on_random_instances():
    rng = np.random.default_rng(6)
    for _ in range(20):
        pairs, h, w, m = (int(v) for v in rng.integers(1, 5, size=4))
        pred, gt = rng.standard_normal((pairs, 2, h, w)), rng.standard_normal((pairs, 2, h, w))
        expected = sum(((p - g) ** 2).sum() / (2 * h * w) for p, g in zip(pred, gt)) / pairs
        assert flow_loss([Tensor(p) for p in pred], list(gt)).item() == pytest.approx(expected, abs=1e-12)

        points, truth = rng.standard_normal((pairs, 2 * m)), rng.standard_normal((pairs, 2 * m))
        d_o = rng.uniform(0.5, 2.0, size=pairs)
        expected = sum(np.abs(p - g).sum() / d for p, g, d in zip(points, truth, d_o)) / (m * pairs)
        loss = landmark_loss([Tensor(p) for p in points], list(truth), list(d_o))
        assert loss.item() == pytest.approx(expected, abs=1e-12)


def test_full_loss_gradient_is_weighted_sum_of_task_gradients(tiny_clips, tiny_manifest, tiny_run_config):
    config = tiny_run_config.model_config(tiny_manifest.n_classes, tiny_manifest.t, tiny_manifest.m)
    params = init_model(config, seed=3)
    tensors = [t for _, t in active_parameters(params, config)]
    weights = LossWeights(0.1, 68.0)

    def grads(task):
        return gradients(getattr(clip_losses(tiny_clips[0], params, config, weights), task), tensors)

    total, g_e, g_f, g_m = grads("total"), grads("l_e"), grads("l_f"), grads("l_m")
    for t, e, f, m in zip(total, g_e, g_f, g_m):
        assert np.allclose(t, e + 0.1 * f + 68.0 * m, rtol=1e-9, atol=1e-12)


def test_zero_flow_weight_cuts_gradient_into_flow_head(tiny_clips, tiny_manifest, tiny_run_config):
    config = tiny_run_config.model_config(tiny_manifest.n_classes, tiny_manifest.t, tiny_manifest.m)
    params = init_model(config, seed=3)
    named = active_parameters(params, config)
    losses = clip_losses(tiny_clips[0], params, config, LossWeights(0.0, 68.0))
    grads = dict(zip((name for name, _ in named), gradients(losses.total, [t for _, t in named])))

    flow_names = [name for name in grads if name.startswith("flow.")]
    assert flow_names
    assert all(not grads[name].any() for name in flow_names)
    assert any(grads[name].any() for name in grads if name.startswith("backbone."))


@pytest.mark.parametrize("disabled", ["use_flow", "use_landmark", "use_mer"])
def test_disabling_a_head_keeps_the_other_losses(tiny_clips, tiny_manifest, tiny_run_config, disabled):
    full = tiny_run_config.model_config(tiny_manifest.n_classes, tiny_manifest.t, tiny_manifest.m)
    ablated = dataclasses.replace(full, **{disabled: False})
    before = clip_losses(tiny_clips[0], init_model(full, seed=3), full)
    after = clip_losses(tiny_clips[0], init_model(ablated, seed=3), ablated)

    for task, flag in (("l_e", "use_mer"), ("l_f", "use_flow"), ("l_m", "use_landmark")):
        value = getattr(after, task).item()
        if flag == disabled:
            assert value == 0.0
        else:
            assert value == pytest.approx(getattr(before, task).item(), rel=1e-12, abs=1e-12)
