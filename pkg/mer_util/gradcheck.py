"""Central finite-difference checks of every differentiable operation.

A check reduces the output of an operation to the scalar `sum(out * R)` with
a fixed random R, then compares the tape gradient with central differences
at a sample of coordinates. The relative error is
`|a - n| / max(|a|, |n|, floor)`. Where the step-h and step-2h estimates
disagree the coordinate sits on a kink (ReLU, max, |x|, a k-NN switch) and
the inputs are redrawn.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from mer_util import constants, ops
from mer_util.backbone import init_backbone_params, rich_feature
from mer_util.ccc import CccParams, ccc_forward, edge_feature, init_ccc_params
from mer_util.constants import Direction, FccMode
from mer_util.f5c import f5c_forward, init_f5c_params
from mer_util.fcc import AxisSlot, fcc_block, fcc_h, fcc_v, init_axis_slot, init_fcc_params
from mer_util.heads import (
    flow_head,
    init_flow_head,
    init_landmark_head,
    init_mer_head,
    landmark_head,
    mer_head,
)
from mer_util.losses import ce_loss, flow_loss, full_loss, inter_ocular_distance, landmark_loss
from mer_util.model import ModelConfig, active_parameters, forward_clip, init_model
from mer_util.parameters import init_conv
from mer_util.tensor import Tensor, gradients, no_grad

logger = logging.getLogger(__name__)

Case = tuple[Callable[[], Tensor], list[Tensor]]
CaseBuilder = Callable[[np.random.Generator], Case]


@dataclass(frozen=True)
class GradCheckReport:
    """Attributes:
    name (str)
    max_rel_error (float): Worst relative error over the checked coordinates.
    checked (int): Coordinates compared.
    kinks (int): Coordinates skipped on the final attempt.
    attempts (int): Input draws used.
    tolerance (float)
    """

    name: str
    max_rel_error: float
    checked: int
    kinks: int
    attempts: int
    tolerance: float = constants.GRADCHECK_TOLERANCE

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.max_rel_error <= self.tolerance


def relative_error(a: float, n: float, floor: float = constants.GRADCHECK_FLOOR) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def grad_check(
    name: str,
    build: CaseBuilder,
    rng: np.random.Generator,
    *,
    step: float = constants.GRADCHECK_STEP,
    tolerance: float = constants.GRADCHECK_TOLERANCE,
    max_checks: Optional[int] = 20,
    attempts: int = constants.GRADCHECK_ATTEMPTS,
) -> GradCheckReport:
    """Check the tape gradient of one operation against central differences.

    Args:
        name (str): Label of the check.
        build (CaseBuilder): Draws fresh inputs; returns a closure computing \
            the output and the tensors to differentiate against.
        rng (np.random.Generator): Source of inputs, cotangent and coordinates.
        step (float): Finite-difference step. Defaults to 1e-5.
        tolerance (float): Maximum accepted relative error. Defaults to 1e-4.
        max_checks (int, optional): Coordinates sampled per tensor; None \
            checks all. Defaults to 20.
        attempts (int): Input draws before kinks are tolerated. Defaults to 5.

    Returns:
        GradCheckReport
    """
    for attempt in range(1, attempts + 1):
        fn, inputs = build(rng)
        out = fn()
        cotangent = Tensor(rng.standard_normal(out.shape))
        analytic = gradients(ops.sum_all(ops.mul(out, cotangent)), inputs)

        def objective() -> float:
            with no_grad():
                return float((fn().data * cotangent.data).sum())

        worst, checked, kinks = 0.0, 0, 0
        for tensor, grad in zip(inputs, analytic):
            size = tensor.size
            if max_checks is None or size <= max_checks:
                coords = np.arange(size)
            else:
                coords = rng.choice(size, max_checks, replace=False)

            for flat in coords:
                index = np.unravel_index(int(flat), tensor.shape)
                original = tensor.data[index]

                def central(h: float) -> float:
                    tensor.data[index] = original + h
                    plus = objective()
                    tensor.data[index] = original - h
                    minus = objective()
                    tensor.data[index] = original
                    return (plus - minus) / (2.0 * h)

                numeric = central(step)
                if relative_error(numeric, central(2.0 * step)) > tolerance:
                    kinks += 1
                    continue
                worst = max(worst, relative_error(float(grad[index]), numeric))
                checked += 1

        if kinks == 0 or attempt == attempts:
            report = GradCheckReport(name, worst, checked, kinks, attempt, tolerance)
            logger.debug("%s: max relative error %.3g over %d coordinates", name, worst, checked)
            return report

        logger.debug("%s: %d kinks on attempt %d, redrawing", name, kinks, attempt)

    raise AssertionError("unreachable")


# CASES


def _tensor(rng: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _case_conv2d(rng: np.random.Generator) -> Case:
    x, k, b = _tensor(rng, 2, 5, 5), _tensor(rng, 3, 2, 3, 3), _tensor(rng, 3)
    return (lambda: ops.conv2d(x, k, b, (2, 1), (1, 0))), [x, k, b]


def _case_conv3d(rng: np.random.Generator) -> Case:
    x, k, b = _tensor(rng, 2, 3, 4, 4), _tensor(rng, 2, 2, 2, 3, 3), _tensor(rng, 2)
    return (lambda: ops.conv3d(x, k, b, (1, 1, 1), (1, 1, 1))), [x, k, b]


def _case_conv_transpose2d(rng: np.random.Generator) -> Case:
    x, k, b = _tensor(rng, 2, 3, 3), _tensor(rng, 2, 3, 4, 4), _tensor(rng, 3)
    return (lambda: ops.conv_transpose2d(x, k, b, (2, 2), (1, 1))), [x, k, b]


def _case_maxpool3d(rng: np.random.Generator) -> Case:
    x = _tensor(rng, 2, 4, 4, 4)
    return (lambda: ops.maxpool3d(x, (2, 2, 2))), [x]


def _case_fully_connected(rng: np.random.Generator) -> Case:
    x, w, b = _tensor(rng, 3, 4), _tensor(rng, 5, 4), _tensor(rng, 5)
    return (lambda: ops.relu(ops.fully_connected(x, w, b))), [x, w, b]


def _case_circular_conv(direction: Direction) -> CaseBuilder:
    def build(rng: np.random.Generator) -> Case:
        x = _tensor(rng, 3, 4, 5)
        w = _tensor(rng, 3, 4 if direction is Direction.vertical else 5)
        return (lambda: ops.circular_conv(x, w, direction)), [x, w]

    return build


def _case_fcc_axis(direction: Direction) -> CaseBuilder:
    def build(rng: np.random.Generator) -> Case:
        x = _tensor(rng, 3, 4, 5)
        slot = init_axis_slot(rng, 3, 4 if direction is Direction.vertical else 5, direction)
        slot.embedding.data[:] = rng.standard_normal(slot.embedding.shape)
        op = fcc_v if direction is Direction.vertical else fcc_h
        return (lambda: op(x, slot)), [x, *slot.parameters()]

    return build


def _case_fcc_block(mode: FccMode) -> CaseBuilder:
    def build(rng: np.random.Generator) -> Case:
        x = _tensor(rng, 3, 4, 4)
        p = init_fcc_params(rng, 3, 4, 4, mode)
        return (lambda: fcc_block(x, p)), [x, *p.parameters()]

    return build


def _case_edge_feature(rng: np.random.Generator) -> Case:
    f_i, f_j = _tensor(rng, 6), _tensor(rng, 6)
    p = CccParams(_tensor(rng, 6, 6), _tensor(rng, 6, 6), init_conv(rng, 2, 2, 1))
    return (lambda: edge_feature(f_i, f_j, p)), [f_i, f_j, p.v1, p.v2]


def _case_ccc(rng: np.random.Generator) -> Case:
    x = _tensor(rng, 4, 2, 3)
    p = init_ccc_params(rng, 4, 2, 3)
    return (lambda: ccc_forward(x, p, 2)), [x, *p.parameters()]


def _case_f5c(rng: np.random.Generator) -> Case:
    x = _tensor(rng, 4, 2, 2)
    p = init_f5c_params(rng, 4, 2, 2)
    return (lambda: f5c_forward(x, p, 2)), [x, *p.parameters()]


def _case_backbone(rng: np.random.Generator) -> Case:
    frame = Tensor(rng.uniform(0.0, 1.0, (1, 16, 16)), requires_grad=True)
    p = init_backbone_params(rng, 1, (2, 3, 4, 4), 16)
    return (lambda: rich_feature(frame, p)), [frame, *p.parameters()]


def _case_mer_head(rng: np.random.Generator) -> Case:
    seq = _tensor(rng, 8, 2, 2, 2)
    p = init_mer_head(rng, 8, 2, 2, 5, channels=3, fc_width=6)
    return (lambda: mer_head(seq, p)), [seq, *p.parameters()]


def _case_flow_head(rng: np.random.Generator) -> Case:
    frames = [Tensor(rng.uniform(0.0, 1.0, (1, 16, 16)), requires_grad=True) for _ in range(2)]
    features = [_tensor(rng, 4, 2, 2) for _ in range(2)]
    p = init_flow_head(rng, 1, 4, (2, 3, 4))
    return (lambda: flow_head(*frames, *features, p)), [*frames, *features, *p.parameters()]


def _case_landmark_head(rng: np.random.Generator) -> Case:
    feature = _tensor(rng, 4, 2, 2)
    p = init_landmark_head(rng, 4, 2, 68, 16, channels=2, fc_width=6)
    return (lambda: landmark_head(feature, p)), [feature, *p.parameters()]


def _case_ce_loss(rng: np.random.Generator) -> Case:
    logits = _tensor(rng, 5)
    return (lambda: ce_loss(logits, 2)), [logits]


def _case_flow_loss(rng: np.random.Generator) -> Case:
    pred = [_tensor(rng, 2, 4, 4) for _ in range(2)]
    truth = [rng.standard_normal((2, 4, 4)) for _ in range(2)]
    return (lambda: flow_loss(pred, truth)), pred


def _case_landmark_loss(rng: np.random.Generator) -> Case:
    truth = [rng.uniform(0.0, 16.0, 136) for _ in range(2)]
    pred = [Tensor(g + rng.standard_normal(136), requires_grad=True) for g in truth]
    d_o = [inter_ocular_distance(g) for g in truth]
    return (lambda: landmark_loss(pred, truth, d_o)), pred


def _case_joint_loss(rng: np.random.Generator) -> Case:
    config = ModelConfig.reduced()
    params = init_model(config, int(rng.integers(1 << 16)))
    frames = [Tensor(rng.uniform(0.0, 1.0, (1, 16, 16))) for _ in range(config.t)]
    flows = [rng.standard_normal((2, 16, 16)) for _ in range(config.t - 1)]
    marks = [rng.uniform(0.0, 16.0, 136) for _ in range(config.t - 1)]
    d_o = [inter_ocular_distance(g) for g in marks]
    label = int(rng.integers(config.n_classes))

    def fn() -> Tensor:
        out = forward_clip(frames, params, config)
        return full_loss(
            ce_loss(out.logits, label),
            flow_loss(out.flows, flows),
            landmark_loss(out.landmarks, marks, d_o),
        )

    return fn, [t for _, t in active_parameters(params, config)]


SUITE: dict[str, CaseBuilder] = {
    "conv2d": _case_conv2d,
    "conv3d": _case_conv3d,
    "conv_transpose2d": _case_conv_transpose2d,
    "maxpool3d": _case_maxpool3d,
    "fully_connected": _case_fully_connected,
    "circular_conv_v": _case_circular_conv(Direction.vertical),
    "circular_conv_h": _case_circular_conv(Direction.horizontal),
    "fcc_v": _case_fcc_axis(Direction.vertical),
    "fcc_h": _case_fcc_axis(Direction.horizontal),
    "fcc_block": _case_fcc_block(FccMode.full),
    "fcc_block_vertical": _case_fcc_block(FccMode.vertical),
    "fcc_block_horizontal": _case_fcc_block(FccMode.horizontal),
    "edge_feature": _case_edge_feature,
    "ccc_forward": _case_ccc,
    "f5c_forward": _case_f5c,
    "rich_feature": _case_backbone,
    "mer_head": _case_mer_head,
    "flow_head": _case_flow_head,
    "landmark_head": _case_landmark_head,
    "ce_loss": _case_ce_loss,
    "flow_loss": _case_flow_loss,
    "landmark_loss": _case_landmark_loss,
    "full_loss": _case_joint_loss,
}


def gradient_suite(
    seed: int = 0,
    *,
    names: Optional[list[str]] = None,
    max_checks: Optional[int] = 20,
    tolerance: float = constants.GRADCHECK_TOLERANCE,
    step: float = constants.GRADCHECK_STEP,
) -> list[GradCheckReport]:
    """Run the checks in `names` (all by default).

    Each check draws from a stream keyed by (seed, position in `SUITE`), so a
    subset reproduces the numbers of the full run.
    """
    order = list(SUITE)
    reports = []
    for name in names if names is not None else order:
        rng = np.random.default_rng([seed, order.index(name)])
        reports.append(
            grad_check(name, SUITE[name], rng, step=step, tolerance=tolerance, max_checks=max_checks)
        )
    return reports
