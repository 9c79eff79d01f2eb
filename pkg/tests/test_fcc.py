import dataclasses

import numpy as np
import pytest

from mer_util.constants import Direction, FccMode
from mer_util.errors import DimensionError
from mer_util.fcc import AxisSlot, fcc_block, fcc_h, fcc_v, init_fcc_params
from mer_util.tensor import Tensor


def oracle_fcc_v(x, emb, weights):
    c, h, w = x.shape
    y = np.zeros_like(x)
    for ch in range(c):
        for i in range(h):
            for j in range(w):
                y[ch, i, j] = sum(weights[ch, s] * (x[ch, (i + s) % h, j] + emb[ch, (i + s) % h]) for s in range(h))
    return y


def oracle_fcc_h(x, emb, weights):
    c, h, w = x.shape
    y = np.zeros_like(x)
    for ch in range(c):
        for i in range(h):
            for j in range(w):
                y[ch, i, j] = sum(weights[ch, s] * (x[ch, i, (j + s) % w] + emb[ch, (j + s) % w]) for s in range(w))
    return y


def slot(emb, weights, direction):
    return AxisSlot(Tensor(emb), Tensor(weights), direction)


def test_fcc_v_delta_kernel_is_identity():
    x = Tensor(np.random.default_rng(0).standard_normal((2, 4, 3)))
    weights = np.zeros((2, 4))
    weights[:, 0] = 1.0
    out = fcc_v(x, slot(np.zeros((2, 4)), weights, Direction.vertical))
    assert np.array_equal(out.data, x.data)


def test_fcc_v_circular_shift():
    x = Tensor(np.array([[[1.0], [2.0]]]))
    out = fcc_v(x, slot(np.zeros((1, 2)), np.array([[0.0, 1.0]]), Direction.vertical))
    assert np.array_equal(out.data, [[[2.0], [1.0]]])


def test_fcc_h_delta_kernel_is_identity():
    x = Tensor(np.random.default_rng(1).standard_normal((2, 3, 5)))
    weights = np.zeros((2, 5))
    weights[:, 0] = 1.0
    out = fcc_h(x, slot(np.zeros((2, 5)), weights, Direction.horizontal))
    assert np.array_equal(out.data, x.data)


def test_fcc_h_circular_shift():
    x = Tensor(np.array([[[1.0, 2.0, 3.0]]]))
    out = fcc_h(x, slot(np.zeros((1, 3)), np.array([[0.0, 1.0, 0.0]]), Direction.horizontal))
    assert np.array_equal(out.data, [[[2.0, 3.0, 1.0]]])


def test_fcc_axes_match_loop_oracle_on_random_instances():
    rng = np.random.default_rng(2)
    for _ in range(100):
        c, h, w = (int(v) for v in rng.integers(1, 7, size=3))
        x = rng.standard_normal((c, h, w))

        emb, weights = rng.standard_normal((c, h)), rng.standard_normal((c, h))
        out = fcc_v(Tensor(x), slot(emb, weights, Direction.vertical))
        assert np.allclose(out.data, oracle_fcc_v(x, emb, weights), atol=1e-12, rtol=0)

        emb, weights = rng.standard_normal((c, w)), rng.standard_normal((c, w))
        out = fcc_h(Tensor(x), slot(emb, weights, Direction.horizontal))
        assert np.allclose(out.data, oracle_fcc_h(x, emb, weights), atol=1e-12, rtol=0)


def test_fcc_rejects_mismatched_slot():
    x = Tensor(np.zeros((2, 4, 3)))
    with pytest.raises(DimensionError):
        fcc_v(x, slot(np.zeros((2, 3)), np.zeros((2, 3)), Direction.vertical))
    with pytest.raises(DimensionError):
        fcc_v(x, slot(np.zeros((2, 4)), np.zeros((2, 4)), Direction.horizontal))


@pytest.mark.parametrize("mode", list(FccMode))
def test_fcc_block_preserves_shape(mode):
    rng = np.random.default_rng(3)
    p = init_fcc_params(rng, 6, 4, 5, mode)
    out = fcc_block(Tensor(rng.standard_normal((6, 4, 5))), p)
    assert out.shape == (6, 4, 5)


def test_fcc_block_full_size_shape():
    rng = np.random.default_rng(4)
    p = init_fcc_params(rng, 128, 16, 16)
    assert fcc_block(Tensor(rng.standard_normal((128, 16, 16))), p).shape == (128, 16, 16)


def test_fcc_block_zero_parameters_give_zero_output():
    rng = np.random.default_rng(5)
    p = init_fcc_params(rng, 3, 4, 4)
    for tensor in p.parameters():
        tensor.data[...] = 0.0
    out = fcc_block(Tensor(rng.standard_normal((3, 4, 4))), p)
    assert not out.data.any()


def test_fcc_block_full_mode_matches_branch_composition():
    rng = np.random.default_rng(6)
    p = init_fcc_params(rng, 2, 3, 4)
    for tensor in p.parameters():
        tensor.data[...] = rng.standard_normal(tensor.shape)
    x = rng.standard_normal((2, 3, 4))

    mixed = np.einsum("oc,chw->ohw", p.pre_mix.kernel.data[:, :, 0, 0], x) + p.pre_mix.bias.data[:, None, None]
    first = oracle_fcc_h(oracle_fcc_v(mixed, p.first_v.embedding.data, p.first_v.weights.data), p.first_h.embedding.data, p.first_h.weights.data)
    second = oracle_fcc_v(oracle_fcc_h(mixed, p.second_h.embedding.data, p.second_h.weights.data), p.second_v.embedding.data, p.second_v.weights.data)
    merged = np.concatenate([first, second])
    expected = np.einsum("oc,chw->ohw", p.post_mix.kernel.data[:, :, 0, 0], merged) + p.post_mix.bias.data[:, None, None]

    assert np.allclose(fcc_block(Tensor(x), p).data, expected, atol=1e-12, rtol=0)


@pytest.mark.parametrize("shift", [1, 2, 3])
def test_fcc_v_commutes_with_circular_row_shift(shift):
    rng = np.random.default_rng(7)
    x = rng.standard_normal((3, 5, 4))
    vertical = slot(np.zeros((3, 5)), rng.standard_normal((3, 5)), Direction.vertical)

    shifted_first = fcc_v(Tensor(np.roll(x, shift, axis=1)), vertical).data
    shifted_after = np.roll(fcc_v(Tensor(x), vertical).data, shift, axis=1)
    assert np.allclose(shifted_first, shifted_after, atol=1e-12, rtol=0)


@pytest.mark.parametrize("shift", [1, 4])
def test_fcc_h_commutes_with_circular_column_shift(shift):
    rng = np.random.default_rng(8)
    x = rng.standard_normal((2, 3, 6))
    horizontal = slot(np.zeros((2, 6)), rng.standard_normal((2, 6)), Direction.horizontal)

    shifted_first = fcc_h(Tensor(np.roll(x, shift, axis=2)), horizontal).data
    shifted_after = np.roll(fcc_h(Tensor(x), horizontal).data, shift, axis=2)
    assert np.allclose(shifted_first, shifted_after, atol=1e-12, rtol=0)


def test_fcc_branches_own_independent_slots():
    rng = np.random.default_rng(9)
    p = init_fcc_params(rng, 3, 4, 5)
    slots = [p.first_v, p.first_h, p.second_h, p.second_v]
    tensors = [t for s in slots for t in (s.embedding, s.weights)]
    assert len({id(t) for t in tensors}) == len(tensors)
    assert len({id(t.data) for t in tensors}) == len(tensors)

    for tensor in p.parameters():
        tensor.data[...] = rng.standard_normal(tensor.shape)
    x = Tensor(rng.standard_normal((3, 4, 5)))
    swapped = dataclasses.replace(
        p, first_v=p.second_v, first_h=p.second_h, second_h=p.first_h, second_v=p.first_v
    )
    assert not np.allclose(fcc_block(x, p).data, fcc_block(x, swapped).data)
