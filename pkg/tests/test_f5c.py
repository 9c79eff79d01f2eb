import numpy as np
import pytest

from mer_util.ccc import ccc_forward
from mer_util.constants import FccMode
from mer_util.f5c import f5c_forward, f5c_stack, init_f5c_params
from mer_util.fcc import fcc_block
from mer_util.tensor import Tensor


@pytest.fixture
def feature_map():
    return Tensor(np.random.default_rng(0).standard_normal((5, 3, 4)))


def test_f5c_preserves_shape(feature_map):
    p = init_f5c_params(np.random.default_rng(1), 5, 3, 4)
    assert f5c_forward(feature_map, p, 2).shape == (5, 3, 4)


def test_f5c_is_two_residual_steps(feature_map):
    p = init_f5c_params(np.random.default_rng(2), 5, 3, 4)
    y1 = feature_map.data + fcc_block(feature_map, p.fcc).data
    expected = y1 + ccc_forward(Tensor(y1), p.ccc, 2).data
    assert np.allclose(f5c_forward(feature_map, p, 2).data, expected, atol=1e-12, rtol=0)


def test_f5c_without_branches_is_identity(feature_map):
    p = init_f5c_params(np.random.default_rng(3), 5, 3, 4, use_fcc=False, use_ccc=False)
    assert p.parameters() == []
    assert np.array_equal(f5c_forward(feature_map, p, 2).data, feature_map.data)


def test_f5c_with_zeroed_post_mixes_is_identity(feature_map):
    p = init_f5c_params(np.random.default_rng(4), 5, 3, 4)
    for post_mix in (p.fcc.post_mix, p.ccc.post_mix):
        post_mix.kernel.data[...] = 0.0
        post_mix.bias.data[...] = 0.0
    assert np.array_equal(f5c_forward(feature_map, p, 2).data, feature_map.data)


@pytest.mark.parametrize("mode", [FccMode.vertical, FccMode.horizontal])
def test_f5c_single_direction_modes(feature_map, mode):
    p = init_f5c_params(np.random.default_rng(5), 5, 3, 4, fcc_mode=mode, use_ccc=False)
    assert p.ccc is None
    assert f5c_forward(feature_map, p, 2).shape == (5, 3, 4)


def test_f5c_stack_applies_blocks_in_order(feature_map):
    rng = np.random.default_rng(6)
    blocks = [init_f5c_params(rng, 5, 3, 4) for _ in range(2)]
    expected = f5c_forward(f5c_forward(feature_map, blocks[0], 1), blocks[1], 1)
    assert np.array_equal(f5c_stack(feature_map, blocks, 1).data, expected.data)
    assert f5c_stack(feature_map, [], 1) is feature_map
