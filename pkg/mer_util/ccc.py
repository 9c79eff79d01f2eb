"""Channel correspondence convolution (CCC).

Channels of a C x H x W map are vertices of a directed k-NN graph built from
cosine similarity of the flattened channels. Each edge i <- j gets the
feature `ReLU(V1 f_i + V2 (f_j - f_i))`; a channel's output is the
elementwise maximum over its neighbours, reshaped to H x W and mixed by a
1x1 convolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from mer_util import ops
from mer_util.errors import ConfigurationError, DimensionError
from mer_util.parameters import ConvParams, ParamGroup, init_conv, uniform
from mer_util.tensor import Tensor


@dataclass(frozen=True)
class ChannelGraph:
    """Directed k-NN graph over feature map channels.

    Attributes:
        k (int): Neighbours per vertex.
        edges (tuple[tuple[int, ...], ...]): For vertex i, its neighbours j by \
            descending similarity, ties by lower channel index.
    """

    k: int
    edges: tuple[tuple[int, ...], ...]

    def neighbor_array(self) -> np.ndarray:
        """C x k array of neighbours, each row sorted by channel index."""
        return np.sort(np.array(self.edges, dtype=np.intp), axis=1)


@dataclass
class CccParams(ParamGroup):
    """Attributes:
    v1 (Tensor): HW x HW, row s is v_s^(1).
    v2 (Tensor): HW x HW, row s is v_s^(2).
    post_mix (ConvParams): 1x1 convolution C -> C.
    """

    v1: Tensor
    v2: Tensor
    post_mix: ConvParams


def init_ccc_params(
    rng: np.random.Generator, channels: int, height: int, width: int
) -> CccParams:
    hw = height * width
    bound = 1.0 / math.sqrt(hw)
    return CccParams(
        uniform(rng, (hw, hw), bound),
        uniform(rng, (hw, hw), bound),
        init_conv(rng, channels, channels, 1, relu_gain=False),
    )


def cosine_similarity(features: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity of the rows of a C x D array.

    A zero row has similarity 0 to every row.
    """
    norms = np.linalg.norm(features, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = features / safe[:, None]
    sims = unit @ unit.T
    zero = norms == 0
    sims[zero, :] = 0.0
    sims[:, zero] = 0.0
    return sims


def _check_k(k: int, channels: int) -> None:
    if not 1 <= k <= channels - 1:
        raise ConfigurationError(f"k = {k} outside [1, {channels - 1}] for {channels} channels")


def build_knn_graph(x: Tensor, k: int) -> ChannelGraph:
    """Top-k cosine neighbours of every channel, self excluded.

    The selection is discrete and recorded on no tape; it is rebuilt on every
    forward pass.

    Args:
        x (Tensor): C x H x W.
        k (int): 1 <= k <= C - 1.

    Raises:
        ConfigurationError: When k is out of range.

    Returns:
        ChannelGraph
    """
    if x.ndim != 3:
        raise DimensionError("build_knn_graph", x.shape)
    channels = x.shape[0]
    _check_k(k, channels)

    sims = cosine_similarity(x.data.reshape(channels, -1))
    index = np.arange(channels)
    edges = []
    for i in range(channels):
        candidates = index[index != i]
        # lexsort: last key primary; descending similarity, then ascending index
        order = np.lexsort((candidates, -sims[i, candidates]))
        edges.append(tuple(int(j) for j in candidates[order[:k]]))

    return ChannelGraph(k, tuple(edges))


def edge_feature(f_i: Tensor, f_j: Tensor, p: CccParams) -> Tensor:
    """`e_s = ReLU(v_s^(1) . f_i + v_s^(2) . (f_j - f_i))` for one edge.

    Args:
        f_i (Tensor): HW vector of the centre channel.
        f_j (Tensor): HW vector of the neighbour channel.
        p (CccParams)

    Returns:
        Tensor: HW vector.
    """
    if f_i.shape != f_j.shape or f_i.shape != (p.v1.shape[1],):
        raise DimensionError("edge_feature", f_i.shape, f_j.shape, p.v1.shape)
    return ops.relu(
        ops.add(
            ops.fully_connected(f_i, p.v1),
            ops.fully_connected(ops.sub(f_j, f_i), p.v2),
        )
    )


def ccc_forward(x: Tensor, p: CccParams, k: int, graph: ChannelGraph | None = None) -> Tensor:
    """Channel correspondence convolution of a C x H x W map.

    `f_i^(o)[s] = max_j e_{i,j,s}` over the graph neighbours j of i. The
    neighbours are visited in ascending channel index, so a tie sends the
    gradient to the lowest index.

    Args:
        x (Tensor): C x H x W.
        p (CccParams)
        k (int): Neighbour count.
        graph (ChannelGraph, optional): Precomputed graph. Built from `x` when \
            None. Defaults to None.

    Returns:
        Tensor: C x H x W.
    """
    if x.ndim != 3 or p.v1.shape != (x.shape[1] * x.shape[2],) * 2:
        raise DimensionError("ccc_forward", x.shape, p.v1.shape)
    channels, height, width = x.shape
    _check_k(k, channels)

    if graph is None:
        graph = build_knn_graph(x, k)
    neighbors = graph.neighbor_array()

    flat = ops.reshape(x, (channels, height * width))
    centre = ops.fully_connected(flat, p.v1)  # rows: V1 f_i
    projected = ops.fully_connected(flat, p.v2)  # rows: V2 f_i

    # V1 f_i + V2 (f_j - f_i) = (V1 f_i - V2 f_i) + V2 f_j
    own = ops.reshape(ops.sub(centre, projected), (channels, 1, height * width))
    edges = ops.relu(ops.add(own, ops.take_rows(projected, neighbors)))
    aggregated = ops.max_along(edges, axis=1)

    return p.post_mix(ops.reshape(aggregated, (channels, height, width)))
