"""F5C: FCC and CCC composed with two residual connections."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from mer_util import ops
from mer_util.ccc import CccParams, ccc_forward, init_ccc_params
from mer_util.constants import FccMode
from mer_util.errors import DimensionError
from mer_util.fcc import FccParams, fcc_block, init_fcc_params
from mer_util.parameters import ParamGroup
from mer_util.tensor import Tensor


@dataclass
class F5cParams(ParamGroup):
    """Attributes:
    fcc (FccParams | None): None drops the FCC residual branch.
    ccc (CccParams | None): None drops the CCC residual branch.
    """

    fcc: Optional[FccParams]
    ccc: Optional[CccParams]


def init_f5c_params(
    rng: np.random.Generator,
    channels: int,
    height: int,
    width: int,
    *,
    fcc_mode: FccMode = FccMode.full,
    use_fcc: bool = True,
    use_ccc: bool = True,
) -> F5cParams:
    return F5cParams(
        init_fcc_params(rng, channels, height, width, fcc_mode) if use_fcc else None,
        init_ccc_params(rng, channels, height, width) if use_ccc else None,
    )


def f5c_forward(x: Tensor, p: F5cParams, k: int) -> Tensor:
    """`y1 = x + fcc_block(x)`, `y = y1 + ccc_forward(y1)`; shape preserved.

    Args:
        x (Tensor): C x H x W.
        p (F5cParams)
        k (int): CCC neighbour count.

    Returns:
        Tensor: C x H x W.
    """
    if x.ndim != 3:
        raise DimensionError("f5c_forward", x.shape)

    y = x
    if p.fcc is not None:
        y = ops.add(y, fcc_block(y, p.fcc))
    if p.ccc is not None:
        y = ops.add(y, ccc_forward(y, p.ccc, k))
    return y


def f5c_stack(x: Tensor, blocks: Sequence[F5cParams], k: int) -> Tensor:
    """Apply F5C blocks in order; an empty stack is the identity."""
    for block in blocks:
        x = f5c_forward(x, block, k)
    return x
