"""Learnable parameter containers and initializers."""

from __future__ import annotations

import dataclasses
import math
import zlib
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from mer_util import constants, ops
from mer_util.errors import ConfigurationError
from mer_util.tensor import Tensor


class ParamGroup:
    """Mixin for dataclasses holding learnable tensors.

    Fields that are `Tensor`s, nested `ParamGroup`s or lists of either are
    walked in declaration order; every other field is a hyperparameter and
    is skipped.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for f in dataclasses.fields(self):  # type: ignore[arg-type]
            yield from _walk(getattr(self, f.name), f"{prefix}{f.name}")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]


def _walk(value, name: str) -> Iterator[tuple[str, Tensor]]:
    if isinstance(value, Tensor):
        yield name, value
    elif isinstance(value, ParamGroup):
        yield from value.named_parameters(f"{name}.")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


def check_seed(seed: int) -> int:
    """Return `seed` as an int.

    Raises:
        ConfigurationError: When it is not an integer in [0, `constants.MAX_SEED`].
    """
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or not 0 <= seed <= constants.MAX_SEED:
        raise ConfigurationError(f"seed = {seed!r}, expected an integer in [0, {constants.MAX_SEED}]")
    return int(seed)


def component_rng(seed: int, component: str) -> np.random.Generator:
    """Independent random stream per model component.

    Keyed by the component name so disabling one head never shifts the
    initialization of another.
    """
    seed = check_seed(seed)
    return np.random.Generator(
        np.random.Philox(key=(seed << 32) | zlib.crc32(component.encode("utf-8")))
    )


def uniform(rng: np.random.Generator, shape: Sequence[int], bound: float) -> Tensor:
    return Tensor(rng.uniform(-bound, bound, size=tuple(shape)), requires_grad=True)


def fan_in_uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> Tensor:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    return uniform(rng, shape, 1.0 / math.sqrt(fan_in))


def kaiming_uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> Tensor:
    """U(-sqrt(6/fan_in), sqrt(6/fan_in)), suited to ReLU layers."""
    return uniform(rng, shape, math.sqrt(6.0 / fan_in))


def zeros(shape: Sequence[int]) -> Tensor:
    return Tensor(np.zeros(tuple(shape)), requires_grad=True)


@dataclass
class ConvParams(ParamGroup):
    """Kernel and bias of one convolution plus its geometry.

    Attributes:
        kernel (Tensor): C_out x C_in x k... (C_in x C_out x k x k when `transposed`).
        bias (Tensor): C_out.
        stride (tuple[int, ...])
        padding (tuple[int, ...])
        transposed (bool): Apply as a transposed convolution.
    """

    kernel: Tensor
    bias: Tensor
    stride: tuple[int, ...]
    padding: tuple[int, ...]
    transposed: bool = False

    def __call__(self, x: Tensor) -> Tensor:
        if self.transposed:
            return ops.conv_transpose2d(x, self.kernel, self.bias, self.stride, self.padding)
        if len(self.stride) == 3:
            return ops.conv3d(x, self.kernel, self.bias, self.stride, self.padding)
        return ops.conv2d(x, self.kernel, self.bias, self.stride, self.padding)


@dataclass
class LinearParams(ParamGroup):
    weight: Tensor
    bias: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        return ops.fully_connected(x, self.weight, self.bias)


def init_conv(
    rng: np.random.Generator,
    c_in: int,
    c_out: int,
    kernel: int | Sequence[int],
    stride: Sequence[int] | None = None,
    padding: Sequence[int] | None = None,
    *,
    dims: int = 2,
    transposed: bool = False,
    relu_gain: bool = True,
) -> ConvParams:
    """Fan-in scaled uniform kernel, zero bias."""
    ksize = (kernel,) * dims if isinstance(kernel, int) else tuple(kernel)
    stride = tuple(stride) if stride is not None else (1,) * dims
    padding = tuple(padding) if padding is not None else (0,) * dims
    fan_in = c_in * int(np.prod(ksize))
    shape = (c_in, c_out) + ksize if transposed else (c_out, c_in) + ksize
    init = kaiming_uniform if relu_gain else fan_in_uniform

    return ConvParams(init(rng, shape, fan_in), zeros((c_out,)), stride, padding, transposed)


def init_linear(
    rng: np.random.Generator, n_in: int, n_out: int, *, relu_gain: bool = True
) -> LinearParams:
    init = kaiming_uniform if relu_gain else fan_in_uniform
    return LinearParams(init(rng, (n_out, n_in), n_in), zeros((n_out,)))


def identity_conv(channels: int) -> ConvParams:
    """1x1 convolution that returns its input unchanged."""
    kernel = np.zeros((channels, channels, 1, 1))
    kernel[np.arange(channels), np.arange(channels), 0, 0] = 1.0
    return ConvParams(Tensor(kernel, requires_grad=True), zeros((channels,)), (1, 1), (0, 0))
