"""Differentiable primitives.

Each primitive validates its operands, computes the forward values with numpy,
and hands a backward rule to `mer_util.tensor.record`. Convolutions are
cross-correlations (no kernel flip) evaluated by looping over kernel offsets,
each offset contributing one `numpy.tensordot` over a strided view.
"""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from mer_util.constants import Direction
from mer_util.errors import ConfigurationError, DimensionError
from mer_util.tensor import Tensor, record


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise DimensionError(op, a.shape, b.shape) from e


# ELEMENTWISE


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)
    return record(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("sub", a, b)
    return record(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a, b)
    return record(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        ),
    )


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a constant."""
    return record("scale", x.data * factor, (x,), lambda g: (g * factor,))


def relu(x: Tensor) -> Tensor:
    """Rectified linear unit; the subgradient at exactly 0 is 0."""
    mask = x.data > 0
    return record("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def absolute(x: Tensor) -> Tensor:
    """Elementwise |x|; the subgradient at exactly 0 is 0."""
    sign = np.sign(x.data)
    return record("absolute", np.abs(x.data), (x,), lambda g: (g * sign,))


def square(x: Tensor) -> Tensor:
    return record("square", x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


# REDUCTIONS


def sum_all(x: Tensor) -> Tensor:
    """Sum of every element, as a scalar tensor."""
    return record(
        "sum", np.array(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),)
    )


def mean_all(x: Tensor) -> Tensor:
    """Mean of every element, as a scalar tensor."""
    n = x.size
    return record(
        "mean",
        np.array(x.data.mean()),
        (x,),
        lambda g: (np.full(x.shape, float(g) / n),),
    )


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    """Sum a non-empty list of same-shape tensors, left to right."""
    if not tensors:
        raise DimensionError("add_n", detail="no operands")
    result = tensors[0]
    for t in tensors[1:]:
        result = add(result, t)
    return result


def max_along(x: Tensor, axis: int) -> Tensor:
    """Maximum over `axis`; ties send the gradient to the lowest index."""
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError("max_along", x.shape, detail=f"axis {axis} out of range")

    arg = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    values = np.take_along_axis(x.data, arg, axis=axis)

    def rule(g: np.ndarray):
        dx = np.zeros_like(x.data)
        np.put_along_axis(dx, arg, np.expand_dims(g, axis), axis=axis)
        return (dx,)

    return record("max_along", np.squeeze(values, axis=axis), (x,), rule)


# SHAPE


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        data = x.data.reshape(shape)
    except ValueError as e:
        raise DimensionError("reshape", x.shape, shape) from e
    return record("reshape", data, (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along an existing axis."""
    if not tensors:
        raise DimensionError("concat", detail="no operands")
    ndim = tensors[0].ndim
    if not -ndim <= axis < ndim:
        raise DimensionError("concat", tensors[0].shape, detail=f"axis {axis} out of range")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError("concat", *(t.shape for t in tensors)) from e

    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    return record(
        "concat",
        data,
        tuple(tensors),
        lambda g: tuple(np.split(g, bounds, axis=axis)),
    )


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Stack same-shape tensors along a new axis."""
    if not tensors:
        raise DimensionError("stack", detail="no operands")
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError("stack", *(t.shape for t in tensors)) from e

    return record(
        "stack",
        data,
        tuple(tensors),
        lambda g: tuple(np.moveaxis(g, axis, 0)),
    )


def take_rows(x: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of `x` (axis 0); `indices` may have any shape."""
    indices = np.asarray(indices, dtype=np.intp)
    if indices.size and (indices.min() < 0 or indices.max() >= x.shape[0]):
        raise DimensionError("take_rows", x.shape, detail="index out of range")

    def rule(g: np.ndarray):
        dx = np.zeros_like(x.data)
        np.add.at(dx, indices, g)
        return (dx,)

    return record("take_rows", x.data[indices], (x,), rule)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return record(
        "transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),)
    )


# LINEAR ALGEBRA


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map `x @ weight.T + bias`.

    Args:
        x (Tensor): Vector (n_in,) or row batch (rows, n_in).
        weight (Tensor): (n_out, n_in).
        bias (Tensor, optional): (n_out,).

    Returns:
        Tensor: (n_out,) or (rows, n_out).
    """
    if weight.ndim != 2 or x.ndim not in (1, 2) or x.shape[-1] != weight.shape[1]:
        raise DimensionError("fully_connected", x.shape, weight.shape)
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError("fully_connected", weight.shape, bias.shape, detail="bias")

    data = x.data @ weight.data.T
    if bias is not None:
        data = data + bias.data

    def rule(g: np.ndarray):
        dx = g @ weight.data
        if x.ndim == 1:
            dw = np.outer(g, x.data)
            db = g
        else:
            dw = g.T @ x.data
            db = g.sum(axis=0)
        return (dx, dw, db) if bias is not None else (dx, dw)

    operands = (x, weight, bias) if bias is not None else (x, weight)
    return record("fully_connected", data, operands, rule)


# CONVOLUTION


def _output_size(op: str, size: int, kernel: int, stride: int, pad: int) -> int:
    if stride < 1 or pad < 0:
        raise ConfigurationError(f"{op}: stride must be >= 1 and padding >= 0")
    out = (size + 2 * pad - kernel) // stride + 1
    if out < 1:
        raise ConfigurationError(
            f"{op}: non-positive output size for input {size}, kernel {kernel}, "
            f"stride {stride}, padding {pad}"
        )
    return out


def _window(offset: Sequence[int], stride: Sequence[int], out: Sequence[int]):
    """Slices picking, for one kernel offset, the input element of every output."""
    return (slice(None),) + tuple(
        slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offset, stride, out)
    )


def _conv_nd(
    op: str,
    x: Tensor,
    kernel: Tensor,
    bias: Tensor,
    stride: Sequence[int],
    padding: Sequence[int],
) -> Tensor:
    dims = len(stride)
    if x.ndim != dims + 1 or kernel.ndim != dims + 2:
        raise DimensionError(op, x.shape, kernel.shape, detail=f"expected {dims} spatial dims")
    if kernel.shape[1] != x.shape[0]:
        raise DimensionError(op, x.shape, kernel.shape, detail="input channels")
    if bias.shape != (kernel.shape[0],):
        raise DimensionError(op, kernel.shape, bias.shape, detail="bias")

    ksize = kernel.shape[2:]
    out = tuple(
        _output_size(op, n, k, s, p)
        for n, k, s, p in zip(x.shape[1:], ksize, stride, padding)
    )
    pad_width = ((0, 0),) + tuple((p, p) for p in padding)
    xp = np.pad(x.data, pad_width)

    data = np.zeros((kernel.shape[0],) + out)
    offsets = list(itertools.product(*(range(k) for k in ksize)))
    for offset in offsets:
        window = xp[_window(offset, stride, out)]
        data += np.tensordot(kernel.data[(slice(None), slice(None)) + offset], window, axes=([1], [0]))
    data += bias.data.reshape((-1,) + (1,) * dims)

    def rule(g: np.ndarray):
        dxp = np.zeros_like(xp)
        dk = np.zeros_like(kernel.data)
        spatial = list(range(1, dims + 1))
        for offset in offsets:
            sl = _window(offset, stride, out)
            k_slice = (slice(None), slice(None)) + offset
            dk[k_slice] = np.tensordot(g, xp[sl], axes=(spatial, spatial))
            dxp[sl] += np.tensordot(kernel.data[k_slice], g, axes=([0], [0]))
        crop = (slice(None),) + tuple(
            slice(p, p + n) for p, n in zip(padding, x.shape[1:])
        )
        return dxp[crop], dk, g.sum(axis=tuple(spatial))

    return record(op, data, (x, kernel, bias), rule)


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor,
    stride: tuple[int, int] = (1, 1),
    padding: tuple[int, int] = (0, 0),
) -> Tensor:
    """2D cross-correlation with zero padding.

    Args:
        x (Tensor): C_in x H x W.
        kernel (Tensor): C_out x C_in x kh x kw.
        bias (Tensor): C_out.
        stride (tuple[int, int])
        padding (tuple[int, int])

    Raises:
        DimensionError: When the operand shapes disagree.
        ConfigurationError: When an output dimension would be < 1.

    Returns:
        Tensor: C_out x H' x W', H' = (H + 2 pad_h - kh) // stride_h + 1.
    """
    return _conv_nd("conv2d", x, kernel, bias, stride, padding)


def conv3d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor,
    stride: tuple[int, int, int] = (1, 1, 1),
    padding: tuple[int, int, int] = (0, 0, 0),
) -> Tensor:
    """3D cross-correlation over C x T x H x W inputs; see `conv2d`."""
    return _conv_nd("conv3d", x, kernel, bias, stride, padding)


def conv_transpose2d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor,
    stride: tuple[int, int] = (2, 2),
    padding: tuple[int, int] = (1, 1),
) -> Tensor:
    """Transposed 2D convolution (the input-gradient of `conv2d`).

    Args:
        x (Tensor): C_in x H x W.
        kernel (Tensor): C_in x C_out x kh x kw.
        bias (Tensor): C_out.

    Returns:
        Tensor: C_out x H' x W', H' = (H - 1) * stride_h - 2 pad_h + kh.
    """
    if x.ndim != 3 or kernel.ndim != 4 or kernel.shape[0] != x.shape[0]:
        raise DimensionError("conv_transpose2d", x.shape, kernel.shape)
    if bias.shape != (kernel.shape[1],):
        raise DimensionError("conv_transpose2d", kernel.shape, bias.shape, detail="bias")

    ksize = kernel.shape[2:]
    size_in = x.shape[1:]
    out = tuple((n - 1) * s - 2 * p + k for n, s, p, k in zip(size_in, stride, padding, ksize))
    if min(out) < 1:
        raise ConfigurationError(f"conv_transpose2d: non-positive output size {out}")

    full_shape = (kernel.shape[1],) + tuple((n - 1) * s + k for n, s, k in zip(size_in, stride, ksize))
    offsets = list(itertools.product(*(range(k) for k in ksize)))
    crop = (slice(None),) + tuple(slice(p, p + n) for p, n in zip(padding, out))

    full = np.zeros(full_shape)
    for offset in offsets:
        k_slice = (slice(None), slice(None)) + offset
        full[_window(offset, stride, size_in)] += np.tensordot(kernel.data[k_slice], x.data, axes=([0], [0]))
    data = full[crop] + bias.data[:, None, None]

    def rule(g: np.ndarray):
        gf = np.zeros(full_shape)
        gf[crop] = g
        dx = np.zeros_like(x.data)
        dk = np.zeros_like(kernel.data)
        for offset in offsets:
            sl = _window(offset, stride, size_in)
            k_slice = (slice(None), slice(None)) + offset
            dx += np.tensordot(kernel.data[k_slice], gf[sl], axes=([1], [0]))
            dk[k_slice] = np.tensordot(x.data, gf[sl], axes=([1, 2], [1, 2]))
        return dx, dk, g.sum(axis=(1, 2))

    return record("conv_transpose2d", data, (x, kernel, bias), rule)


def maxpool3d(
    x: Tensor,
    kernel: tuple[int, int, int] = (2, 2, 2),
    stride: tuple[int, int, int] | None = None,
) -> Tensor:
    """3D max pooling over valid windows of a C x T x H x W tensor.

    The gradient of each window goes to its maximum; ties go to the lowest
    linear index inside the window.
    """
    if x.ndim != 4:
        raise DimensionError("maxpool3d", x.shape, detail="expected C x T x H x W")
    stride = tuple(stride) if stride is not None else tuple(kernel)
    out = tuple(
        _output_size("maxpool3d", n, k, s, 0) for n, k, s in zip(x.shape[1:], kernel, stride)
    )

    windows = sliding_window_view(x.data, kernel, axis=(1, 2, 3))
    windows = windows[:, :: stride[0], :: stride[1], :: stride[2]][:, : out[0], : out[1], : out[2]]
    flat = windows.reshape(windows.shape[:4] + (-1,))
    arg = np.argmax(flat, axis=-1)
    data = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def rule(g: np.ndarray):
        dt, dh, dw = np.unravel_index(arg, kernel)
        c, to, ho, wo = np.indices(arg.shape)
        dx = np.zeros_like(x.data)
        np.add.at(
            dx,
            (c, to * stride[0] + dt, ho * stride[1] + dh, wo * stride[2] + dw),
            g,
        )
        return (dx,)

    return record("maxpool3d", data, (x,), rule)


# FEATURE-MAP SPECIFIC


def broadcast_add_columns(x: Tensor, emb: Tensor, direction: Direction) -> Tensor:
    """Add an embedding replicated along the remaining spatial axis.

    Args:
        x (Tensor): C x H x W.
        emb (Tensor): C x H for `Direction.vertical` (replicated W times along \
            the horizontal axis), C x W for `Direction.horizontal`.
        direction (Direction)

    Returns:
        Tensor: C x H x W.
    """
    if x.ndim != 3:
        raise DimensionError("broadcast_add_columns", x.shape, emb.shape)

    if direction is Direction.vertical:
        if emb.shape != (x.shape[0], x.shape[1]):
            raise DimensionError("broadcast_add_columns", x.shape, emb.shape, detail="vertical")
        return record(
            "broadcast_add_columns",
            x.data + emb.data[:, :, None],
            (x, emb),
            lambda g: (g, g.sum(axis=2)),
        )

    if direction is Direction.horizontal:
        if emb.shape != (x.shape[0], x.shape[2]):
            raise DimensionError("broadcast_add_columns", x.shape, emb.shape, detail="horizontal")
        return record(
            "broadcast_add_columns",
            x.data + emb.data[:, None, :],
            (x, emb),
            lambda g: (g, g.sum(axis=1)),
        )

    raise DimensionError("broadcast_add_columns", x.shape, detail=f"unknown direction {direction}")


def circular_conv(x: Tensor, weights: Tensor, direction: Direction) -> Tensor:
    """Per-channel circular correlation along one spatial axis.

    For `Direction.vertical`, `y[c, i, j] = sum_s weights[c, s] * x[c, (i + s) % H, j]`
    with `weights` of shape C x H; `Direction.horizontal` runs along the
    columns with modulus W.
    """
    if x.ndim != 3:
        raise DimensionError("circular_conv", x.shape, weights.shape)
    axis = 1 if direction is Direction.vertical else 2
    length = x.shape[axis]
    if weights.shape != (x.shape[0], length):
        raise DimensionError("circular_conv", x.shape, weights.shape, detail=direction.value)

    # work with the circular axis in position 1
    xt = x.data if axis == 1 else x.data.transpose(0, 2, 1)
    positions = np.arange(length)
    forward_idx = (positions[:, None] + positions[None, :]) % length
    backward_idx = (positions[:, None] - positions[None, :]) % length

    gathered = xt[:, forward_idx, :]  # c, i, s, j
    yt = np.einsum("cs,cisj->cij", weights.data, gathered)

    def rule(g: np.ndarray):
        gt = g if axis == 1 else g.transpose(0, 2, 1)
        dw = np.einsum("cij,cisj->cs", gt, gathered)
        dxt = np.einsum("cs,cpsj->cpj", weights.data, gt[:, backward_idx, :])
        return (dxt if axis == 1 else dxt.transpose(0, 2, 1)), dw

    return record(
        "circular_conv",
        yt if axis == 1 else yt.transpose(0, 2, 1),
        (x, weights),
        rule,
    )


def softmax_cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Cross entropy of `softmax(logits)` against a one-hot label.

    Stabilized by subtracting the maximum logit before exponentiation.
    """
    if logits.ndim != 1 or logits.shape[0] < 2:
        raise DimensionError("softmax_cross_entropy", logits.shape, detail="need n >= 2 logits")
    if not 0 <= label < logits.shape[0]:
        raise ConfigurationError(f"label {label} outside [0, {logits.shape[0]})")

    shifted = logits.data - logits.data.max()
    log_norm = np.log(np.exp(shifted).sum())
    probs = np.exp(shifted - log_norm)
    onehot = np.zeros_like(probs)
    onehot[label] = 1.0

    return record(
        "softmax_cross_entropy",
        np.array(log_norm - shifted[label]),
        (logits,),
        lambda g: (float(g) * (probs - onehot),),
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stabilized softmax of a logit vector (no gradient)."""
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


# SAMPLING


def bilinear_sample(image: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Resample an image through a displacement field.

    `output[c, a, b]` samples `image[c]` at row `a + v[a, b]`, column
    `b + u[a, b]` with bilinear interpolation; coordinates outside the image
    clamp to the border. No gradient is recorded.

    Args:
        image (np.ndarray): C x H x W (a `Tensor` is accepted as well).
        u (np.ndarray): H x W horizontal displacement in pixels.
        v (np.ndarray): H x W vertical displacement in pixels.

    Returns:
        np.ndarray: C x H x W.
    """
    image = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    u = u.data if isinstance(u, Tensor) else np.asarray(u, dtype=np.float64)
    v = v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)

    if image.ndim != 3 or u.shape != image.shape[1:] or v.shape != image.shape[1:]:
        raise DimensionError("bilinear_sample", image.shape, u.shape, v.shape)

    _, height, width = image.shape
    rows, cols = np.indices((height, width), dtype=np.float64)
    y = np.clip(rows + v, 0, height - 1)
    x = np.clip(cols + u, 0, width - 1)

    y0 = np.floor(y).astype(np.intp)
    x0 = np.floor(x).astype(np.intp)
    y1 = np.minimum(y0 + 1, height - 1)
    x1 = np.minimum(x0 + 1, width - 1)
    wy = y - y0
    wx = x - x0

    top = image[:, y0, x0] * (1 - wx) + image[:, y0, x1] * wx
    bottom = image[:, y1, x0] * (1 - wx) + image[:, y1, x1] * wx
    return top * (1 - wy) + bottom * wy
