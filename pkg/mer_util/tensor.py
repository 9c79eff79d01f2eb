"""Dense float64 tensors with a reverse-mode differentiation tape.

Every primitive in `mer_util.ops` builds its output through `record`, which
attaches a `TapeEntry` (operands plus a backward rule) whenever gradients are
enabled and an operand requires them. `backward` orders the entries reachable
from a scalar loss into a `Tape`, runs the rules in reverse, accumulates into
`grad`, and then consumes the tape: a second `backward` over the same graph
is rejected with `TapeError`.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from mer_util.errors import NumericalError, TapeError

BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_state = threading.local()


def is_grad_enabled() -> bool:
    """If primitives applied on this thread are recorded."""
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording on the current thread."""
    previous = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class Tensor:
    """Dense n-dimensional array of 64-bit floats.

    Attributes:
        data (np.ndarray): Values, row-major, dtype float64.
        requires_grad (bool): Whether backward populates `grad`.
        grad (np.ndarray | None): Accumulated gradient, same shape as `data`.
        name (str): Optional label used by checkpoints and error messages.
    """

    data: np.ndarray
    requires_grad: bool
    grad: Optional[np.ndarray]
    name: str

    def __init__(self, data, requires_grad: bool = False, name: str = "") -> None:
        self.data = np.array(data, dtype=np.float64)
        if not np.isfinite(self.data).all():
            raise NumericalError(name or "Tensor", "initial values")

        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._entry: Optional[TapeEntry] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        """Return the value of a one-element tensor."""
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Return a copy of the values."""
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        from mer_util import ops

        return ops.add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        from mer_util import ops

        return ops.sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        from mer_util import ops

        return ops.mul(self, other)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


@dataclass(eq=False)
class TapeEntry:
    """One recorded primitive application.

    Attributes:
        op (str): Primitive name.
        operands (tuple[Tensor, ...]): Inputs, in the order the rule returns gradients.
        output (Tensor): Result of the primitive.
        rule (BackwardRule): Maps the output gradient to one gradient per operand \
            (None where an operand receives nothing).
        consumed (bool): Set once a backward pass has run over the entry.
    """

    op: str
    operands: tuple[Tensor, ...]
    output: Tensor
    rule: Optional[BackwardRule]
    consumed: bool = False


def record(
    op: str, data: np.ndarray, operands: Sequence[Tensor], rule: BackwardRule
) -> Tensor:
    """Wrap the result of a primitive and attach it to the tape when needed.

    Args:
        op (str): Primitive name (reported in errors).
        data (np.ndarray): Computed values.
        operands (Sequence[Tensor]): Inputs of the primitive.
        rule (BackwardRule): Backward rule.

    Raises:
        NumericalError: When `data` holds NaN or Inf.

    Returns:
        Tensor
    """
    if not np.isfinite(data).all():
        raise NumericalError(op)

    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.grad = None
    out.name = ""
    out._entry = None
    out.requires_grad = False

    if is_grad_enabled() and any(t.requires_grad for t in operands):
        out.requires_grad = True
        out._entry = TapeEntry(op, tuple(operands), out, rule)

    return out


@dataclass
class Tape:
    """Entries reachable from one output, operands before the entries using them.

    Attributes:
        entries (list[TapeEntry])
    """

    entries: list[TapeEntry] = field(default_factory=list)

    @classmethod
    def from_output(cls, root: Tensor) -> "Tape":
        """Collect the entries that produced `root` in topological order."""
        order: list[TapeEntry] = []
        visited: set[int] = set()

        if root._entry is None:
            return cls(order)

        # iterative post-order walk, deep graphs would overflow recursion
        stack: list[tuple[TapeEntry, bool]] = [(root._entry, False)]
        while stack:
            entry, expanded = stack.pop()
            if expanded:
                order.append(entry)
                continue
            if id(entry) in visited:
                continue
            visited.add(id(entry))
            stack.append((entry, True))
            for operand in reversed(entry.operands):
                if operand._entry is not None and id(operand._entry) not in visited:
                    stack.append((operand._entry, False))

        return cls(order)

    def propagate(self, root: Tensor) -> dict[int, tuple[Tensor, np.ndarray]]:
        """Run the backward rules from `root` with seed gradient 1.

        Returns:
            dict[int, tuple[Tensor, np.ndarray]]: Gradient of every reached \
                tensor that requires it, keyed by `id`.
        """
        if any(entry.consumed for entry in self.entries):
            raise TapeError("backward over a consumed tape; run the forward pass again")

        grads: dict[int, tuple[Tensor, np.ndarray]] = {
            id(root): (root, np.ones_like(root.data))
        }

        for entry in reversed(self.entries):
            if id(entry.output) not in grads or entry.rule is None:
                continue
            _, upstream = grads[id(entry.output)]
            operand_grads = entry.rule(upstream)

            for operand, grad in zip(entry.operands, operand_grads):
                if grad is None or not operand.requires_grad:
                    continue
                if not np.isfinite(grad).all():
                    raise NumericalError(entry.op, "gradient")
                if id(operand) in grads:
                    tensor, acc = grads[id(operand)]
                    grads[id(operand)] = (tensor, acc + grad)
                else:
                    grads[id(operand)] = (operand, np.array(grad, dtype=np.float64))

        for entry in self.entries:
            entry.consumed = True
            entry.rule = None

        return grads


def _scalar_root(loss: Tensor) -> None:
    if loss.size != 1:
        raise TapeError(f"backward needs a scalar loss, received shape {loss.shape}")


def backward(loss: Tensor) -> None:
    """Populate `grad` on every tensor the scalar `loss` depends on.

    Gradients accumulate additively into existing `grad` buffers; call
    `zero_grad` between optimization steps.

    Args:
        loss (Tensor): One-element tensor.

    Raises:
        TapeError: When `loss` is not scalar or its tape was already consumed.
    """
    _scalar_root(loss)

    if loss._entry is None:
        if loss.requires_grad:
            loss.grad = (loss.grad if loss.grad is not None else 0.0) + np.ones_like(
                loss.data
            )
        return

    for tensor, grad in Tape.from_output(loss).propagate(loss).values():
        tensor.grad = grad if tensor.grad is None else tensor.grad + grad


def gradients(loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Compute d loss / d t for each t in `wrt` without touching `grad` buffers.

    Tensors the loss does not depend on get zero gradients. The tape is
    consumed as in `backward`.

    Args:
        loss (Tensor): One-element tensor.
        wrt (Sequence[Tensor])

    Returns:
        list[np.ndarray]: One array per tensor, shaped like it.
    """
    _scalar_root(loss)

    if loss._entry is None:
        grads = {id(loss): (loss, np.ones_like(loss.data))} if loss.requires_grad else {}
    else:
        grads = Tape.from_output(loss).propagate(loss)

    return [
        grads[id(t)][1] if id(t) in grads else np.zeros_like(t.data) for t in wrt
    ]


def zero_grad(tensors: Sequence[Tensor]) -> None:
    """Reset the `grad` buffer of every tensor."""
    for tensor in tensors:
        tensor.grad = None
