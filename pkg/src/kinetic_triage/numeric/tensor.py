"""Tensor container and the reverse-mode tape.

A Tensor wraps a contiguous float array (float32 by default, float64 for
check mode). Ops record onto the innermost active Tape whenever any input is
tracked; replaying the tape backward visits nodes in exact reverse execution
order and accumulates gradients additively at fan-out.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from kinetic_triage.errors import NumericError

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "tracked")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self.tracked = requires_grad
        if requires_grad and name is None:
            raise NumericError("a trainable tensor needs a name for its gradient entry")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad, name=self.name)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"


def constant(value, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(value, dtype=dtype))


class _Node:
    __slots__ = ("op", "inputs", "output", "vjp")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], output: Tensor,
                 vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


_LOCAL = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Execution-ordered record of primitive applications.

    Used as a context manager; nesting confines recording to the innermost
    tape. A tape can be replayed backward exactly once.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, vjp) -> None:
        output.tracked = True
        self.nodes.append(_Node(op, inputs, output, vjp))


def record_or_pass(op: str, inputs: tuple[Tensor, ...], output: Tensor, make_vjp) -> Tensor:
    """Attach the op to the active tape when any input is tracked.

    ``make_vjp`` is called lazily so untracked forward passes pay no closure
    cost.
    """
    tape = active_tape()
    if tape is not None and not tape.consumed and any(t.tracked for t in inputs):
        tape.record(op, inputs, output, make_vjp())
    return output


def backward(loss: Tensor, tape: Tape) -> dict[str, Tensor]:
    """Gradients of a scalar loss for every trainable leaf reached by the tape.

    Frozen/untracked tensors are absent from the map. The tape is consumed;
    a second backward raises.
    """
    if tape.consumed:
        raise NumericError("backward: tape already consumed")
    if loss.data.size != 1:
        raise NumericError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not tape.nodes:
        raise NumericError("backward: empty tape")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue
        contributions = node.vjp(g_out)
        for tensor, contrib in zip(node.inputs, contributions):
            if contrib is None or not tensor.tracked:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib
            if tensor.requires_grad:
                leaves[key] = tensor

    out: dict[str, Tensor] = {}
    for key, tensor in leaves.items():
        out[tensor.name] = Tensor(grads[key].reshape(tensor.shape))  # type: ignore[index]
    return out
