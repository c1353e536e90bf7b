"""Dense tensors and a tape-based reverse-mode differentiator.

A :class:`Tensor` wraps a contiguous numpy array. Operations never mutate
their inputs; the only in-place writes happen to :class:`Parameter` storage
between optimizer steps.

Recording is explicit: operations executed inside ``with GradTape() as tape``
whose inputs require gradients are appended to the tape, and
:func:`backprop_gradients` replays them in reverse.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "GradTape",
    "backprop_gradients",
    "as_tensor",
    "record",
]

DEFAULT_DTYPE = np.float64


class Tensor:
    """N-dimensional real array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else _infer_dtype(data), copy=True)
        if arr.ndim > 0 and 0 in arr.shape:
            raise ValueError(f"tensor extents must be positive, got shape {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        t = cls.__new__(cls)
        t.data = np.ascontiguousarray(arr)
        t.requires_grad = requires_grad
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"{type(self).__name__}(shape={self.shape}, dtype={self.dtype}{tag})"

    # arithmetic sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def sum(self, axis=None):
        from . import ops
        return ops.sum(self, axis)

    def mean(self, axis=None):
        from . import ops
        return ops.mean(self, axis)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes)


class Parameter(Tensor):
    """Trainable tensor. Its storage is the one thing the optimizer may overwrite."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None, dtype=None):
        super().__init__(data, requires_grad=True, name=name, dtype=dtype)

    def assign(self, values: np.ndarray) -> None:
        if values.shape != self.data.shape:
            raise ValueError(f"cannot assign shape {values.shape} to parameter of shape {self.shape}")
        self.data[...] = values


def _infer_dtype(data):
    if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
        return data.dtype
    if isinstance(data, Tensor):
        return data.dtype
    return DEFAULT_DTYPE


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    if dtype is None:
        dtype = DEFAULT_DTYPE
    return Tensor._wrap(np.asarray(value, dtype=dtype))


class _Record:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward: Callable):
        self.op = op
        self.inputs = tuple(inputs)
        self.output = output
        self.backward = backward


class GradTape:
    """Ordered log of differentiable operations for one forward pass.

    Records are appended in execution order, which is already a topological
    order of the computation graph; reverse replay therefore visits each
    record once, after every consumer of its output.
    """

    _stack: list["GradTape"] = []

    def __init__(self):
        self.records: list[_Record] = []
        self._closed = False

    def __enter__(self) -> "GradTape":
        GradTape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = GradTape._stack.pop()
        assert popped is self
        self._closed = True

    @classmethod
    def active(cls) -> "GradTape | None":
        return cls._stack[-1] if cls._stack else None

    def __len__(self) -> int:
        return len(self.records)

    def gradient(self, loss: Tensor, params: Iterable[Tensor] | None = None) -> dict:
        return backprop_gradients(self, loss, params)


def record(op: str, out: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``out`` as a Tensor and log it on the active tape when needed.

    ``backward(grad_out)`` must return one gradient (or None) per input, each
    shaped like that input.
    """
    tape = GradTape.active()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, requires_grad=tracked)
    if tracked:
        tape.records.append(_Record(op, inputs, result, backward))
    return result


def backprop_gradients(tape: GradTape, loss: Tensor, params: Iterable[Tensor] | None = None) -> dict:
    """Return ``{tensor: d loss / d tensor}`` for ``params``.

    When ``params`` is None every tracked leaf tensor seen on the tape is
    reported. Parameters the loss does not depend on get zero gradients.
    """
    if loss.data.size != 1:
        raise ValueError(f"loss must be a scalar tensor, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(r.output) for r in tape.records}
    leaves: dict[int, Tensor] = {}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        in_grads = rec.backward(g)
        for inp, gi in zip(rec.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            if gi.shape != inp.shape:
                raise AssertionError(f"{rec.op}: gradient shape {gi.shape} != input shape {inp.shape}")
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if key not in produced:
                leaves[key] = inp

    if params is None:
        params = list(leaves.values())
    out = {}
    for p in params:
        g = grads.get(id(p))
        out[p] = np.zeros_like(p.data) if g is None else g
    return out


def is_finite(t: Tensor) -> bool:
    return bool(np.all(np.isfinite(t.data)))


def numel(shape: Sequence[int]) -> int:
    return math.prod(shape)
