"""Dense tensor with reverse-mode differentiation over an explicit tape.

Ops executed while a :class:`Tape` is active append backward closures to it;
``Tape.backward`` replays them in exact reverse execution order, accumulating
gradients additively. With no active tape, ops run forward-only.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

_TAPE_STACK: list["Tape"] = []


def active_tape() -> Optional["Tape"]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """n-d real array with an optional gradient of identical shape."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        dtype=None,
    ):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

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

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{label})"


def _scalar_error(t: Tensor):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


class Tape:
    """Ordered record of executed ops for one forward/backward pass."""

    def __init__(self):
        self._records: list[Callable[[], None]] = []
        self._used = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def record(self, backward_fn: Callable[[], None]) -> None:
        self._records.append(backward_fn)

    def backward(self, root: Tensor) -> None:
        """Seed the root gradient with ones and replay records in reverse."""
        if self._used:
            raise RuntimeError("tape already consumed by a previous backward call")
        if root.data.size != 1:
            raise ValueError(f"backward root must be scalar, got shape {root.shape}")
        self._used = True
        root.grad = np.ones_like(root.data)
        for fn in reversed(self._records):
            fn()


def record_op(out: Tensor, inputs: Sequence[Tensor], backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    """Mark ``out`` differentiable and register its backward closure.

    ``backward_fn`` receives the upstream gradient of ``out`` and is
    responsible for accumulating into each input that requires grad. It is
    skipped entirely when ``out`` never received a gradient (dead branch).
    """
    tape = active_tape()
    if tape is None or not any(t.requires_grad for t in inputs):
        return out
    out.requires_grad = True

    def closure():
        if out.grad is not None:
            backward_fn(out.grad)

    tape.record(closure)
    return out
