"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything runs in double precision on row-major numpy storage. Forward ops
optionally record themselves on an explicit tape (a context manager); a
backward sweep walks the tape once in reverse and accumulates gradients into
``requires_grad`` leaves. Outside a tape the same ops run without recording,
which is the inference path.

Broadcasting is deliberately narrow: elementwise ops need equal shapes and
``add``/``sub`` additionally accept a trailing-axes operand (bias vectors,
shared positional rows). Matmul supports 2-D and equal-batch stacked
operands plus the stacked-by-2-D projection case. Keeping the rules small
keeps every backward rule auditable.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


# Additive mask value: large enough that exp(x - max) underflows to exactly
# 0.0 after max subtraction, finite so autodiff never sees an inf.
MASK_NEG = -1e30


class AutodiffError(ValueError):
    pass


class ShapeError(AutodiffError):
    pass


class NonFiniteError(AutodiffError):
    pass


def _check_finite(arr: np.ndarray, what: str) -> None:
    # One reduction instead of an elementwise isfinite scan: any NaN or Inf
    # poisons the sum. (A sum overflowing on finite inputs would need ~1e308
    # magnitudes, itself a defect worth rejecting.)
    if not math.isfinite(float(arr.sum())):
        raise NonFiniteError(f"{what} produced non-finite values")


class Tensor:
    """A dense array with an optional gradient slot.

    ``data`` is always a contiguous float64 ndarray. ``grad`` starts out as
    None and is materialized (and accumulated into) by backward sweeps; the
    caller zeroes it between optimizer steps via ``zero_grad``.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)  # note: keeps 0-d shapes intact
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        nm = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{nm})"


@dataclass
class _Node:
    out_id: int
    out_ref: Tensor
    backward: Callable[[np.ndarray, Callable[[Tensor, np.ndarray], None]], None]


class Tape:
    """Ordered record of forward operations for one backward sweep.

    Nodes are appended in execution order, which is by construction a
    topological order, so walking the list in reverse visits every node
    exactly once with its output gradient fully accumulated. A tape is
    single-owner and not thread safe.
    """

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self.produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _tape_stack().pop()
        if popped is not self:
            raise RuntimeError("tape stack corrupted")


# per-thread stacks: a tape is single-owner, and distinct tapes may run on
# distinct threads without sharing state
_TAPE_LOCAL = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_TAPE_LOCAL, "stack", None)
    if stack is None:
        stack = _TAPE_LOCAL.stack = []
    return stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _tracked(tape: Tape | None, t: Tensor) -> bool:
    if tape is None:
        return False
    return t.requires_grad or id(t) in tape.produced


def apply_op(out_data: np.ndarray, inputs: Sequence[Tensor], backward, *, what: str) -> Tensor:
    """Finalize an op: finite-check the result and record it if a tape is live.

    ``backward`` receives the output gradient and an accumulator callback
    ``accum(tensor, grad_array)``; it must only route gradients, never touch
    forward values.
    """
    _check_finite(out_data, what)
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(_tracked(tape, t) for t in inputs):
        tape.nodes.append(_Node(id(out), out, backward))
        tape.produced.add(id(out))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Run one reverse sweep from ``loss``, accumulating into leaf ``grad`` slots."""
    if loss.shape != ():
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if id(loss) not in tape.produced:
        raise AutodiffError("loss is not reachable from this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}

    def accum(t: Tensor, g: np.ndarray) -> None:
        if id(t) in tape.produced:
            buf = grads.get(id(t))
            if buf is None:
                grads[id(t)] = np.array(g, dtype=np.float64, copy=True)
            else:
                buf += g
        elif t.requires_grad:
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            t.grad += g

    for node in reversed(tape.nodes):
        g = grads.pop(node.out_id, None)
        if g is None:
            continue
        node.backward(g, accum)


# ---------------------------------------------------------------------------
# elementwise / affine ops
# ---------------------------------------------------------------------------


def _suffix_reduce(g: np.ndarray, target_shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` over the leading axes it gained by trailing-axes broadcast."""
    extra = g.ndim - len(target_shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape and a.shape[a.data.ndim - b.data.ndim:] != b.shape:
        raise ShapeError(f"add shapes incompatible: {a.shape} vs {b.shape}")
    out = a.data + b.data

    def back(g, accum):
        accum(a, g)
        accum(b, _suffix_reduce(g, b.shape))

    return apply_op(out, (a, b), back, what="add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape and a.shape[a.data.ndim - b.data.ndim:] != b.shape:
        raise ShapeError(f"sub shapes incompatible: {a.shape} vs {b.shape}")
    out = a.data - b.data

    def back(g, accum):
        accum(a, g)
        accum(b, -_suffix_reduce(g, b.shape))

    return apply_op(out, (a, b), back, what="sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul needs equal shapes: {a.shape} vs {b.shape}")
    out = a.data * b.data
    ad, bd = a.data, b.data

    def back(g, accum):
        accum(a, g * bd)
        accum(b, g * ad)

    return apply_op(out, (a, b), back, what="mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = a.data * c

    def back(g, accum):
        accum(a, g * c)

    return apply_op(out, (a,), back, what="scale")


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def add_const(a: Tensor, const: np.ndarray) -> Tensor:
    """Add a non-learned array (e.g. an additive attention mask)."""
    const = np.asarray(const, dtype=np.float64)
    if const.shape != a.shape:
        raise ShapeError(f"add_const shapes differ: {a.shape} vs {const.shape}")
    out = a.data + const

    def back(g, accum):
        accum(a, g)

    return apply_op(out, (a,), back, what="add_const")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands: {a.shape} x {b.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} x {b.shape}")
    if bd.ndim != 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise ShapeError(f"matmul batch extents disagree: {a.shape} x {b.shape}")
    out = ad @ bd

    def back(g, accum):
        accum(a, g @ np.swapaxes(bd, -1, -2))
        if bd.ndim == 2 and ad.ndim > 2:
            k = ad.shape[-1]
            n = g.shape[-1]
            accum(b, ad.reshape(-1, k).T @ g.reshape(-1, n))
        else:
            accum(b, np.swapaxes(ad, -1, -2) @ g)

    return apply_op(out, (a, b), back, what="matmul")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim < 2:
        raise ShapeError(f"transpose needs rank >= 2, got {a.shape}")
    out = np.swapaxes(a.data, -1, -2)

    def back(g, accum):
        accum(a, np.swapaxes(g, -1, -2))

    return apply_op(np.ascontiguousarray(out), (a,), back, what="transpose")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = a.data.reshape(shape)

    def back(g, accum):
        accum(a, g.reshape(a.shape))

    return apply_op(np.ascontiguousarray(out), (a,), back, what="reshape")


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ShapeError("concat needs at least one part")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]

    def back(g, accum):
        start = 0
        for p, s in zip(parts, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, start + s)
            accum(p, g[tuple(idx)])
            start += s

    return apply_op(out, tuple(parts), back, what="concat")


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx_t = tuple(idx)
    out = np.ascontiguousarray(a.data[idx_t])

    def back(g, accum):
        buf = np.zeros_like(a.data)
        buf[idx_t] = g
        accum(a, buf)

    return apply_op(out, (a,), back, what="narrow")


def take(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a 2-D table; ids may be any integer array."""
    ids = np.asarray(ids)
    if table.data.ndim != 2:
        raise ShapeError(f"take needs a 2-D table, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise AutodiffError(
            f"take ids out of range [0, {table.shape[0]}): {int(ids.min())}..{int(ids.max())}"
        )
    out = table.data[ids]

    def back(g, accum):
        buf = np.zeros_like(table.data)
        np.add.at(buf, ids, g)
        accum(table, buf)

    return apply_op(out, (table,), back, what="take")


def bias_at(table: Tensor, labels: np.ndarray, column: int) -> Tensor:
    """Gather scalar biases ``table[labels, column]`` (a per-head bias lookup)."""
    labels = np.asarray(labels)
    if table.data.ndim != 2:
        raise ShapeError(f"bias_at needs a 2-D table, got {table.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= table.shape[0]):
        raise AutodiffError(
            f"bias labels out of range [0, {table.shape[0]}): "
            f"{int(labels.min())}..{int(labels.max())}"
        )
    out = table.data[labels, column]

    def back(g, accum):
        buf = np.zeros_like(table.data)
        buf[:, column] = np.bincount(labels.ravel(), weights=g.ravel(),
                                     minlength=table.shape[0])
        accum(table, buf)

    return apply_op(out, (table,), back, what="bias_at")


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum())

    def back(g, accum):
        accum(a, np.broadcast_to(g, a.shape).astype(np.float64))

    return apply_op(out, (a,), back, what="sum_all")


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.size)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    nd = x.data.ndim
    if not (-nd <= axis < nd):
        raise ShapeError(f"softmax axis {axis} out of range for rank {nd}")
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g, accum):
        accum(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return apply_op(y, (x,), back, what="softmax")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    xd = x.data
    x2 = xd * xd
    t = np.tanh(_GELU_C * (xd + 0.044715 * (x2 * xd)))
    y = 0.5 * xd * (1.0 + t)

    def back(g, accum):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        accum(x, g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * d_inner))

    return apply_op(y, (x,), back, what="gelu")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias must match last extent {d}: {gain.shape}, {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    y = xhat * gain.data + bias.data

    def back(g, accum):
        accum(gain, _suffix_reduce(g * xhat, gain.shape))
        accum(bias, _suffix_reduce(g, bias.shape))
        dxh = g * gain.data
        accum(
            x,
            inv
            * (
                dxh
                - dxh.mean(axis=-1, keepdims=True)
                - xhat * (dxh * xhat).mean(axis=-1, keepdims=True)
            ),
        )

    return apply_op(y, (x, gain, bias), back, what="layer_norm")


def cross_entropy(logits: Tensor, target_index: int) -> Tensor:
    if logits.data.ndim != 1:
        raise ShapeError(f"cross_entropy needs 1-D logits, got {logits.shape}")
    n = logits.shape[0]
    if not (0 <= target_index < n):
        raise AutodiffError(f"cross_entropy target {target_index} out of range [0, {n})")
    m = logits.data.max()
    lse = m + math.log(np.exp(logits.data - m).sum())
    out = np.asarray(lse - logits.data[target_index])

    def back(g, accum):
        p = np.exp(logits.data - m)
        p /= p.sum()
        p[target_index] -= 1.0
        accum(logits, g * p)

    return apply_op(out, (logits,), back, what="cross_entropy")


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Per-parameter Adam moments plus hyperparameters."""

    learning_rate: float
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_param(cls, param: Tensor, learning_rate: float, beta1: float = 0.9,
                  beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        return cls(
            learning_rate=learning_rate,
            m=np.zeros_like(param.data),
            v=np.zeros_like(param.data),
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(param: Tensor, state: AdamState) -> None:
    """Apply one bias-corrected Adam update in place."""
    if param.grad is None:
        raise AutodiffError("adam_step requires a populated grad")
    g = param.grad
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    mhat = state.m / (1.0 - state.beta1**state.step)
    vhat = state.v / (1.0 - state.beta2**state.step)
    param.data -= state.learning_rate * mhat / (np.sqrt(vhat) + state.epsilon)
    _check_finite(param.data, "adam_step")


class Adam:
    """Convenience wrapper holding one AdamState per named parameter."""

    def __init__(self, params: dict[str, Tensor], learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = dict(params)
        self.states = {
            name: AdamState.for_param(p, learning_rate, beta1, beta2, epsilon)
            for name, p in self.params.items()
        }

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is not None:
                adam_step(p, self.states[name])

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()
