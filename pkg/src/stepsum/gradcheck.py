"""Finite-difference gradient verification.

Central differences in double precision against the reverse-mode gradient.
An element passes when the two agree within the relative tolerance, or when
both are effectively zero; op-level checks sweep every input element, model
checks sample a fixed number of elements per parameter tensor to stay inside
the runtime budget.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tape, Tensor, backward


@dataclass
class GradMismatch:
    name: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    denom = max(abs(a), abs(b))
    if denom <= floor:
        return 0.0
    return abs(a - b) / denom


def analytic_gradients(loss_fn: Callable[[], Tensor],
                       params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
        backward(tape, loss)
    return {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }


def numeric_gradient(loss_fn: Callable[[], Tensor], param: Tensor,
                     index: tuple[int, ...], eps: float = 1e-6) -> float:
    original = param.data[index]
    param.data[index] = original + eps
    up = loss_fn().item()
    param.data[index] = original - eps
    down = loss_fn().item()
    param.data[index] = original
    return (up - down) / (2.0 * eps)


def check_gradients(loss_fn: Callable[[], Tensor], params: dict[str, Tensor],
                    *, eps: float = 1e-6, rtol: float = 1e-5, atol: float = 1e-9,
                    samples_per_tensor: int | None = None,
                    rng: np.random.Generator | None = None,
                    ) -> list[GradMismatch]:
    """Compare reverse-mode gradients with central differences.

    ``samples_per_tensor`` of None sweeps every element; otherwise each
    parameter tensor contributes that many distinct sampled elements.
    Elements pass on the relative bound, on the |value| <= 1e-8 floor, or
    when the absolute difference sits below ``atol``: with eps 1e-6 on an
    O(1) double-precision loss, central differences carry ~1e-10 of rounding
    noise, which would otherwise fail tiny-but-nonzero true gradients on a
    purely relative test.
    """
    analytic = analytic_gradients(loss_fn, params)
    if rng is None:
        rng = np.random.default_rng(0)
    failures: list[GradMismatch] = []
    for name, p in params.items():
        flat_size = p.size
        if samples_per_tensor is None or samples_per_tensor >= flat_size:
            picks: Sequence[int] = range(flat_size)
        else:
            picks = rng.choice(flat_size, size=samples_per_tensor, replace=False)
        for flat in picks:
            index = np.unravel_index(int(flat), p.shape)
            fd = numeric_gradient(loss_fn, p, index, eps)
            ad = float(analytic[name][index])
            if abs(ad - fd) <= atol:
                continue
            rel = relative_error(ad, fd)
            if rel > rtol:
                failures.append(GradMismatch(name, index, ad, fd, rel))
    return failures
