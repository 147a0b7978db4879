"""Extractive oracles and the stepwise training examples derived from them.

The training oracle is greedy: starting from an empty selection, repeatedly
add the sentence that most improves the mean of Rouge-1/2/L F1 against the
reference, stopping at the first non-improving round or at the size cap. An
exhaustive-subset oracle (small inputs only) exists purely to verify the
greedy one.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import chain, combinations
from typing import Sequence

from .metrics import mean_rouge_f1
from .plan import END_STEP, PlanStep, unit_step, validate_plan


@dataclass
class OracleResult:
    selected: list[int]            # in selection order
    score: float                   # mean Rouge F1 of the final selection
    trace: list[tuple[int, float]]  # (added index, score after adding)


def _selection_score(doc: Sequence[Sequence[str]], reference: Sequence[str],
                     selected: Sequence[int]) -> float:
    tokens = [t for i in sorted(selected) for t in doc[i]]
    return mean_rouge_f1(tokens, reference)


def oracle_full(doc: Sequence[Sequence[str]], reference: Sequence[str],
                max_size: int = 4) -> OracleResult:
    """Greedy best-improvement selection; ties go to the lowest index."""
    if not doc or not reference:
        raise ValueError("oracle needs a non-empty document and reference")
    selected: list[int] = []
    trace: list[tuple[int, float]] = []
    score = 0.0
    while len(selected) < max_size:
        best_idx = -1
        best_score = score
        for i in range(len(doc)):
            if i in selected:
                continue
            cand = _selection_score(doc, reference, selected + [i])
            if cand > best_score:
                best_score = cand
                best_idx = i
        if best_idx < 0:
            break
        selected.append(best_idx)
        score = best_score
        trace.append((best_idx, score))
    return OracleResult(selected, score, trace)


def oracle_truncated(doc: Sequence[Sequence[str]], reference: Sequence[str],
                     token_budget: int, max_size: int = 4) -> OracleResult:
    """Greedy oracle over the sentence prefix that fits the token budget."""
    kept = 0
    used = 0
    for sent in doc:
        if used + len(sent) > token_budget:
            break
        used += len(sent)
        kept += 1
    if kept == 0:
        return OracleResult([], 0.0, [])
    return oracle_full(list(doc[:kept]), reference, max_size)


def brute_force_oracle(doc: Sequence[Sequence[str]], reference: Sequence[str],
                       max_size: int = 4) -> OracleResult:
    """Exhaustive argmax over all subsets of size <= max_size (test oracle).

    Ties resolve to the lexicographically smallest sorted index set. Only
    meant for verification, so documents beyond 15 sentences are rejected.
    """
    n = len(doc)
    if n > 15:
        raise ValueError(f"brute force limited to 15 sentences, got {n}")
    best: tuple[int, ...] = ()
    best_score = 0.0
    subsets = chain.from_iterable(
        combinations(range(n), k) for k in range(1, min(max_size, n) + 1)
    )
    for subset in subsets:
        score = _selection_score(doc, reference, subset)
        if score > best_score or (score == best_score and best and subset < best):
            best = subset
            best_score = score
    return OracleResult(list(best), best_score, [])


def stepwise_examples_from_plan(
        plan: Sequence[PlanStep]) -> list[tuple[tuple[PlanStep, ...], PlanStep]]:
    """One (prefix, next step) pair per plan element, ending at the end marker."""
    steps = list(plan)
    if not steps or not steps[-1].is_end:
        steps.append(END_STEP)
    validate_plan(steps)
    out = []
    for k, step in enumerate(steps):
        out.append((tuple(steps[:k]), step))
    return out


def make_stepwise_examples(doc: Sequence[Sequence[str]], oracle: OracleResult,
                           order: str = "position") -> list[tuple[tuple[PlanStep, ...], PlanStep]]:
    """Training pairs from an oracle selection.

    ``order`` fixes the supervision order of the selected sentences:
    ``position`` (document order, the default, matching how summaries are
    assembled) or ``selection`` (greedy pick order).
    """
    if order not in ("position", "selection"):
        raise ValueError(f"unknown order {order!r}")
    for i in oracle.selected:
        if not (0 <= i < len(doc)):
            raise ValueError(f"oracle index {i} outside the document")
    indices = sorted(oracle.selected) if order == "position" else list(oracle.selected)
    plan = [unit_step(i) for i in indices]
    return stepwise_examples_from_plan(plan)
