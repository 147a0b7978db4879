"""Turn a trained step scorer into plans.

The decoder is generic over a scorer: anything exposing the candidate list
and a per-prefix log-probability vector. Plans are compared by raw log
probability (sum of step log-probs, no length normalization); ties break
toward the lexicographically smaller candidate-index sequence, then the
shorter hypothesis, which keeps every decode reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .plan import END_STEP, PlanStep


class StepScorer(Protocol):
    """What the decoder needs from a model."""

    candidates: list[PlanStep]

    def step_log_probs(self, prefix: tuple[PlanStep, ...]) -> np.ndarray:
        """Log probabilities over ``candidates`` given an unfinished prefix."""
        ...

    def candidate_tokens(self, index: int) -> list[str]:
        """Surface tokens of a candidate unit (for trigram blocking)."""
        ...


@dataclass(frozen=True)
class DecodeConstraints:
    no_repeat: bool = True
    trigram_blocking: bool = False
    # table mode: breaks plus these record types may repeat even under no_repeat
    repeat_exceptions: bool = False
    repeat_exempt_types: frozenset[str] = frozenset({"TEAM-NAME", "TEAM-CITY"})


@dataclass(frozen=True)
class Hypothesis:
    steps: tuple[PlanStep, ...]
    index_trace: tuple[int, ...]
    log_prob: float
    finished: bool


@dataclass
class DecodeResult:
    steps: list[PlanStep]
    log_prob: float
    incomplete: bool = False  # set when every expansion was pruned mid-decode


def next_step_distribution(scorer: StepScorer,
                           prefix: tuple[PlanStep, ...]) -> np.ndarray:
    """Probability vector over candidates; rejects finished prefixes."""
    if any(s.is_end for s in prefix):
        raise ValueError("prefix is already finished")
    return np.exp(scorer.step_log_probs(prefix))


def trigram_block(candidate_tokens: Sequence[str], summary_tokens: Sequence[str]) -> bool:
    """True when the candidate shares any token trigram with the summary."""
    if len(candidate_tokens) < 3:
        return False
    summary_tris = {
        tuple(summary_tokens[i: i + 3]) for i in range(len(summary_tokens) - 2)
    }
    if not summary_tris:
        return False
    return any(
        tuple(candidate_tokens[i: i + 3]) in summary_tris
        for i in range(len(candidate_tokens) - 2)
    )


def _candidate_index(scorer: StepScorer, step: PlanStep) -> int:
    return scorer.candidates.index(step)


def _summary_tokens(scorer: StepScorer, steps: Sequence[PlanStep]) -> list[str]:
    out: list[str] = []
    for step in steps:
        if step.kind == "unit":
            out.extend(scorer.candidate_tokens(_candidate_index(scorer, step)))
    return out


def _step_blocked(scorer: StepScorer, hyp: Hypothesis, step: PlanStep,
                  index: int, constraints: DecodeConstraints) -> bool:
    if step.is_end or step.is_break:
        return False
    if constraints.no_repeat and step in hyp.steps:
        if not (constraints.repeat_exceptions and step.record is not None
                and step.record.type in constraints.repeat_exempt_types):
            return True
    if constraints.trigram_blocking and trigram_block(
            scorer.candidate_tokens(index), _summary_tokens(scorer, hyp.steps)):
        return True
    return False


def _expand(scorer: StepScorer, hyp: Hypothesis, max_steps: int,
            constraints: DecodeConstraints) -> list[Hypothesis]:
    log_probs = scorer.step_log_probs(hyp.steps)
    out = []
    for ci, step in enumerate(scorer.candidates):
        if _step_blocked(scorer, hyp, step, ci, constraints):
            continue
        steps = hyp.steps + (step,)
        out.append(Hypothesis(
            steps=steps,
            index_trace=hyp.index_trace + (ci,),
            log_prob=hyp.log_prob + float(log_probs[ci]),
            finished=step.is_end or len(steps) >= max_steps,
        ))
    return out


def _better(a: Hypothesis, b: Hypothesis) -> bool:
    """Total order for final selection: score, then index trace, then length."""
    if a.log_prob != b.log_prob:
        return a.log_prob > b.log_prob
    if a.index_trace != b.index_trace:
        return a.index_trace < b.index_trace
    return len(a.steps) < len(b.steps)


def _best(hyps: Sequence[Hypothesis]) -> Hypothesis:
    best = hyps[0]
    for hyp in hyps[1:]:
        if _better(hyp, best):
            best = hyp
    return best


def greedy_rollout(scorer: StepScorer, max_steps: int,
                   constraints: DecodeConstraints) -> Hypothesis:
    """Always take the best allowed step; may return unfinished when stuck."""
    hyp = Hypothesis((), (), 0.0, False)
    while not hyp.finished:
        expansions = _expand(scorer, hyp, max_steps, constraints)
        if not expansions:
            return hyp
        hyp = min(expansions, key=lambda h: (-h.log_prob, h.index_trace))
    return hyp


def beam_decode(scorer: StepScorer, beam_size: int, max_steps: int,
                constraints: DecodeConstraints | None = None) -> DecodeResult:
    """Beam search over step distributions.

    Constraint-violating expansions are pruned before the top-k cut. The
    greedy rollout is kept as a floor, so the result never scores below
    greedy; with beam_size 1 the result is exactly the greedy plan. When
    everything is pruned before any hypothesis can finish, the best
    unfinished hypothesis comes back flagged incomplete.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be at least 1")
    if constraints is None:
        constraints = DecodeConstraints()

    beams = [Hypothesis((), (), 0.0, False)]
    finished: list[Hypothesis] = []
    stuck: list[Hypothesis] = []
    while beams:
        expansions: list[Hypothesis] = []
        for hyp in beams:
            expansions.extend(_expand(scorer, hyp, max_steps, constraints))
        if not expansions:
            stuck = beams
            break
        expansions.sort(key=lambda h: (-h.log_prob, h.index_trace, len(h.steps)))
        top = expansions[:beam_size]
        beams = [h for h in top if not h.finished]
        finished.extend(h for h in top if h.finished)

    greedy = greedy_rollout(scorer, max_steps, constraints)
    if greedy.finished:
        finished.append(greedy)
    else:
        stuck = stuck + [greedy]

    if finished:
        best = _best(finished)
        return DecodeResult(list(best.steps), best.log_prob)
    best = _best(stuck)
    return DecodeResult(list(best.steps), best.log_prob, incomplete=True)


def greedy_decode_with_repeat_exceptions(scorer: StepScorer, max_steps: int,
                                         exempt_types: frozenset[str] = frozenset(
                                             {"TEAM-NAME", "TEAM-CITY"})) -> list[PlanStep]:
    """Table-mode greedy decode: skip forbidden repeats, fall to the next rank.

    Breaks and records of exempt types may repeat; when every candidate is
    forbidden the plan ends immediately.
    """
    steps: list[PlanStep] = []
    used: set[PlanStep] = set()
    while len(steps) < max_steps:
        log_probs = scorer.step_log_probs(tuple(steps))
        order = sorted(range(len(scorer.candidates)),
                       key=lambda ci: (-log_probs[ci], ci))
        chosen = None
        for ci in order:
            step = scorer.candidates[ci]
            if step.kind == "unit" and step in used:
                exempt = step.record is not None and step.record.type in exempt_types
                if not exempt:
                    continue
            chosen = step
            break
        if chosen is None:
            steps.append(END_STEP)
            break
        steps.append(chosen)
        if chosen.kind == "unit":
            used.add(chosen)
        if chosen.is_end:
            break
    return steps


def replay_log_prob(scorer: StepScorer, steps: Sequence[PlanStep]) -> float:
    """Recompute a plan's log probability step by step."""
    total = 0.0
    prefix: tuple[PlanStep, ...] = ()
    for step in steps:
        log_probs = scorer.step_log_probs(prefix)
        total += float(log_probs[_candidate_index(scorer, step)])
        prefix = prefix + (step,)
    return total
