"""Core content-plan types shared by decoding, oracles, metrics and ingestion."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class RecordRef:
    """One table cell: who it is about, what it measures, and the raw value.

    Equality is field-wise, so two refs match only when entity, type and
    value all agree.
    """

    entity: str
    type: str
    value: str = ""


UNIT = "unit"
SENTENCE_BREAK = "break"
END_OF_PLAN = "end"


@dataclass(frozen=True)
class PlanStep:
    """One element of a content plan.

    ``kind`` is one of ``unit`` (a content unit, carrying its index and, for
    table tasks, the underlying record), ``break`` (a sentence boundary) or
    ``end`` (terminates the plan; nothing may follow it).
    """

    kind: str
    unit: int | None = None
    record: RecordRef | None = None

    def __post_init__(self) -> None:
        if self.kind not in (UNIT, SENTENCE_BREAK, END_OF_PLAN):
            raise ValueError(f"unknown plan step kind: {self.kind!r}")
        if self.kind == UNIT and self.unit is None:
            raise ValueError("unit steps need a unit index")
        if self.kind != UNIT and self.unit is not None:
            raise ValueError(f"{self.kind} steps must not carry a unit index")

    @property
    def is_end(self) -> bool:
        return self.kind == END_OF_PLAN

    @property
    def is_break(self) -> bool:
        return self.kind == SENTENCE_BREAK


def unit_step(index: int, record: RecordRef | None = None) -> PlanStep:
    return PlanStep(UNIT, unit=index, record=record)


BREAK_STEP = PlanStep(SENTENCE_BREAK)
END_STEP = PlanStep(END_OF_PLAN)


def validate_plan(steps: list[PlanStep]) -> None:
    """Reject plans that continue past their end marker."""
    for pos, step in enumerate(steps):
        if step.is_end and pos != len(steps) - 1:
            raise ValueError(f"plan continues after end marker at position {pos}")
