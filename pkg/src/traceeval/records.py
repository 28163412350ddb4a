"""Evaluation records: the unit every metric is measured on."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

from . import TraceEvalError
from .traces import ProcessedTrace

logger = logging.getLogger(__name__)

PROVENANCES = ("real-trace", "fixture", "synthetic")


class VacuousTraceError(TraceEvalError):
    pass


@dataclass(frozen=True)
class ToolCall:
    tool_name: str
    input: str | None = None
    output: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"tool_name": self.tool_name, "input": self.input, "output": self.output}


@dataclass
class EvalRecord:
    test_id: str
    input: str
    actual_output: str
    provenance: str
    expected_behavior: str | None = None
    tool_calls: list[ToolCall] = field(default_factory=list)
    scenario: str | None = None
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.test_id:
            raise ValueError("test_id must be non-empty")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "test_id": self.test_id,
            "input": self.input,
            "actual_output": self.actual_output,
            "expected_behavior": self.expected_behavior,
            "tool_calls": [t.to_dict() for t in self.tool_calls],
            "scenario": self.scenario,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EvalRecord":
        return cls(
            test_id=data["test_id"],
            input=data.get("input", ""),
            actual_output=data.get("actual_output", ""),
            provenance=data["provenance"],
            expected_behavior=data.get("expected_behavior"),
            tool_calls=[ToolCall(**t) for t in data.get("tool_calls", [])],
            scenario=data.get("scenario"),
        )


def trace_to_eval_record(trace: ProcessedTrace, test_id: str) -> EvalRecord:
    """Turn a processed trace into a real-trace evaluation record."""
    if trace.user_input is None and trace.final_response is None:
        raise VacuousTraceError(f"vacuous trace {trace.trace_id!r}: no input and no response")
    record = EvalRecord(
        test_id=test_id,
        input=trace.user_input or "",
        actual_output=trace.final_response or "",
        provenance="real-trace",
        tool_calls=[
            ToolCall(op.tool_name, op.input, op.output) for op in trace.operations if op.tool_name
        ],
    )
    if trace.final_response is None:
        record.warnings.append("empty actual_output from trace")
        logger.warning("trace %s has no final response; actual_output left empty", trace.trace_id)
    if trace.user_input is None:
        record.warnings.append("empty input from trace")
    return record


def traces_to_records(traces: Sequence[tuple[str, ProcessedTrace]]) -> list[EvalRecord]:
    """Convert ``(test_id, trace)`` pairs; test ids must be distinct."""
    ids = [tid for tid, _ in traces]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate test ids")
    return [trace_to_eval_record(t, tid) for tid, t in traces]
