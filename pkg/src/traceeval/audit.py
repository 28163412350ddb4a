"""First-attempt success auditing for evaluation runs.

A run succeeds only if it executed and its results are informative. The
vacuity checks run in a fixed order and the first hit decides the category.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

from .metrics import JUDGE, SuiteResult
from .numbers import percent
from .records import EvalRecord

CONSTANCY_TOLERANCE = 1e-9
EMPTY_OUTPUT_THRESHOLD = 0.5


class Category(str, Enum):
    OK = "OK"
    ExecutionError = "ExecutionError"
    ConstantOrZeroMetrics = "ConstantOrZeroMetrics"
    SyntheticDataOnly = "SyntheticDataOnly"
    PredictedAsGold = "PredictedAsGold"
    EmptyOutputs = "EmptyOutputs"


@dataclass(frozen=True)
class AuditVerdict:
    category: Category
    evidence: str

    @property
    def success(self) -> bool:
        return self.category is Category.OK

    def to_dict(self) -> dict:
        return {"success": self.success, "category": self.category.value, "evidence": self.evidence}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "AuditVerdict":
        return cls(Category(d["category"]), d.get("evidence", ""))


def _metric_is_vacuous(scores: list[float], n_records: int) -> str | None:
    if not scores:
        return "no scored cells"
    if all(s == 0.0 for s in scores):
        return "all zero"
    if n_records >= 2 and max(scores) - min(scores) <= CONSTANCY_TOLERANCE:
        return f"constant {scores[0]:g}"
    return None


def audit_run(
    execution_error: str | None,
    suite: SuiteResult | None,
    records: Sequence[EvalRecord] | None = None,
    empty_threshold: float = EMPTY_OUTPUT_THRESHOLD,
) -> AuditVerdict:
    """Classify a run. ``records`` defaults to the records held by ``suite``."""
    if execution_error is not None:
        return AuditVerdict(Category.ExecutionError, execution_error)
    if suite is None:
        return AuditVerdict(Category.ExecutionError, "no results produced")
    records = list(suite.records if records is None else records)
    if not records or not suite.specs:
        return AuditVerdict(Category.ExecutionError, "suite has no records or no metrics")

    vacuous = []
    for spec in suite.specs:
        scores = [r.score for r in suite.results if r.metric == spec.name and r.error is None]
        why = _metric_is_vacuous(scores, len(records))
        if why is None:
            break
        vacuous.append(f"{spec.name}: {why}")
    else:
        return AuditVerdict(Category.ConstantOrZeroMetrics, "; ".join(vacuous))

    if not any(r.provenance == "real-trace" for r in records):
        kinds = sorted({r.provenance for r in records})
        return AuditVerdict(
            Category.SyntheticDataOnly, f"no real-trace records (provenance: {', '.join(kinds)})"
        )

    gold = [s.name for s in suite.specs if s.kind == JUDGE and s.reference_is_output]
    if gold:
        return AuditVerdict(
            Category.PredictedAsGold, "agent output used as reference by: " + ", ".join(gold)
        )

    empty = sum(1 for r in records if not r.actual_output.strip())
    if empty / len(records) > empty_threshold:
        return AuditVerdict(
            Category.EmptyOutputs, f"{empty}/{len(records)} records have empty actual_output"
        )
    return AuditVerdict(Category.OK, f"{len(suite.specs)} metrics over {len(records)} records")


def eval_at_1(verdicts: Sequence[AuditVerdict | bool]) -> float:
    """Percentage of successful runs, one decimal."""
    if not verdicts:
        raise ValueError("eval_at_1 needs at least one verdict")
    wins = sum(1 for v in verdicts if (v if isinstance(v, bool) else v.success))
    return percent(wins, len(verdicts))


def load_verdict(path: str | Path) -> AuditVerdict:
    with open(path, encoding="utf-8") as fh:
        return AuditVerdict.from_dict(json.load(fh))
