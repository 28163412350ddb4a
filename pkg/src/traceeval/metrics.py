"""Metric suite execution: rule metrics, judge metrics and suite aggregation."""

from __future__ import annotations

import json
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from . import TraceEvalError
from .gateway import Gateway, GatewayError, ModelRequest
from .records import EvalRecord
from .rules import Rule, RuleError, parse_rule

logger = logging.getLogger(__name__)

RULE = "Rule"
JUDGE = "Judge"
DEFAULT_THRESHOLD = 0.7

JUDGE_SYSTEM = "You are a strict evaluation judge. You answer with JSON only."
FORMAT_REMINDER = (
    'Your previous answer was not valid. Reply with exactly one JSON object: '
    '{"score": <number between 0 and 1>, "reason": "<short explanation>"}'
)


class MetricError(TraceEvalError):
    pass


@dataclass(frozen=True)
class MetricSpec:
    name: str
    kind: str
    threshold: float = DEFAULT_THRESHOLD
    criteria: str | None = None
    rule: Rule | None = None
    # set when the suite generator used the agent's own output as the reference
    reference_is_output: bool = False

    def __post_init__(self) -> None:
        if not self.name:
            raise MetricError("metric name must be non-empty")
        if self.kind not in (RULE, JUDGE):
            raise MetricError(f"metric {self.name}: unknown kind {self.kind!r}")
        if isinstance(self.threshold, bool) or not 0.0 <= self.threshold <= 1.0:
            raise MetricError(f"metric {self.name}: threshold must be in [0, 1]")
        if self.kind == JUDGE and not (self.criteria and self.criteria.strip()):
            raise MetricError(f"judge metric {self.name} needs criteria")
        if self.kind == RULE and self.rule is None:
            raise MetricError(f"rule metric {self.name} needs a rule")

    @property
    def heuristic(self) -> bool:
        return self.rule is not None and self.rule.is_heuristic()

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"name": self.name, "kind": self.kind, "threshold": self.threshold}
        if self.kind == JUDGE:
            d["criteria"] = self.criteria
        else:
            d["rule"] = self.rule.to_dict()
            d["heuristic"] = self.heuristic
        if self.reference_is_output:
            d["reference_is_output"] = True
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "MetricSpec":
        if not isinstance(data, dict):
            raise MetricError(f"metric spec must be an object, got {data!r}")
        kind = data.get("kind")
        try:
            rule = parse_rule(data["rule"]) if kind == RULE and "rule" in data else None
        except RuleError as exc:
            raise MetricError(f"metric {data.get('name')}: {exc}") from exc
        threshold = data.get("threshold", DEFAULT_THRESHOLD)
        if isinstance(threshold, bool) or not isinstance(threshold, (int, float)):
            raise MetricError(f"metric {data.get('name')}: threshold must be a number")
        return cls(
            name=str(data.get("name", "")),
            kind=kind,
            threshold=float(threshold),
            criteria=data.get("criteria"),
            rule=rule,
            reference_is_output=bool(data.get("reference_is_output", False)),
        )


def load_suite(path: str | Path) -> list[MetricSpec]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    items = data["metrics"] if isinstance(data, dict) else data
    return [MetricSpec.from_dict(d) for d in items]


def dump_suite(specs: Sequence[MetricSpec]) -> str:
    return json.dumps({"metrics": [s.to_dict() for s in specs]}, indent=2, ensure_ascii=False) + "\n"


@dataclass(frozen=True)
class MetricResult:
    metric: str
    test_id: str
    score: float | None
    passed: bool
    reason: str = ""
    error: str | None = None
    retried: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "metric": self.metric,
            "test_id": self.test_id,
            "score": self.score,
            "passed": self.passed,
            "reason": self.reason,
            "error": self.error,
            "retried": self.retried,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "MetricResult":
        return cls(
            d["metric"], d["test_id"], d.get("score"), bool(d.get("passed")),
            d.get("reason", ""), d.get("error"), bool(d.get("retried", False)),
        )


def _scored(spec: MetricSpec, record: EvalRecord, score: float, reason: str, retried=False):
    return MetricResult(spec.name, record.test_id, score, score >= spec.threshold, reason, None, retried)


def _failed(spec: MetricSpec, record: EvalRecord, error: str, retried=False):
    return MetricResult(spec.name, record.test_id, None, False, "", error, retried)


def measure_rule(record: EvalRecord, spec: MetricSpec) -> MetricResult:
    if spec.kind != RULE:
        raise MetricError(f"{spec.name} is not a rule metric")
    try:
        score = float(spec.rule.score(record))
    except RuleError as exc:
        return _failed(spec, record, str(exc))
    reason = json.dumps(spec.rule.to_dict(), sort_keys=True)
    if spec.heuristic:
        reason = "heuristic keyword rule: " + reason
    return _scored(spec, record, score, reason)


def judge_prompt(record: EvalRecord, spec: MetricSpec) -> str:
    parts = [
        f"Metric: {spec.name}",
        f"Criteria: {spec.criteria.strip()}",
        f"User Query: {record.input}",
        f"Agent Response: {record.actual_output}",
    ]
    if record.expected_behavior and not spec.reference_is_output:
        parts.append(f"Expected Behavior: {record.expected_behavior}")
    if record.tool_calls:
        parts.append("Tool Calls: " + ", ".join(t.tool_name for t in record.tool_calls))
    parts.append("Score 0-1.")
    parts.append('Respond JSON: {"score": <float>, "reason": "<explanation>"}')
    return "\n".join(parts)


_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def extract_json_object(text: str) -> dict[str, Any] | None:
    """First JSON object in ``text`` (code fences tolerated), else None."""
    candidates = [m.group(1) for m in _FENCE.finditer(text)] + [text]
    decoder = json.JSONDecoder()
    for chunk in candidates:
        for i, ch in enumerate(chunk):
            if ch != "{":
                continue
            try:
                obj, _ = decoder.raw_decode(chunk[i:])
            except json.JSONDecodeError:
                continue
            if isinstance(obj, dict):
                return obj
    return None


def _parse_judge(text: str) -> tuple[float, str] | None:
    obj = extract_json_object(text)
    if obj is None:
        return None
    score = obj.get("score")
    if isinstance(score, bool) or not isinstance(score, (int, float)):
        return None
    return float(score), str(obj.get("reason", ""))


def measure_judge(record: EvalRecord, spec: MetricSpec, gateway: Gateway) -> MetricResult:
    """Ask the judge model for a score; one format-repair retry, no clamping."""
    if spec.kind != JUDGE:
        raise MetricError(f"{spec.name} is not a judge metric")
    messages = [("system", JUDGE_SYSTEM), ("user", judge_prompt(record, spec))]
    retried = False
    try:
        text = gateway.complete(ModelRequest.of(*messages, temperature=0.0)).text
        parsed = _parse_judge(text)
        if parsed is None:
            retried = True
            messages += [("assistant", text), ("user", FORMAT_REMINDER)]
            text = gateway.complete(ModelRequest.of(*messages, temperature=0.0)).text
            parsed = _parse_judge(text)
    except GatewayError as exc:
        return _failed(spec, record, f"judge call failed: {exc}", retried)
    if parsed is None:
        return _failed(spec, record, "unparseable judge output", retried)
    score, reason = parsed
    if math.isnan(score) or not 0.0 <= score <= 1.0:
        return _failed(spec, record, f"score out of range: {score}", retried)
    return _scored(spec, record, score, reason, retried)


def measure(record: EvalRecord, spec: MetricSpec, gateway: Gateway | None) -> MetricResult:
    if spec.kind == RULE:
        return measure_rule(record, spec)
    if gateway is None:
        return _failed(spec, record, "no gateway configured for judge metric")
    return measure_judge(record, spec, gateway)


@dataclass(frozen=True)
class MetricSummary:
    mean_score: float | None
    pass_rate: float
    n_scored: int
    n_errors: int
    heuristic: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "mean_score": self.mean_score,
            "pass_rate": self.pass_rate,
            "n_scored": self.n_scored,
            "n_errors": self.n_errors,
            "heuristic": self.heuristic,
        }


@dataclass
class SuiteResult:
    specs: list[MetricSpec]
    records: list[EvalRecord]
    results: list[MetricResult]
    per_metric: dict[str, MetricSummary] = field(default_factory=dict)
    success_rate: float = 0.0
    n_records: int = 0
    n_passed: int = 0

    @classmethod
    def aggregate(
        cls, specs: Sequence[MetricSpec], records: Sequence[EvalRecord], results: Sequence[MetricResult]
    ) -> "SuiteResult":
        """Deterministic fold over the flat result list."""
        per_metric = {}
        for spec in specs:
            cells = [r for r in results if r.metric == spec.name]
            scores = [r.score for r in cells if r.error is None]
            per_metric[spec.name] = MetricSummary(
                mean_score=math.fsum(scores) / len(scores) if scores else None,
                pass_rate=sum(r.passed for r in cells) / len(cells) if cells else 0.0,
                n_scored=len(scores),
                n_errors=len(cells) - len(scores),
                heuristic=spec.heuristic,
            )
        passed_all = {rec.test_id for rec in records}
        for r in results:
            if not r.passed:
                passed_all.discard(r.test_id)
        n = len(records)
        return cls(
            specs=list(specs),
            records=list(records),
            results=list(results),
            per_metric=per_metric,
            success_rate=len(passed_all) / n if n else 0.0,
            n_records=n,
            n_passed=len(passed_all),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_records": self.n_records,
            "n_passed": self.n_passed,
            "success_rate": self.success_rate,
            "per_metric": {k: v.to_dict() for k, v in self.per_metric.items()},
            "metrics": [s.to_dict() for s in self.specs],
            "records": [r.to_dict() for r in self.records],
            "results": [r.to_dict() for r in self.results],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SuiteResult":
        specs = [MetricSpec.from_dict(d) for d in data["metrics"]]
        records = [EvalRecord.from_dict(d) for d in data["records"]]
        results = [MetricResult.from_dict(d) for d in data["results"]]
        return cls.aggregate(specs, records, results)

    @classmethod
    def load(cls, path: str | Path) -> "SuiteResult":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def run_suite(
    records: Sequence[EvalRecord],
    specs: Sequence[MetricSpec],
    gateway: Gateway | None = None,
    concurrency: int = 1,
    results_path: str | Path | None = None,
) -> SuiteResult:
    """Measure every (record, metric) cell; cell errors are recorded, not raised."""
    if not records:
        raise MetricError("run_suite needs at least one record")
    if not specs:
        raise MetricError("run_suite needs at least one metric")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise MetricError("metric names must be unique within a suite")
    cells = [(rec, spec) for rec in records for spec in specs]
    if concurrency <= 1:
        results = [measure(rec, spec, gateway) for rec, spec in cells]
    else:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            results = list(pool.map(lambda c: measure(c[0], c[1], gateway), cells))
    suite = SuiteResult.aggregate(specs, records, results)
    if results_path is not None:
        Path(results_path).write_text(suite.to_json(), encoding="utf-8")
    return suite
