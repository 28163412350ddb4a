"""Evaluation plans (Markdown) and test cases (JSON Lines)."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Iterable

from . import TraceEvalError

CODE_BASED = "CodeBased"
LLM_AS_JUDGE = "LLMAsJudge"

SECTION_TITLES = {
    "agent_spec": "Agent Specification",
    "objectives": "Evaluation Objectives",
    "metrics": "Evaluation Metrics",
    "scenarios": "Test Scenarios",
    "tech_stack": "Technology Stack",
}
_METHOD_ALIASES = {
    "code-based": CODE_BASED,
    "code based": CODE_BASED,
    "codebased": CODE_BASED,
    "rule": CODE_BASED,
    "llm-as-judge": LLM_AS_JUDGE,
    "llm-as-a-judge": LLM_AS_JUDGE,
    "llm as judge": LLM_AS_JUDGE,
    "llmasjudge": LLM_AS_JUDGE,
    "judge": LLM_AS_JUDGE,
}
_H2 = re.compile(r"^##\s+(?:\d+[.)]\s*)?(.+?)\s*$")
_H3 = re.compile(r"^###\s+(.+?)\s*$")
_FIELD = re.compile(r"^\s*[-*]?\s*\*\*([^*:]+?)\s*(?::\*\*|\*\*\s*:)\s*(.*?)\s*$")
_LIST_ITEM = re.compile(r"^\s*(?:[-*+]|\d+[.)])\s+(.*\S)\s*$")


class PlanError(TraceEvalError):
    pass


def parse_method(raw: str) -> str:
    key = raw.strip().strip("[]").strip().lower()
    if key in _METHOD_ALIASES:
        return _METHOD_ALIASES[key]
    if raw.strip() in (CODE_BASED, LLM_AS_JUDGE):
        return raw.strip()
    raise PlanError(f"unrecognized metric method {raw!r}")


def method_label(method: str) -> str:
    return "Code-based" if method == CODE_BASED else "LLM-as-Judge"


@dataclass(frozen=True)
class PlanMetric:
    name: str
    area: str
    description: str
    method: str

    def __post_init__(self) -> None:
        if not self.name.strip():
            raise PlanError("plan metric needs a name")
        if self.method not in (CODE_BASED, LLM_AS_JUDGE):
            raise PlanError(f"metric {self.name}: unrecognized method {self.method!r}")


@dataclass
class EvaluationPlan:
    agent_spec: str
    objectives: list[str]
    metrics: list[PlanMetric]
    scenarios: list[str] = field(default_factory=list)
    tech_stack: list[str] = field(default_factory=list)
    title: str | None = None

    def metric_names(self) -> list[str]:
        return [m.name for m in self.metrics]

    def to_markdown(self) -> str:
        out = [f"# {self.title or 'Evaluation Plan'}", ""]
        out += ["## 1. " + SECTION_TITLES["agent_spec"], self.agent_spec.strip(), ""]
        out += ["## 2. " + SECTION_TITLES["objectives"]] + [f"- {o}" for o in self.objectives] + [""]
        out.append("## 3. " + SECTION_TITLES["metrics"])
        for m in self.metrics:
            out += [
                "",
                f"### {m.name}",
                f"- **Evaluation Area:** {m.area}",
                f"- **Description:** {m.description}",
                f"- **Method:** {method_label(m.method)}",
            ]
        out.append("")
        out += ["## 4. " + SECTION_TITLES["scenarios"]] + [f"- {s}" for s in self.scenarios] + [""]
        out += ["## 5. " + SECTION_TITLES["tech_stack"]] + [f"- {t}" for t in self.tech_stack]
        return "\n".join(out).rstrip() + "\n"


def _sections(text: str) -> tuple[str | None, dict[str, list[str]]]:
    title = None
    sections: dict[str, list[str]] = {}
    current: list[str] | None = None
    for line in text.splitlines():
        if line.startswith("# ") and title is None and not sections:
            title = line[2:].strip()
            continue
        m = _H2.match(line)
        if m:
            name = m.group(1).strip().rstrip(":").lower()
            key = next((k for k, t in SECTION_TITLES.items() if t.lower() == name), None)
            current = sections.setdefault(key, []) if key else None
            continue
        if current is not None:
            current.append(line)
    return title, sections


def _items(lines: Iterable[str]) -> list[str]:
    out = []
    for line in lines:
        m = _LIST_ITEM.match(line)
        if m:
            out.append(m.group(1))
    if not out:
        para = " ".join(line.strip() for line in lines if line.strip() and not line.startswith("<!--"))
        if para:
            out.append(para)
    return out


def _metrics(lines: list[str]) -> list[PlanMetric]:
    blocks: list[tuple[str, list[str]]] = []
    for line in lines:
        m = _H3.match(line)
        if m:
            blocks.append((m.group(1).strip(), []))
        elif blocks:
            blocks[-1][1].append(line)
    metrics = []
    for name, body in blocks:
        fields: dict[str, str] = {}
        for line in body:
            fm = _FIELD.match(line)
            if fm:
                fields[fm.group(1).strip().lower()] = fm.group(2).strip()
        if "method" not in fields:
            raise PlanError(f"metric {name!r} has no Method field")
        metrics.append(
            PlanMetric(
                name=name,
                area=fields.get("evaluation area", ""),
                description=fields.get("description", ""),
                method=parse_method(fields["method"]),
            )
        )
    return metrics


def parse_plan(text: str) -> EvaluationPlan:
    """Parse plan Markdown: level-2 sections, one level-3 block per metric."""
    title, sections = _sections(text)
    if "metrics" not in sections:
        raise PlanError("plan has no Evaluation Metrics section")
    metrics = _metrics(sections["metrics"])
    if not metrics:
        raise PlanError("Evaluation Metrics section defines no metrics")
    names = [m.name for m in metrics]
    if len(set(names)) != len(names):
        raise PlanError("plan metric names must be unique")
    spec_lines = [ln for ln in sections.get("agent_spec", []) if ln.strip()]
    return EvaluationPlan(
        agent_spec="\n".join(spec_lines).strip(),
        objectives=_items(sections.get("objectives", [])),
        metrics=metrics,
        scenarios=_items(sections.get("scenarios", [])),
        tech_stack=_items(sections.get("tech_stack", [])),
        title=title,
    )


# -- test cases -----------------------------------------------------------------

TEST_CASE_FIELDS = ("test_id", "scenario", "query", "description", "expected_behavior")


class TestCaseError(TraceEvalError):
    __test__ = False


@dataclass(frozen=True)
class TestCase:
    __test__ = False  # not a pytest class

    test_id: str
    scenario: str
    query: str
    description: str
    expected_behavior: str

    def __post_init__(self) -> None:
        if not self.test_id.strip():
            raise TestCaseError("test_id must be non-empty")
        if not self.query.strip():
            raise TestCaseError(f"test case {self.test_id}: query must be non-empty")

    def to_dict(self) -> dict[str, str]:
        return {k: getattr(self, k) for k in TEST_CASE_FIELDS}

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: Any) -> "TestCase":
        if not isinstance(data, dict):
            raise TestCaseError("test case must be a JSON object")
        keys = set(data)
        missing = [k for k in TEST_CASE_FIELDS if k not in keys]
        extra = sorted(keys - set(TEST_CASE_FIELDS))
        if missing:
            raise TestCaseError(f"missing field(s): {', '.join(missing)}")
        if extra:
            raise TestCaseError(f"unexpected field(s): {', '.join(extra)}")
        bad = [k for k in TEST_CASE_FIELDS if not isinstance(data[k], str)]
        if bad:
            raise TestCaseError(f"field(s) must be strings: {', '.join(bad)}")
        return cls(**{k: data[k] for k in TEST_CASE_FIELDS})


@dataclass(frozen=True)
class LineIssue:
    line_no: int
    message: str

    def to_dict(self) -> dict[str, Any]:
        return {"line": self.line_no, "error": self.message}


def parse_test_cases(text: str) -> tuple[list[TestCase], list[LineIssue]]:
    """Parse JSONL leniently; bad or duplicate lines become issues."""
    cases: list[TestCase] = []
    issues: list[LineIssue] = []
    seen: set[str] = set()
    # split on newline only: str.splitlines() also breaks on U+0085/U+2028,
    # which JSON strings may carry unescaped
    for no, line in enumerate(text.split("\n"), 1):
        if not line.strip() or line.strip().startswith("```"):
            continue
        try:
            case = TestCase.from_dict(json.loads(line))
        except json.JSONDecodeError as exc:
            issues.append(LineIssue(no, f"invalid JSON: {exc.msg}"))
            continue
        except TestCaseError as exc:
            issues.append(LineIssue(no, str(exc)))
            continue
        if case.test_id in seen:
            issues.append(LineIssue(no, f"duplicate test_id {case.test_id!r}"))
            continue
        seen.add(case.test_id)
        cases.append(case)
    return cases, issues


def dump_test_cases(cases: Iterable[TestCase]) -> str:
    cases = list(cases)
    ids = [c.test_id for c in cases]
    if len(set(ids)) != len(ids):
        raise TestCaseError("duplicate test_id in suite")
    return "".join(c.to_json_line() + "\n" for c in cases)
