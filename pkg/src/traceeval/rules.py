"""Deterministic rule expressions over evaluation records.

Rules are plain JSON objects keyed by ``op``::

    {"op": "all", "args": [{"op": "tool_called", "name": "search"},
                           {"op": "output_contains", "pattern": "hotel"}]}

Every rule scores a record in [0, 1]; the leaves score 0 or 1 and the
combinators fold with all=min, any=max, not=1-x.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass
from typing import Any

from . import TraceEvalError
from .records import EvalRecord

_CMP = {
    "==": operator.eq,
    "!=": operator.ne,
    ">=": operator.ge,
    ">": operator.gt,
    "<=": operator.le,
    "<": operator.lt,
}


class RuleError(TraceEvalError):
    pass


class MissingFieldError(RuleError):
    pass


class Rule:
    heuristic = False

    def score(self, record: EvalRecord) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError

    def is_heuristic(self) -> bool:
        return self.heuristic


@dataclass(frozen=True)
class ToolCalled(Rule):
    name: str

    def score(self, record: EvalRecord) -> float:
        return 1.0 if any(t.tool_name == self.name for t in record.tool_calls) else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {"op": "tool_called", "name": self.name}


@dataclass(frozen=True)
class ToolCallCount(Rule):
    cmp: str
    k: int
    name: str | None = None

    def score(self, record: EvalRecord) -> float:
        calls = [t for t in record.tool_calls if self.name is None or t.tool_name == self.name]
        return 1.0 if _CMP[self.cmp](len(calls), self.k) else 0.0

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"op": "tool_call_count", "cmp": self.cmp, "k": self.k}
        if self.name is not None:
            d["name"] = self.name
        return d


@dataclass(frozen=True)
class OutputContains(Rule):
    pattern: str
    ignore_case: bool = False
    heuristic = True

    def score(self, record: EvalRecord) -> float:
        hay, needle = record.actual_output, self.pattern
        if self.ignore_case:
            hay, needle = hay.lower(), needle.lower()
        return 1.0 if needle in hay else 0.0

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"op": "output_contains", "pattern": self.pattern}
        if self.ignore_case:
            d["ignore_case"] = True
        return d


@dataclass(frozen=True)
class OutputNonEmpty(Rule):
    def score(self, record: EvalRecord) -> float:
        return 1.0 if record.actual_output.strip() else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {"op": "output_nonempty"}


def resolve_path(record: EvalRecord, path: str) -> Any:
    """Walk a dotted path (``tool_calls.0.tool_name``) through the record."""
    node: Any = record.to_dict()
    for part in path.split("."):
        if isinstance(node, dict) and part in node:
            node = node[part]
        elif isinstance(node, list) and part.isdigit() and int(part) < len(node):
            node = node[int(part)]
        else:
            raise MissingFieldError(f"record {record.test_id} has no field {path!r}")
    return node


@dataclass(frozen=True)
class FieldEquals(Rule):
    path: str
    value: Any

    def score(self, record: EvalRecord) -> float:
        return 1.0 if resolve_path(record, self.path) == self.value else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {"op": "field_equals", "path": self.path, "value": self.value}


@dataclass(frozen=True)
class All(Rule):
    args: tuple[Rule, ...]

    def score(self, record: EvalRecord) -> float:
        return min(a.score(record) for a in self.args)

    def to_dict(self) -> dict[str, Any]:
        return {"op": "all", "args": [a.to_dict() for a in self.args]}

    def is_heuristic(self) -> bool:
        return any(a.is_heuristic() for a in self.args)


@dataclass(frozen=True)
class Any_(Rule):
    args: tuple[Rule, ...]

    def score(self, record: EvalRecord) -> float:
        return max(a.score(record) for a in self.args)

    def to_dict(self) -> dict[str, Any]:
        return {"op": "any", "args": [a.to_dict() for a in self.args]}

    def is_heuristic(self) -> bool:
        return any(a.is_heuristic() for a in self.args)


@dataclass(frozen=True)
class Not(Rule):
    arg: Rule

    def score(self, record: EvalRecord) -> float:
        return 1.0 - self.arg.score(record)

    def to_dict(self) -> dict[str, Any]:
        return {"op": "not", "arg": self.arg.to_dict()}

    def is_heuristic(self) -> bool:
        return self.arg.is_heuristic()


def parse_rule(data: Any) -> Rule:
    if not isinstance(data, dict) or "op" not in data:
        raise RuleError(f"rule must be an object with an 'op' key, got {data!r}")
    op = data["op"]
    try:
        if op == "tool_called":
            return ToolCalled(str(data["name"]))
        if op == "tool_call_count":
            if data["cmp"] not in _CMP:
                raise RuleError(f"unknown comparison {data['cmp']!r}")
            k = data["k"]
            if isinstance(k, bool) or not isinstance(k, int):
                raise RuleError("tool_call_count k must be an integer")
            return ToolCallCount(data["cmp"], k, data.get("name"))
        if op == "output_contains":
            return OutputContains(str(data["pattern"]), bool(data.get("ignore_case", False)))
        if op == "output_nonempty":
            return OutputNonEmpty()
        if op == "field_equals":
            return FieldEquals(str(data["path"]), data["value"])
        if op in ("all", "any"):
            args = data["args"]
            if not isinstance(args, list) or not args:
                raise RuleError(f"{op} needs a non-empty args list")
            parsed = tuple(parse_rule(a) for a in args)
            return All(parsed) if op == "all" else Any_(parsed)
        if op == "not":
            return Not(parse_rule(data["arg"]))
    except KeyError as exc:
        raise RuleError(f"rule {op!r} missing field {exc.args[0]!r}") from exc
    raise RuleError(f"unknown rule op {op!r}")
