"""OTLP/JSON trace parsing, agent-span filtering and per-trace compaction.

Input files are JSON Lines where every line is one OTLP export object::

    {"resourceSpans": [{"scopeSpans": [{"spans": [ ... ]}]}]}

Parsing never looks outside that shape; anything else on a line is a parse
error for the whole line.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from . import TraceEvalError

logger = logging.getLogger(__name__)

AGENT_KEY_PREFIXES = ("traceloop.", "gen_ai.", "http.")
TOOL_SPAN_PREFIX = "execute_tool "
USER_MESSAGE_EVENT = "gen_ai.user.message"
AGENT_NAME_KEY = "gen_ai.agent.name"

_HEX = re.compile(r"^[0-9a-fA-F]+$")
_DECIMAL = re.compile(r"^[0-9]+$")
_UINT64_MAX = 2**64 - 1
_COMPLETION_KEY = re.compile(r"^gen_ai\.completion\.(\d+)\.content$")
_PROMPT_KEY = re.compile(r"^gen_ai\.prompt\.(\d+)\.(content|role)$")
_CONTENT_KEYS = ("content", "gen_ai.event.content", "body", "message")
_RESPONSE_EVENTS = ("gen_ai.choice", "gen_ai.assistant.message")


class TraceParseError(TraceEvalError):
    """A trace line could not be parsed (raised in strict mode)."""


class TraceProcessingError(TraceEvalError):
    pass


@dataclass(frozen=True)
class AttributeValue:
    """OTLP ``AnyValue`` restricted to the four scalar variants."""

    text: str | None = None
    integer: int | None = None
    flag: bool | None = None
    real: float | None = None

    def __post_init__(self) -> None:
        populated = [v for v in (self.text, self.integer, self.flag, self.real) if v is not None]
        if len(populated) != 1:
            raise ValueError("exactly one attribute value variant must be set")

    @property
    def kind(self) -> str:
        if self.text is not None:
            return "text"
        if self.integer is not None:
            return "integer"
        if self.flag is not None:
            return "flag"
        return "real"

    def scalar(self) -> str | int | bool | float:
        # text > integer > flag > real; only one is ever set
        for value in (self.text, self.integer, self.flag, self.real):
            if value is not None:
                return value
        raise AssertionError("unreachable")


@dataclass(frozen=True)
class Attribute:
    key: str
    value: AttributeValue

    def __post_init__(self) -> None:
        if not self.key:
            raise ValueError("attribute key must be non-empty")


@dataclass(frozen=True)
class SpanEvent:
    name: str
    attributes: tuple[Attribute, ...] = ()


@dataclass(frozen=True)
class Span:
    trace_id: str
    span_id: str
    name: str
    start_unix_nano: int
    end_unix_nano: int
    parent_span_id: str | None = None
    attributes: tuple[Attribute, ...] = ()
    events: tuple[SpanEvent, ...] = ()

    def __post_init__(self) -> None:
        if self.end_unix_nano < self.start_unix_nano:
            raise ValueError("span ends before it starts")

    @property
    def duration_nano(self) -> int:
        return self.end_unix_nano - self.start_unix_nano


@dataclass(frozen=True)
class ParseErrorRecord:
    line_no: int
    message: str


@dataclass(frozen=True)
class Operation:
    name: str
    input: str | None
    output: str | None
    tool_name: str | None
    agent_name: str | None
    duration_nano: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "input": self.input,
            "output": self.output,
            "tool_name": self.tool_name,
            "agent_name": self.agent_name,
            "duration_nano": self.duration_nano,
        }


@dataclass
class ProcessedTrace:
    trace_id: str
    user_input: str | None = None
    final_response: str | None = None
    operations: list[Operation] = field(default_factory=list)
    agent_names: frozenset[str] = frozenset()
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "trace_id": self.trace_id,
            "user_input": self.user_input,
            "final_response": self.final_response,
            "operations": [op.to_dict() for op in self.operations],
            "agent_names": sorted(self.agent_names),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ProcessedTrace":
        return cls(
            trace_id=data["trace_id"],
            user_input=data.get("user_input"),
            final_response=data.get("final_response"),
            operations=[Operation(**op) for op in data.get("operations", [])],
            agent_names=frozenset(data.get("agent_names", [])),
        )


# -- parsing -----------------------------------------------------------------


def _coerce_timestamp(raw: Any, what: str) -> int:
    if isinstance(raw, bool):
        raise ValueError(f"{what} must be an integer, got boolean")
    if isinstance(raw, int):
        value = raw
    elif isinstance(raw, str) and _DECIMAL.match(raw):
        value = int(raw)
    else:
        raise ValueError(f"{what} is not an unsigned integer: {raw!r}")
    if not 0 <= value <= _UINT64_MAX:
        raise ValueError(f"{what} out of uint64 range")
    return value


def _parse_value(raw: Any) -> AttributeValue:
    if not isinstance(raw, dict) or not raw:
        raise ValueError(f"attribute value must be an object, got {raw!r}")
    if "stringValue" in raw:
        return AttributeValue(text=str(raw["stringValue"]))
    if "intValue" in raw:
        iv = raw["intValue"]
        if isinstance(iv, bool) or not isinstance(iv, (int, str)):
            raise ValueError(f"bad intValue {iv!r}")
        return AttributeValue(integer=int(iv))
    if "boolValue" in raw:
        if not isinstance(raw["boolValue"], bool):
            raise ValueError("boolValue must be boolean")
        return AttributeValue(flag=raw["boolValue"])
    if "doubleValue" in raw:
        dv = raw["doubleValue"]
        if isinstance(dv, bool) or not isinstance(dv, (int, float)):
            raise ValueError(f"bad doubleValue {dv!r}")
        return AttributeValue(real=float(dv))
    if "arrayValue" in raw or "kvlistValue" in raw or "bytesValue" in raw:
        # non-scalar values are kept as their JSON text
        return AttributeValue(text=json.dumps(raw, sort_keys=True, ensure_ascii=False))
    raise ValueError(f"unknown attribute value variant {sorted(raw)}")


def _parse_attributes(raw: Any) -> tuple[Attribute, ...]:
    if raw is None:
        return ()
    if not isinstance(raw, list):
        raise ValueError("attributes must be a list")
    out = []
    for item in raw:
        if not isinstance(item, dict) or not isinstance(item.get("key"), str) or not item["key"]:
            raise ValueError(f"malformed attribute {item!r}")
        out.append(Attribute(item["key"], _parse_value(item.get("value"))))
    return tuple(out)


def _hex_id(raw: Any, what: str, optional: bool = False) -> str | None:
    if optional and (raw is None or raw == ""):
        return None
    if not isinstance(raw, str) or not _HEX.match(raw):
        raise ValueError(f"{what} must be a hex string, got {raw!r}")
    return raw.lower()


def _parse_span(raw: Any) -> Span:
    if not isinstance(raw, dict):
        raise ValueError("span must be an object")
    for required in ("traceId", "spanId", "name", "startTimeUnixNano", "endTimeUnixNano"):
        if required not in raw:
            raise ValueError(f"span missing required field {required!r}")
    if not isinstance(raw["name"], str):
        raise ValueError("span name must be a string")
    events = []
    for ev in raw.get("events") or []:
        if not isinstance(ev, dict) or not isinstance(ev.get("name"), str):
            raise ValueError(f"malformed event {ev!r}")
        events.append(SpanEvent(ev["name"], _parse_attributes(ev.get("attributes"))))
    start = _coerce_timestamp(raw["startTimeUnixNano"], "startTimeUnixNano")
    end = _coerce_timestamp(raw["endTimeUnixNano"], "endTimeUnixNano")
    if end < start:
        raise ValueError("endTimeUnixNano precedes startTimeUnixNano")
    return Span(
        trace_id=_hex_id(raw["traceId"], "traceId"),
        span_id=_hex_id(raw["spanId"], "spanId"),
        parent_span_id=_hex_id(raw.get("parentSpanId"), "parentSpanId", optional=True),
        name=raw["name"],
        start_unix_nano=start,
        end_unix_nano=end,
        attributes=_parse_attributes(raw.get("attributes")),
        events=tuple(events),
    )


def _parse_line(line: str) -> list[Span]:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed JSON: {exc.msg}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("resourceSpans"), list):
        raise ValueError("line is not an OTLP export object (missing resourceSpans)")
    spans = []
    for rs in doc["resourceSpans"]:
        if not isinstance(rs, dict):
            raise ValueError("resourceSpans entry must be an object")
        for ss in rs.get("scopeSpans") or []:
            if not isinstance(ss, dict):
                raise ValueError("scopeSpans entry must be an object")
            for raw in ss.get("spans") or []:
                spans.append(_parse_span(raw))
    return spans


def parse_trace_file(
    lines: Iterable[str], strict: bool = False
) -> tuple[list[Span], list[ParseErrorRecord]]:
    """Parse OTLP/JSON lines into spans.

    A line contributes either all of its spans or a single error record. In
    strict mode the first malformed line raises :class:`TraceParseError`.
    Whitespace-only lines are ignored.
    """
    spans: list[Span] = []
    errors: list[ParseErrorRecord] = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            spans.extend(_parse_line(line))
        except ValueError as exc:
            if strict:
                raise TraceParseError(f"line {line_no}: {exc}") from exc
            errors.append(ParseErrorRecord(line_no, str(exc)))
    return spans, errors


def _value_to_otlp(value: AttributeValue) -> dict[str, Any]:
    kind = value.kind
    if kind == "text":
        return {"stringValue": value.text}
    if kind == "integer":
        return {"intValue": str(value.integer)}
    if kind == "flag":
        return {"boolValue": value.flag}
    return {"doubleValue": value.real}


def _attrs_to_otlp(attrs: Sequence[Attribute]) -> list[dict[str, Any]]:
    return [{"key": a.key, "value": _value_to_otlp(a.value)} for a in attrs]


def serialize_spans(spans: Sequence[Span]) -> str:
    """Render spans as a single OTLP/JSON export line (no trailing newline)."""
    out = []
    for s in spans:
        raw: dict[str, Any] = {
            "traceId": s.trace_id,
            "spanId": s.span_id,
            "name": s.name,
            "startTimeUnixNano": str(s.start_unix_nano),
            "endTimeUnixNano": str(s.end_unix_nano),
            "attributes": _attrs_to_otlp(s.attributes),
            "events": [
                {"name": e.name, "attributes": _attrs_to_otlp(e.attributes)} for e in s.events
            ],
        }
        if s.parent_span_id is not None:
            raw["parentSpanId"] = s.parent_span_id
        out.append(raw)
    doc = {"resourceSpans": [{"scopeSpans": [{"spans": out}]}]}
    return json.dumps(doc, ensure_ascii=False)


# -- attribute access ----------------------------------------------------------


def _lookup(attrs: Sequence[Attribute], key: str) -> AttributeValue | None:
    for attr in attrs:
        if attr.key == key:
            return attr.value
    return None


def get_span_attribute(span: Span, key: str) -> str | int | bool | float | None:
    """Value of the first attribute named ``key``, or None."""
    value = _lookup(span.attributes, key)
    return None if value is None else value.scalar()


def _text_attr(attrs: Sequence[Attribute], key: str) -> str | None:
    value = _lookup(attrs, key)
    return value.text if value is not None else None


def is_agent_span(span: Span) -> bool:
    return any(a.key.startswith(AGENT_KEY_PREFIXES) for a in span.attributes)


def filter_agent_spans(spans: Sequence[Span]) -> list[Span]:
    """Keep spans carrying at least one traceloop./gen_ai./http. attribute key."""
    return [s for s in spans if is_agent_span(s)]


def extract_agent_name(span: Span) -> str | None:
    return _text_attr(span.attributes, AGENT_NAME_KEY)


def extract_tool_name(span: Span, name_prefix: str = TOOL_SPAN_PREFIX) -> str | None:
    if name_prefix and span.name.startswith(name_prefix):
        return span.name[len(name_prefix):].strip() or None
    tool = _text_attr(span.attributes, "gen_ai.tool.name")
    if tool:
        return tool
    if _text_attr(span.attributes, "traceloop.span.kind") == "tool":
        return _text_attr(span.attributes, "traceloop.entity.name")
    return None


# -- compaction ------------------------------------------------------------------


def _event_content(event: SpanEvent) -> str | None:
    for key in _CONTENT_KEYS:
        value = _lookup(event.attributes, key)
        if value is not None:
            return str(value.scalar())
    return None


def _indexed(span: Span, pattern: re.Pattern[str]) -> dict[int, dict[str, str]]:
    slots: dict[int, dict[str, str]] = {}
    for attr in span.attributes:
        m = pattern.match(attr.key)
        if m and attr.value.text is not None:
            part = m.group(2) if pattern.groups > 1 else "content"
            slots.setdefault(int(m.group(1)), {})[part] = attr.value.text
    return slots


def _completion(span: Span) -> str | None:
    slots = _indexed(span, _COMPLETION_KEY)
    if slots:
        return slots[max(slots)]["content"]
    for event in span.events:
        if event.name in _RESPONSE_EVENTS:
            content = _event_content(event)
            if content is not None:
                return content
    return None


def _prompt_user_content(span: Span) -> str | None:
    slots = _indexed(span, _PROMPT_KEY)
    for idx in sorted(slots):
        if slots[idx].get("role", "user") == "user" and "content" in slots[idx]:
            return slots[idx]["content"]
    return None


def _only_http(span: Span) -> bool:
    return all(
        a.key.startswith("http.") or not a.key.startswith(AGENT_KEY_PREFIXES)
        for a in span.attributes
    )


def _operation(span: Span) -> Operation:
    if _only_http(span):
        inp = out = None
    else:
        inp = (
            _text_attr(span.attributes, "traceloop.entity.input")
            or _text_attr(span.attributes, "gen_ai.tool.call.arguments")
            or _prompt_user_content(span)
        )
        out = (
            _text_attr(span.attributes, "traceloop.entity.output")
            or _text_attr(span.attributes, "gen_ai.tool.call.result")
            or _completion(span)
        )
    return Operation(
        name=span.name,
        input=inp,
        output=out,
        tool_name=extract_tool_name(span),
        agent_name=extract_agent_name(span),
        duration_nano=span.duration_nano,
    )


def process_trace(spans: Sequence[Span]) -> ProcessedTrace:
    """Compact the spans of one trace into a :class:`ProcessedTrace`."""
    trace_ids = {s.trace_id for s in spans}
    if len(trace_ids) > 1:
        raise TraceProcessingError(f"spans from {len(trace_ids)} traces passed to process_trace")
    trace_id = next(iter(trace_ids), "")
    relevant = sorted(
        filter_agent_spans(spans), key=lambda s: (s.start_unix_nano, s.end_unix_nano)
    )
    result = ProcessedTrace(trace_id=trace_id)
    if not relevant:
        result.warnings.append("no agent-relevant spans")
        return result

    by_time = sorted(spans, key=lambda s: (s.start_unix_nano, s.end_unix_nano))
    for span in by_time:
        hit = next((e for e in span.events if e.name == USER_MESSAGE_EVENT), None)
        if hit is not None and (content := _event_content(hit)) is not None:
            result.user_input = content
            break
    if result.user_input is None:
        result.user_input = next(
            (c for s in relevant if (c := _prompt_user_content(s)) is not None), None
        )

    # the completion-bearing span that finishes last carries the final answer
    finals = [s for s in relevant if _completion(s) is not None]
    if finals:
        last = max(finals, key=lambda s: (s.end_unix_nano, s.start_unix_nano))
        result.final_response = _completion(last)

    result.operations = [_operation(s) for s in relevant]
    result.agent_names = frozenset(op.agent_name for op in result.operations if op.agent_name)
    if result.user_input is None:
        result.warnings.append("no user input found")
    if result.final_response is None:
        result.warnings.append("no final response found")
    return result


def split_by_trace(spans: Sequence[Span]) -> dict[str, list[Span]]:
    groups: dict[str, list[Span]] = {}
    for span in spans:
        groups.setdefault(span.trace_id, []).append(span)
    return groups


@dataclass
class FileProcessingResult:
    source: Path
    traces: list[ProcessedTrace]
    errors: list[ParseErrorRecord]
    n_spans: int

    @property
    def failed(self) -> bool:
        return self.n_spans == 0


def process_trace_file(path: Path) -> FileProcessingResult:
    """Parse one JSONL file leniently and compact every trace it contains."""
    with open(path, encoding="utf-8") as fh:
        spans, errors = parse_trace_file(fh, strict=False)
    groups = split_by_trace(spans)
    traces = [process_trace(group) for _, group in sorted(groups.items())]
    if len(traces) > 1:
        for t in traces:
            t.warnings.append(f"{path.name} holds {len(traces)} traces; split by trace_id")
        logger.warning("%s contains %d traces; splitting", path, len(traces))
    for err in errors:
        logger.warning("%s:%d: %s", path, err.line_no, err.message)
    return FileProcessingResult(path, traces, errors, len(spans))
