from __future__ import annotations

import json
import os
import sys
import shutil
from pathlib import Path
from typing import Callable

import pytest
from hypothesis import HealthCheck, settings

from traceeval.gateway import DocQuery, Gateway, ModelRequest, ModelResponse, count_tokens

settings.register_profile("repo", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

FIXTURES = Path(__file__).parent / "fixtures"
AGENTS = FIXTURES / "agents"


class FunctionBackend:
    """Backend answering with ``fn(request) -> text``; counts calls."""

    def __init__(self, fn: Callable[[ModelRequest], str], docs: dict | None = None):
        self.fn = fn
        self.docs = docs or {}
        self.calls = 0
        self.doc_calls = 0

    def complete(self, request: ModelRequest) -> ModelResponse:
        self.calls += 1
        text = self.fn(request)
        return ModelResponse(text, count_tokens(request.prompt_text), count_tokens(text))

    def retrieve_docs(self, query: DocQuery) -> str | None:
        self.doc_calls += 1
        return self.docs.get(query.library, {}).get(query.question)


def function_gateway(fn, docs=None) -> tuple[Gateway, FunctionBackend]:
    backend = FunctionBackend(fn, docs)
    return Gateway(backend), backend


def last_user(request: ModelRequest) -> str:
    return [m.content for m in request.messages if m.role == "user"][-1]


def otlp_line(spans: list[dict]) -> str:
    return json.dumps({"resourceSpans": [{"scopeSpans": [{"spans": spans}]}]})


def raw_span(span_id="01", trace_id="aa", name="op", start=1, end=2, attrs=None, events=None, parent=None):
    d = {"traceId": trace_id, "spanId": span_id, "name": name,
         "startTimeUnixNano": start, "endTimeUnixNano": end,
         "attributes": [{"key": k, "value": v} for k, v in (attrs or {}).items()],
         "events": events or []}
    if parent:
        d["parentSpanId"] = parent
    return d


@pytest.fixture
def agent_copy(tmp_path) -> Callable[[str], Path]:
    """Copy a fixture agent into tmp so configs resolve relative to it."""

    def copy(name: str) -> Path:
        dest = tmp_path / "agents" / name
        shutil.copytree(AGENTS / name, dest)
        return dest

    return copy


def make_record(test_id="t1", output="answer", tools=(), provenance="real-trace", input="q", **kw):
    from traceeval.records import EvalRecord, ToolCall

    return EvalRecord(test_id, input, output, provenance,
                      tool_calls=[ToolCall(t) for t in tools], **kw)


class _OpenAudit:
    """Records paths passed to ``open`` and socket connects while active.
    The hook is process-wide and cannot be removed, so it is installed once
    and toggled."""

    def __init__(self):
        self.active = False
        self.paths: list[str] = []
        self.connects: list[object] = []
        self.installed = False

    def __call__(self, event, args):
        if not self.active:
            return
        if event == "open" and args and isinstance(args[0], (str, bytes, os.PathLike)):
            self.paths.append(os.fsdecode(args[0]))
        elif event == "socket.connect":
            self.connects.append(args[1] if len(args) > 1 else None)


_OPEN_AUDIT = _OpenAudit()


@pytest.fixture
def open_audit():
    if not _OPEN_AUDIT.installed:
        sys.addaudithook(_OPEN_AUDIT)
        _OPEN_AUDIT.installed = True
    _OPEN_AUDIT.paths = []
    _OPEN_AUDIT.connects = []
    _OPEN_AUDIT.active = True
    try:
        yield _OPEN_AUDIT
    finally:
        _OPEN_AUDIT.active = False


# one summary line per acceptance criterion
CRITERIA: dict[int, tuple[str, bool]] = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" in props and (report.when == "call" or report.failed):
        CRITERIA[props["criterion"]] = (props.get("criterion_title", ""), report.passed)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(CRITERIA):
        title, ok = CRITERIA[num]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {num:>2}: {title}")
