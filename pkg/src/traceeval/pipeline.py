"""Six-stage evaluation pipeline over an on-disk workspace.

Stages run in :class:`StageId` order. Each stage reads only inputs and
artifacts of earlier stages, writes its own artifact slots, and records its
outcome in ``manifest.json``. Wall-clock durations go to ``timings.json`` so
that every other artifact is a deterministic function of the inputs and the
model responses.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import shutil
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator, Sequence

from . import TraceEvalError
from .audit import AuditVerdict, audit_run
from .config import DEFAULT_COLLECTOR, PipelineConfig, RunConfig
from .gateway import DocQuery, Gateway, GatewayError, ModelRequest
from .metrics import (
    JUDGE,
    RULE,
    MetricError,
    MetricSpec,
    SuiteResult,
    dump_suite,
    extract_json_object,
    run_suite,
)
from .numbers import fmt_pct, percent
from .plan import (
    CODE_BASED,
    EvaluationPlan,
    PlanError,
    TestCase,
    dump_test_cases,
    parse_plan,
    parse_test_cases,
)
from .records import EvalRecord, VacuousTraceError, trace_to_eval_record
from .skills import Registry, bundle_for_stage, default_registry, load_registry, render_text
from .stages import StageId
from .textbudget import truncate_bytes
from .traces import ProcessedTrace, process_trace_file

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
TIMINGS = "timings.json"
TRANSCRIPT = "transcript.jsonl"
LOCK = ".traceeval.lock"
PROCESSED_DIR = "traces/processed"
TRACE_SUFFIXES = (".jsonl", ".json")

# artifact slot -> producing stage (None: a run input)
SLOTS: dict[str, StageId | None] = {
    "requirement.txt": None,
    "plan.md": StageId.Planning,
    "plan.raw.md": StageId.Planning,
    "test_cases.jsonl": StageId.TestGen,
    "test_case_issues.json": StageId.TestGen,
    "instrumentation.txt": StageId.Instrumentation,
    PROCESSED_DIR: StageId.TraceProcessing,
    "metric_suite.json": StageId.CodeGen,
    "eval_script.py": StageId.CodeGen,
    "results.json": StageId.CodeGen,
    "audit.json": StageId.CodeGen,
    "report.md": StageId.Reporting,
}

DEFAULT_SNIPPET = """\
from traceloop.sdk import Traceloop

Traceloop.init(
    app_name="[AGENT NAME]",
    disable_batch=True,
    api_endpoint="[COLLECTOR ENDPOINT]"
)
"""

DEFAULT_REPORT = """\
# Agent Evaluation Report for [AGENT NAME]

## Executive Summary
- **Test Scale**: [N] test cases
- **Success Rate**: [SUCCESS RATE]
- **Status**: [STATUS]
- **Strengths**: [STRENGTHS]
- **Critical Issues**: [CRITICAL ISSUES]
- **Action Priority**: [ACTION PRIORITY]

## Results Analysis
[METRIC TABLE]

## Agent Failure Analysis
[FAILURE ANALYSIS]

## Recommendations
[RECOMMENDATIONS]

## Evaluation Validity
[AUDIT]
"""

# Instructions used when skills are disabled. Deliberately minimal and
# disjoint from the shipped skill texts.
PLAIN = {
    StageId.Planning: (
        "Write an evaluation plan for the agent as Markdown. Use level-2 sections "
        "Agent Specification, Evaluation Objectives, Evaluation Metrics, Test Scenarios "
        "and Technology Stack. Give each metric a level-3 heading and the bold fields "
        "Evaluation Area, Description and Method (Code-based or LLM-as-Judge)."
    ),
    StageId.TestGen: (
        "Produce test cases for the agent as JSON Lines with the keys test_id, scenario, "
        "query, description and expected_behavior."
    ),
    StageId.CodeGen: (
        'Produce the metric suite as JSON: {"metrics": [...]}. A "Judge" metric has '
        '"criteria"; a "Rule" metric has a "rule" object using the ops tool_called, '
        "tool_call_count, output_nonempty, output_contains, field_equals, all, any, not."
    ),
    StageId.Reporting: (
        "Summarise the evaluation results as JSON with the string fields strengths, "
        "critical_issues, action_priority, failure_analysis and recommendations."
    ),
}

SYSTEM = "You build evaluations for LLM agents from their code, traces and requirements."
NARRATIVE_FIELDS = ("strengths", "critical_issues", "action_priority", "failure_analysis",
                    "recommendations")
NO_NARRATIVE = "(narrative unavailable)"
MAX_SKILL_METRICS = 5
GENERIC_METRIC_CAP = 2


class PipelineError(TraceEvalError):
    pass


class StageFailure(PipelineError):
    def __init__(self, stage: StageId, message: str):
        super().__init__(f"{stage.value}: {message}")
        self.stage = stage
        self.message = message


class AccessViolation(PipelineError):
    pass


class WorkspaceLocked(PipelineError):
    pass


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


# -- workspace ----------------------------------------------------------------------


@dataclass
class Workspace:
    root: Path
    access_log: list[tuple[str, str, str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.root = Path(self.root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, slot: str) -> Path:
        return self.root / slot

    def exists(self, slot: str) -> bool:
        return self.path(slot).exists()

    def _check(self, slot: str, stage: StageId | None, mode: str) -> None:
        key = PROCESSED_DIR if slot.startswith(PROCESSED_DIR) else slot
        if key not in SLOTS:
            raise AccessViolation(f"unknown artifact slot {slot!r}")
        producer = SLOTS[key]
        self.access_log.append((stage.value if stage else "-", mode, slot))
        if stage is None:
            return
        if mode == "read" and producer is not None and producer.order >= stage.order:
            raise AccessViolation(f"{stage.value} may not read {slot} (produced by {producer.value})")
        if mode == "write" and producer is not stage:
            raise AccessViolation(f"{stage.value} may not write {slot}")

    def read_text(self, slot: str, stage: StageId | None = None) -> str:
        self._check(slot, stage, "read")
        return self.path(slot).read_text(encoding="utf-8")

    def write_text(self, slot: str, text: str, stage: StageId | None = None) -> Path:
        self._check(slot, stage, "write")
        p = self.path(slot)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8")
        return p

    def remove(self, slot: str) -> None:
        p = self.path(slot)
        if p.is_dir():
            shutil.rmtree(p)
        elif p.exists():
            p.unlink()

    def processed_files(self, stage: StageId | None = None) -> list[Path]:
        self._check(PROCESSED_DIR, stage, "read")
        d = self.path(PROCESSED_DIR)
        return sorted(d.glob("*.json")) if d.is_dir() else []

    @contextmanager
    def lock(self) -> Iterator[None]:
        p = self.path(LOCK)
        try:
            fd = os.open(p, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError as exc:
            raise WorkspaceLocked(f"workspace {self.root} is locked by another run ({p})") from exc
        try:
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            yield
        finally:
            p.unlink(missing_ok=True)

    def load_manifest(self) -> dict[str, Any] | None:
        p = self.path(MANIFEST)
        if not p.exists():
            return None
        with open(p, encoding="utf-8") as fh:
            return json.load(fh)

    def save_manifest(self, manifest: dict[str, Any]) -> None:
        self.path(MANIFEST).write_text(_dumps(manifest), encoding="utf-8")

    def reset(self) -> None:
        for slot in SLOTS:
            if slot != "requirement.txt":
                self.remove(slot)
        for name in (MANIFEST, TIMINGS, TRANSCRIPT):
            self.remove(name)


# -- stage context ----------------------------------------------------------------


def stage_enabled(stage: StageId, cfg: PipelineConfig) -> bool:
    if stage is StageId.Planning:
        return cfg.use_planning
    if stage is StageId.TraceProcessing:
        return cfg.use_traces
    return True


@dataclass
class StageContext:
    workspace: Workspace
    run: RunConfig
    gateway: Gateway
    requirement: str
    registry: Registry | None = None
    notes: list[str] = field(default_factory=list)
    retries: int = 0

    @property
    def cfg(self) -> PipelineConfig:
        return self.run.pipeline

    def skills_text(self, stage: StageId) -> str:
        if not self.cfg.use_skills or self.registry is None:
            return PLAIN.get(stage, "")
        return bundle_for_stage(self.registry, stage).to_markdown()


def load_skills(run: RunConfig) -> Registry | None:
    if not run.pipeline.use_skills:
        return None
    return load_registry(run.skills_root) if run.skills_root else default_registry()


def source_digest(source: Path | None, budget: int) -> str:
    """Agent source files concatenated in path order, capped at ``budget`` bytes."""
    if source is None or not source.exists():
        return "(agent source not provided)"
    files = [source] if source.is_file() else sorted(p for p in source.rglob("*") if p.is_file())
    parts = []
    for p in files:
        try:
            text = p.read_text(encoding="utf-8")
        except (UnicodeDecodeError, OSError):
            continue
        rel = p.name if source.is_file() else p.relative_to(source).as_posix()
        parts.append(f"### {rel}\n{text.rstrip()}\n")
    body, cut = truncate_bytes("\n".join(parts) or "(empty)", budget)
    return body + ("\n(source truncated to the byte budget)" if cut else "")


def raw_trace_files(raw_dir: Path | None) -> list[Path]:
    if raw_dir is None or not raw_dir.is_dir():
        return []
    return sorted(p for p in raw_dir.iterdir() if p.is_file() and p.suffix in TRACE_SUFFIXES)


def _processed_from_raw(raw_dir: Path | None) -> list[tuple[str, ProcessedTrace]]:
    out = []
    for f in raw_trace_files(raw_dir):
        res = process_trace_file(f)
        for i, t in enumerate(res.traces):
            out.append((f.stem if len(res.traces) == 1 else f"{f.stem}__{i}", t))
    return out


def trace_digest(traces: Sequence[tuple[str, ProcessedTrace]], budget: int) -> str:
    if not traces:
        return "(no traces)"
    lines = [json.dumps({"file": name, **t.to_dict()}, ensure_ascii=False) for name, t in traces]
    body, cut = truncate_bytes("\n".join(lines), budget)
    note = f"\n(traces truncated to {budget} bytes; head and tail kept)" if cut else ""
    return body + note


_BOILERPLATE = [
    r"\bplease\b",
    r"\b(create|write|generate|build|make|design|produce|develop)\b",
    r"\b(an?|the)\b",
    r"\bevaluations?\b",
    r"\b(plan|suite|code|metrics?|tests?)\b",
    r"\bfor\s+(this|my|our)\b",
    r"\b(this|my|our)\b",
    r"\bfor\b",
    r"\bagents?\b",
    r"\b(evaluate|assess)\b",
    r"\bit\b",
    r"\band\b",
]


def is_generic_requirement(requirement: str) -> bool:
    """True when the requirement names no specific evaluation criterion."""
    text = requirement.lower()
    for pat in _BOILERPLATE:
        text = re.sub(pat, " ", text)
    words = re.findall(r"[a-z0-9_']+", text)
    return len(words) <= 1


def metric_cap(cfg: PipelineConfig, requirement: str) -> int | None:
    if not cfg.use_skills:
        return None
    if cfg.metric_count_hint is not None:
        return cfg.metric_count_hint
    return GENERIC_METRIC_CAP if is_generic_requirement(requirement) else MAX_SKILL_METRICS


def _converse(ctx: StageContext, first: str, check: Callable[[str], Any], repair: bool) -> Any:
    """One model call, and at most one format-repair turn when ``repair``."""
    messages = [("system", SYSTEM), ("user", first)]
    text = ctx.gateway.complete(ModelRequest.of(*messages, temperature=ctx.run.model_temperature)).text
    try:
        return check(text), text
    except TraceEvalError as exc:
        if not repair:
            raise
        ctx.retries += 1
        ctx.notes.append(f"format repair: {exc}")
        messages += [("assistant", text), ("user", f"REJECTED: {exc}\nFix the output and answer again.")]
        text = ctx.gateway.complete(ModelRequest.of(*messages, temperature=ctx.run.model_temperature)).text
        return check(text), text


# -- stages -------------------------------------------------------------------------


def run_planning(ctx: StageContext) -> EvaluationPlan:
    stage = StageId.Planning
    traces = _processed_from_raw(ctx.run.raw_traces) if ctx.cfg.use_traces else []
    cap = metric_cap(ctx.cfg, ctx.requirement)
    parts = ["TASK: evaluation-plan", ctx.skills_text(stage)]
    if cap is not None:
        parts.append(f"Use at most {cap} metrics.")
    elif ctx.cfg.metric_count_hint is not None:
        parts.append(f"Use {ctx.cfg.metric_count_hint} metrics.")
    parts += [
        f"## User requirement\n{ctx.requirement.strip()}",
        f"## Agent name\n{ctx.run.agent_name}",
        f"## Agent source\n{source_digest(ctx.run.agent_source, ctx.cfg.source_byte_budget)}",
    ]
    if ctx.cfg.use_traces:
        parts.append(f"## Processed traces\n{trace_digest(traces, ctx.cfg.trace_byte_budget)}")

    def check(text: str) -> EvaluationPlan:
        plan = parse_plan(text)
        if cap is not None and len(plan.metrics) > cap:
            raise PlanError(f"plan has {len(plan.metrics)} metrics; the limit is {cap}")
        return plan

    try:
        plan, text = _converse(ctx, "\n\n".join(p for p in parts if p), check, repair=True)
    except PlanError as exc:
        raise StageFailure(stage, str(exc)) from exc
    ctx.workspace.write_text("plan.md", text.strip() + "\n", stage)
    return plan


class FixtureGenerator:
    """Canned test cases from a JSONL file."""

    def __init__(self, path: Path):
        self.path = path

    def generate(self, ctx: StageContext) -> tuple[list[TestCase], list]:
        return parse_test_cases(self.path.read_text(encoding="utf-8"))


class ModelGenerator:
    """Test cases written by the model from the plan (or the requirement)."""

    def generate(self, ctx: StageContext) -> tuple[list[TestCase], list]:
        stage = StageId.TestGen
        basis = (
            f"## Evaluation plan\n{ctx.workspace.read_text('plan.md', stage)}"
            if ctx.cfg.use_planning and ctx.workspace.exists("plan.md")
            else f"## User requirement\n{ctx.requirement.strip()}"
        )
        prompt = "\n\n".join(p for p in ["TASK: test-cases", ctx.skills_text(stage), basis] if p)

        def check(text: str):
            cases, issues = parse_test_cases(text)
            if not cases:
                raise PipelineError("no valid test case lines")
            return cases, issues

        (cases, issues), _ = _converse(ctx, prompt, check, repair=True)
        return cases, issues


class TraceQueryGenerator:
    """One test case per recorded user query; needs no model call."""

    def generate(self, ctx: StageContext) -> tuple[list[TestCase], list]:
        cases = []
        for i, (name, t) in enumerate(_processed_from_raw(ctx.run.raw_traces), 1):
            if t.user_input:
                cases.append(TestCase(f"trace_{i:03d}", "observed", t.user_input,
                                      f"query recorded in {name}", ""))
        return cases, []


def choose_generator(ctx: StageContext):
    if ctx.run.test_fixture is not None:
        return FixtureGenerator(ctx.run.test_fixture)
    if ctx.cfg.agentic:
        return ModelGenerator()
    if ctx.cfg.use_traces:
        return TraceQueryGenerator()
    raise StageFailure(StageId.TestGen, "no test generator available for this configuration")


def run_test_generation(ctx: StageContext, generator=None) -> list[TestCase]:
    stage = StageId.TestGen
    generator = generator or choose_generator(ctx)
    try:
        cases, issues = generator.generate(ctx)
    except TraceEvalError as exc:
        raise StageFailure(stage, str(exc)) from exc
    if issues:
        ctx.workspace.write_text("test_case_issues.json", _dumps([i.to_dict() for i in issues]), stage)
        ctx.notes.append(f"{len(issues)} test case line(s) rejected")
    if not cases:
        raise StageFailure(stage, "no test cases generated")
    ctx.workspace.write_text("test_cases.jsonl", dump_test_cases(cases), stage)
    return cases


def emit_instrumentation_snippet(
    agent_name: str, collector_endpoint: str | None = None, template: str = DEFAULT_SNIPPET
) -> str:
    if not agent_name or not agent_name.strip():
        raise PipelineError("agent name must be non-empty")
    endpoint = collector_endpoint or DEFAULT_COLLECTOR
    return render_text(template, {"AGENT NAME": agent_name, "COLLECTOR ENDPOINT": endpoint}).text


def run_instrumentation(ctx: StageContext) -> str:
    stage = StageId.Instrumentation
    template = DEFAULT_SNIPPET
    if ctx.cfg.use_skills and ctx.registry is not None and "instrumentation-snippet" in ctx.registry:
        template = ctx.registry.get("instrumentation-snippet").body
    try:
        text = emit_instrumentation_snippet(ctx.run.agent_name, ctx.run.collector_endpoint, template)
    except PipelineError as exc:
        raise StageFailure(stage, str(exc)) from exc
    ctx.workspace.write_text("instrumentation.txt", text, stage)
    return text


def run_trace_processing(workspace: Workspace, raw_dir: Path | None) -> list[ProcessedTrace]:
    stage = StageId.TraceProcessing
    files = raw_trace_files(raw_dir)
    if not files:
        raise StageFailure(stage, f"no trace files in {raw_dir}")
    workspace.remove(PROCESSED_DIR)
    out: list[ProcessedTrace] = []
    failed = 0
    for f in files:
        res = process_trace_file(f)
        if res.failed:
            failed += 1
            continue
        for i, t in enumerate(res.traces):
            name = f.stem if len(res.traces) == 1 else f"{f.stem}__{i}"
            workspace.write_text(f"{PROCESSED_DIR}/{name}.json", t.to_json(), stage)
            out.append(t)
    if failed == len(files):
        raise StageFailure(stage, "every trace file was malformed")
    return out


def _processed_from_workspace(ws: Workspace, stage: StageId) -> list[tuple[str, ProcessedTrace]]:
    out = []
    for p in ws.processed_files(stage):
        slot = f"{PROCESSED_DIR}/{p.name}"
        out.append((p.stem, ProcessedTrace.from_dict(json.loads(ws.read_text(slot, stage)))))
    return out


def _parse_suite(text: str) -> list[MetricSpec]:
    obj = extract_json_object(text)
    if obj is None or not isinstance(obj.get("metrics"), list):
        raise MetricError('expected a JSON object with a "metrics" list')
    specs = [MetricSpec.from_dict(d) for d in obj["metrics"]]
    if not specs:
        raise MetricError("suite with zero metrics")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise MetricError("duplicate metric names")
    return specs


def align_with_plan(specs: list[MetricSpec], plan: EvaluationPlan) -> list[MetricSpec]:
    """One spec per plan metric, kinds honouring the plan method, in plan order."""
    by_name = {s.name: s for s in specs}
    out = []
    for m in plan.metrics:
        spec = by_name.get(m.name)
        if spec is None:
            raise MetricError(f"suite lacks plan metric {m.name!r}")
        want = RULE if m.method == CODE_BASED else JUDGE
        if spec.kind != want:
            raise MetricError(f"metric {m.name!r} is {spec.kind} but the plan says {m.method}")
        if spec.kind == JUDGE and m.description and m.description not in spec.criteria:
            spec = MetricSpec(spec.name, spec.kind, spec.threshold,
                              f"{m.description}\n{spec.criteria}", None, spec.reference_is_output)
        out.append(spec)
    extra = sorted(set(by_name) - set(plan.metric_names()))
    if extra:
        raise MetricError(f"suite has metrics not in the plan: {', '.join(extra)}")
    return out


def doc_queries(registry: Registry | None) -> list[DocQuery]:
    if registry is None:
        return []
    out = []
    for skill in registry.skills:
        if skill.category != "dynamic-resource" or StageId.CodeGen not in skill.stages:
            continue
        for line in (skill.resource("queries.txt") or "").splitlines():
            lib, sep, q = line.partition("|")
            if sep and lib.strip() and q.strip():
                out.append(DocQuery(lib.strip(), q.strip()))
    return out


def build_records(
    traces: Sequence[tuple[str, ProcessedTrace]], cases: Sequence[TestCase]
) -> tuple[list[EvalRecord], list[str]]:
    by_query = {c.query.strip(): c for c in cases}
    taken = {name for name, _ in traces}
    records, notes = [], []
    for name, t in traces:
        try:
            rec = trace_to_eval_record(t, name)
        except VacuousTraceError as exc:
            notes.append(str(exc))
            continue
        case = by_query.pop(rec.input.strip(), None)
        if case is not None:
            if case.test_id not in taken:
                taken.add(case.test_id)
                rec.test_id = case.test_id
            rec.expected_behavior = case.expected_behavior or None
            rec.scenario = case.scenario
        records.append(rec)
    return records, notes


def synthetic_records(cases: Sequence[TestCase]) -> list[EvalRecord]:
    """Records for runs without trace access: queries only, no observed output."""
    return [
        EvalRecord(c.test_id, c.query, "", "synthetic", c.expected_behavior or None, [], c.scenario)
        for c in cases
    ]


def _strip_fences(text: str) -> str:
    m = re.search(r"```(?:python)?\s*\n(.*?)```", text, re.DOTALL)
    return (m.group(1) if m else text).strip() + "\n"


def run_code_generation(ctx: StageContext) -> SuiteResult:
    stage = StageId.CodeGen
    ws = ctx.workspace
    plan = parse_plan(ws.read_text("plan.md", stage)) if ctx.cfg.use_planning else None
    cases, _ = parse_test_cases(ws.read_text("test_cases.jsonl", stage))
    traces = _processed_from_workspace(ws, stage) if ctx.cfg.use_traces else []

    if not ctx.cfg.agentic:
        parts = [
            "TASK: single-shot-evaluation",
            PLAIN[StageId.CodeGen],
            f"## User requirement\n{ctx.requirement.strip()}",
            f"## Agent source\n{source_digest(ctx.run.agent_source, ctx.cfg.source_byte_budget)}",
            f"## Test cases\n{dump_test_cases(cases)}",
            f"## Processed traces\n{trace_digest(traces, ctx.cfg.trace_byte_budget)}",
        ]
    else:
        basis = (f"## Evaluation plan\n{ws.read_text('plan.md', stage)}" if plan is not None
                 else f"## User requirement\n{ctx.requirement.strip()}")
        parts = ["TASK: metric-suite", ctx.skills_text(stage), basis,
                 f"## Test cases\n{dump_test_cases(cases)}"]
        if ctx.cfg.use_traces:
            parts.append(f"## Processed traces\n{trace_digest(traces, ctx.cfg.trace_byte_budget)}")
        if ctx.cfg.metric_count_hint is not None:
            parts.append(f"Implement exactly {ctx.cfg.metric_count_hint} metrics.")
        if ctx.cfg.use_skills:
            docs = [f"### {q.library}: {q.question}\n{ctx.gateway.retrieve_docs(q)}"
                    for q in doc_queries(ctx.registry)]
            if docs:
                parts.append("## Retrieved documentation\n" + "\n\n".join(docs))

    def check(text: str) -> list[MetricSpec]:
        specs = _parse_suite(text)
        return align_with_plan(specs, plan) if plan is not None else specs

    try:
        specs, _ = _converse(ctx, "\n\n".join(p for p in parts if p), check, repair=ctx.cfg.agentic)
        if ctx.cfg.self_review and ctx.cfg.agentic:
            review = ctx.gateway.ask(
                "TASK: suite-review\nReview this metric suite for constant-scoring or "
                "self-referential metrics and return the corrected suite JSON.\n\n" + dump_suite(specs),
                SYSTEM, temperature=ctx.run.model_temperature)
            try:
                specs = check(review)
            except TraceEvalError as exc:
                ctx.notes.append(f"self-review output ignored: {exc}")
    except TraceEvalError as exc:
        raise StageFailure(stage, str(exc)) from exc
    ws.write_text("metric_suite.json", dump_suite(specs), stage)

    if ctx.cfg.emit_script and ctx.cfg.agentic:
        script = ctx.gateway.ask("TASK: eval-script\nWrite a standalone Python script that "
                                 "implements this suite.\n\n" + dump_suite(specs), SYSTEM,
                                 temperature=ctx.run.model_temperature)
        ws.write_text("eval_script.py", _strip_fences(script), stage)

    if ctx.cfg.use_traces:
        records, notes = build_records(traces, cases)
        ctx.notes += notes
    else:
        records = synthetic_records(cases)
        ctx.notes.append("no trace access: records carry queries only")
    if not records:
        raise StageFailure(stage, "no evaluation records")
    with ctx.gateway.stage(f"{stage.value}:evaluate", budget=None):
        suite = run_suite(records, specs, ctx.gateway, concurrency=ctx.cfg.concurrency)
    ws.write_text("results.json", suite.to_json(), stage)
    verdict = audit_run(None, suite)
    ws.write_text("audit.json", verdict.to_json(), stage)
    return suite


def _status(rate: float | None, verdict: AuditVerdict | None) -> str:
    if verdict is not None and not verdict.success:
        return f"Invalid evaluation ({verdict.category.value})"
    if rate is None:
        return "no tests executed"
    if rate >= 80.0:
        return "Healthy"
    if rate >= 50.0:
        return "Needs attention"
    return "Critical"


def metric_table(suite: SuiteResult) -> str:
    lines = ["| Metric | Kind | Mean score | Pass rate | Errors |", "|---|---|---|---|---|"]
    for spec in suite.specs:
        s = suite.per_metric[spec.name]
        kind = spec.kind + (" (heuristic)" if s.heuristic else "")
        mean = "n/a" if s.mean_score is None else f"{s.mean_score:.2f}"
        lines.append(f"| {spec.name} | {kind} | {mean} | {fmt_pct(s.pass_rate * 100)}% | {s.n_errors} |")
    return "\n".join(lines)


def failing_tests(suite: SuiteResult) -> str:
    out = []
    for spec in suite.specs:
        bad = [r.test_id for r in suite.results if r.metric == spec.name and not r.passed]
        if bad:
            out.append(f"- {spec.name}: {', '.join(bad)}")
    return "\n".join(out) if out else "- no failing test cases"


def render_report(
    agent_name: str,
    suite: SuiteResult | None,
    verdict: AuditVerdict | None,
    narrative: dict[str, str] | None = None,
    template: str = DEFAULT_REPORT,
) -> str:
    narrative = narrative or {}
    n = suite.n_records if suite is not None else 0
    rate = percent(suite.n_passed, n) if n else None
    fields = {
        "AGENT NAME": agent_name,
        "N": str(n),
        "SUCCESS RATE": f"{fmt_pct(rate)}%" if rate is not None else "n/a",
        "STATUS": _status(rate, verdict),
        "METRIC TABLE": metric_table(suite) if n else "No tests executed.",
        "AUDIT": (f"{verdict.category.value}: {verdict.evidence}" if verdict else "not audited"),
    }
    for key in NARRATIVE_FIELDS:
        fields[key.upper().replace("_", " ")] = narrative.get(key, NO_NARRATIVE)
    failures = fields["FAILURE ANALYSIS"]
    if n:
        failures = f"{failures}\n\nFailing test cases by metric:\n{failing_tests(suite)}"
    fields["FAILURE ANALYSIS"] = failures
    return render_text(template, fields).text


def run_reporting(ctx: StageContext) -> str:
    stage = StageId.Reporting
    ws = ctx.workspace
    suite = SuiteResult.from_dict(json.loads(ws.read_text("results.json", stage)))
    verdict = AuditVerdict.from_dict(json.loads(ws.read_text("audit.json", stage)))
    narrative = None
    if ctx.cfg.agentic and suite.n_records:
        summary = {
            "n_records": suite.n_records,
            "n_passed": suite.n_passed,
            "per_metric": {k: v.to_dict() for k, v in suite.per_metric.items()},
            "audit": verdict.to_dict(),
        }
        prompt = "\n\n".join(p for p in [
            "TASK: report-narrative", ctx.skills_text(stage),
            f"## Results summary\n{_dumps(summary)}",
            f"## Failing test cases\n{failing_tests(suite)}",
        ] if p)
        try:
            obj = extract_json_object(ctx.gateway.ask(prompt, SYSTEM, temperature=ctx.run.model_temperature))
        except GatewayError as exc:
            obj = None
            ctx.notes.append(f"narrative call failed: {exc}")
        if obj is not None:
            narrative = {k: str(obj[k]) for k in NARRATIVE_FIELDS if obj.get(k)}
        if not narrative:
            ctx.notes.append("report narrative missing; placeholders used")
    template = DEFAULT_REPORT
    if ctx.cfg.use_skills and ctx.registry is not None and "report-template" in ctx.registry:
        template = ctx.registry.get("report-template").body
    text = render_report(ctx.run.agent_name, suite, verdict, narrative, template)
    ws.write_text("report.md", text, stage)
    return text


# -- orchestration ------------------------------------------------------------------


def _stage_runner(stage: StageId) -> Callable[[StageContext], Any]:
    return {
        StageId.Planning: run_planning,
        StageId.TestGen: run_test_generation,
        StageId.Instrumentation: run_instrumentation,
        StageId.TraceProcessing: lambda ctx: run_trace_processing(ctx.workspace, ctx.run.raw_traces),
        StageId.CodeGen: run_code_generation,
        StageId.Reporting: run_reporting,
    }[stage]


def _fingerprint(run: RunConfig, requirement: str) -> str:
    return _sha(json.dumps({"pipeline": run.pipeline.to_dict(), "agent": run.agent_name,
                            "requirement": requirement}, sort_keys=True))


def fresh_manifest(run: RunConfig, requirement: str) -> dict[str, Any]:
    return {
        "mode": run.pipeline.mode,
        "config": run.pipeline.to_dict(),
        "fingerprint": _fingerprint(run, requirement),
        "stages": [
            {"stage": s.value, "status": "pending" if stage_enabled(s, run.pipeline) else "skipped"}
            for s in StageId
        ],
        "complete": False,
    }


def _entry(manifest: dict[str, Any], stage: StageId) -> dict[str, Any]:
    return next(e for e in manifest["stages"] if e["stage"] == stage.value)


def _is_complete(manifest: dict[str, Any]) -> bool:
    return all(e["status"] in ("completed", "skipped") for e in manifest["stages"])


def _prepare(
    ws: Workspace, run: RunConfig, requirement: str, force: bool, stages: Sequence[StageId] | None
) -> dict[str, Any]:
    manifest = ws.load_manifest()
    fp = _fingerprint(run, requirement)
    if manifest is not None and manifest.get("fingerprint") != fp:
        if not force:
            raise PipelineError(
                "workspace was built with a different configuration or requirement; use --force")
        manifest = None
    if manifest is None or (force and stages is None):
        ws.reset()
        manifest = fresh_manifest(run, requirement)
    elif force:
        # redo the requested stages and invalidate everything after them
        first = min(s.order for s in stages)
        for e in manifest["stages"]:
            if StageId(e["stage"]).order >= first and e["status"] != "skipped":
                e["status"] = "pending"
        manifest["complete"] = False
    ws.path("requirement.txt").write_text(requirement.strip() + "\n", encoding="utf-8")
    return manifest


def execute_stage(
    stage: StageId,
    ws: Workspace,
    run: RunConfig,
    gateway: Gateway,
    requirement: str,
    manifest: dict[str, Any],
    registry: Registry | None = None,
) -> dict[str, Any]:
    """Run one stage and update its manifest entry in place."""
    entry = _entry(manifest, stage)
    if not stage_enabled(stage, run.pipeline):
        entry["status"] = "skipped"
        return entry
    for earlier in StageId:
        if earlier.order >= stage.order:
            break
        e = _entry(manifest, earlier)
        if e["status"] not in ("completed", "skipped"):
            raise PipelineError(f"{stage.value} needs {earlier.value} to complete first")
    ctx = StageContext(ws, run, gateway, requirement, registry)
    before = gateway.transcript()
    started = time.perf_counter()
    try:
        with gateway.stage(stage.value, run.pipeline.tool_budget):
            _stage_runner(stage)(ctx)
        entry.update(status="completed")
        entry.pop("error", None)
    except TraceEvalError as exc:
        entry.update(status="failed", error=str(exc))
        if stage is StageId.CodeGen and not ws.exists("audit.json"):
            ws.write_text("audit.json", audit_run(str(exc), None).to_json(), stage)
    finally:
        new = gateway.transcript()[len(before):]
        completions = [e for e in new if e.kind == "completion"]
        entry.update(
            model_calls=sum(1 for e in completions if e.stage == stage.value),
            judge_calls=sum(1 for e in completions if e.stage != stage.value),
            doc_calls=sum(1 for e in new if e.kind == "docs"),
            input_tokens=sum(e.input_tokens for e in new),
            output_tokens=sum(e.output_tokens for e in new),
            format_retries=ctx.retries,
            notes=list(ctx.notes),
        )
        with open(ws.path(TRANSCRIPT), "a", encoding="utf-8") as fh:
            for e in new:
                fh.write(json.dumps(e.to_dict(), ensure_ascii=False) + "\n")
        timings = {}
        if ws.path(TIMINGS).exists():
            timings = json.loads(ws.path(TIMINGS).read_text(encoding="utf-8"))
        timings[stage.value] = round(time.perf_counter() - started, 6)
        ws.path(TIMINGS).write_text(_dumps(timings), encoding="utf-8")
        manifest["complete"] = _is_complete(manifest)
        ws.save_manifest(manifest)
    return entry


def run_pipeline(
    ws: Workspace | str | Path,
    run: RunConfig,
    requirement: str,
    gateway: Gateway | None = None,
    force: bool = False,
    stages: Sequence[StageId] | None = None,
) -> dict[str, Any]:
    """Run enabled stages in order; stop at the first failure.

    A workspace whose manifest already records the requested stages as done
    is left untouched unless ``force`` is set.
    """
    ws = ws if isinstance(ws, Workspace) else Workspace(Path(ws))
    if not requirement.strip():
        raise PipelineError("requirement text is empty")
    with ws.lock():
        manifest = _prepare(ws, run, requirement, force, stages)
        wanted = list(stages) if stages is not None else list(StageId)
        todo = [s for s in wanted if _entry(manifest, s)["status"] != "completed"]
        if not todo:
            return manifest
        gateway = gateway or run.build_gateway()
        registry = load_skills(run)
        for stage in sorted(todo, key=lambda s: s.order):
            entry = execute_stage(stage, ws, run, gateway, requirement, manifest, registry)
            if entry["status"] == "failed":
                break
        return manifest
