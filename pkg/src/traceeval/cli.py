"""Command-line entry point: ``traceeval <subcommand> ...``.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any

from . import TraceEvalError
from .agreement import compute_stats, load_stats_input, stats_markdown
from .audit import AuditVerdict, audit_run, load_verdict
from .config import PRESETS, RunConfig, load_config
from .meta_eval import compare_workspaces, load_pairs, tally_comparisons, tally_markdown, win_tie_rate
from .metrics import SuiteResult
from .pipeline import PROCESSED_DIR, TRANSCRIPT, Workspace, run_pipeline, run_trace_processing
from .stages import StageId

STAGE_COMMANDS = {
    "plan": StageId.Planning,
    "gen-tests": StageId.TestGen,
    "instrument": StageId.Instrumentation,
    "evaluate": StageId.CodeGen,
    "report": StageId.Reporting,
}


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="traceeval", description="Trace-grounded agent evaluation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def add(name: str, help: str, workspace: bool = True) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--workspace", type=Path, required=workspace, default=None)
        sp.add_argument("--config", type=Path)
        sp.add_argument("--json", action="store_true", help="machine-readable output")
        sp.add_argument("--force", action="store_true", help="redo completed work")
        return sp

    def pipeline_flags(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--mode", choices=sorted(PRESETS))
        sp.add_argument("--k-metrics", type=int, dest="k_metrics")
        sp.add_argument("--requirement", type=Path, help="requirement text file")
        sp.add_argument("--requirement-text", dest="requirement_text")

    sp = add("process-traces", "compact raw OTLP/JSON traces into processed traces")
    sp.add_argument("--traces", type=Path, help="raw trace directory")
    for name, stage in STAGE_COMMANDS.items():
        pipeline_flags(add(name, f"run the {stage.value} stage"))
    pipeline_flags(add("run-all", "run every enabled stage"))
    add("audit", "classify a run for Eval@1")
    sp = add("compare", "pairwise meta-evaluation of two workspaces")
    sp.add_argument("--a", type=Path, required=True, dest="ws_a")
    sp.add_argument("--b", type=Path, required=True, dest="ws_b")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--baseline")
    sp.add_argument("--check-positions", action="store_true")
    sp = add("tally", "win-tie table over comparison records", workspace=False)
    sp.add_argument("--pairs", type=Path, required=True)
    sp = add("stats", "agreement statistics", workspace=False)
    sp.add_argument("--input", type=Path, required=True)
    return p


def _run_config(args: argparse.Namespace) -> RunConfig:
    run = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    mode = getattr(args, "mode", None)
    k = getattr(args, "k_metrics", None)
    if mode or k is not None:
        overrides = {"metric_count_hint": k} if k is not None else {}
        base = mode or (run.pipeline.mode if run.pipeline.mode in PRESETS else None)
        if base is None:
            raise UsageError("--k-metrics needs --mode when the config defines a custom pipeline")
        run = run.with_mode(base, **overrides)
    return run


def _requirement(args: argparse.Namespace, run: RunConfig, ws: Workspace) -> str:
    if getattr(args, "requirement_text", None):
        return args.requirement_text
    path = getattr(args, "requirement", None) or run.requirement
    if path is not None:
        return Path(path).read_text(encoding="utf-8")
    if ws.exists("requirement.txt"):
        return ws.path("requirement.txt").read_text(encoding="utf-8")
    raise UsageError("no requirement: pass --requirement FILE or --requirement-text TEXT")


def _emit(args: argparse.Namespace, payload: dict[str, Any], human: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, ensure_ascii=False, sort_keys=True))
    else:
        print(human.rstrip("\n"))


def _manifest_summary(manifest: dict[str, Any]) -> str:
    lines = [f"mode: {manifest['mode']}"]
    for e in manifest["stages"]:
        extra = f" ({e['error']})" if e.get("error") else ""
        calls = f" calls={e['model_calls']}" if "model_calls" in e else ""
        lines.append(f"  {e['stage']:<16} {e['status']}{calls}{extra}")
    lines.append("complete" if manifest["complete"] else "incomplete")
    return "\n".join(lines)


def cmd_pipeline(args: argparse.Namespace) -> int:
    run = _run_config(args)
    ws = Workspace(args.workspace)
    requirement = _requirement(args, run, ws)
    stages = None if args.command == "run-all" else [STAGE_COMMANDS[args.command]]
    manifest = run_pipeline(ws, run, requirement, force=args.force, stages=stages)
    _emit(args, manifest, _manifest_summary(manifest))
    wanted = stages or list(StageId)
    failed = [e for e in manifest["stages"]
              if e["status"] == "failed" and StageId(e["stage"]) in wanted]
    return 1 if failed or (stages is None and not manifest["complete"]) else 0


def _record_in_manifest(ws: Workspace, stage: StageId) -> None:
    """Mark a standalone stage done, but only where the stage order allows it."""
    manifest = ws.load_manifest()
    if manifest is None:
        return
    entries = {e["stage"]: e for e in manifest["stages"]}
    earlier = [entries[s.value] for s in StageId if s.order < stage.order]
    if entries[stage.value]["status"] == "skipped" or any(
            e["status"] not in ("completed", "skipped") for e in earlier):
        return
    entries[stage.value].update(status="completed", notes=["ran via process-traces"])
    entries[stage.value].pop("error", None)
    manifest["complete"] = all(e["status"] in ("completed", "skipped") for e in manifest["stages"])
    ws.save_manifest(manifest)


def cmd_process_traces(args: argparse.Namespace) -> int:
    run = load_config(args.config) if args.config else RunConfig()
    raw = args.traces or run.raw_traces
    if raw is None:
        raise UsageError("process-traces needs --traces DIR or traces.raw_dir in the config")
    ws = Workspace(args.workspace)
    existing = sorted(ws.path(PROCESSED_DIR).glob("*.json")) if ws.exists(PROCESSED_DIR) else []
    if existing and not args.force:
        names = [p.name for p in existing]
        _emit(args, {"processed": names, "skipped": True},
              f"{len(names)} processed traces already present (use --force to redo)")
        return 0
    traces = run_trace_processing(ws, raw)
    _record_in_manifest(ws, StageId.TraceProcessing)
    names = sorted(p.name for p in ws.path(PROCESSED_DIR).glob("*.json"))
    _emit(args, {"processed": names, "skipped": False,
                 "traces": [t.to_dict() for t in traces]},
          f"processed {len(traces)} traces into {ws.path(PROCESSED_DIR)}")
    return 0


def cmd_audit(args: argparse.Namespace) -> int:
    ws = Workspace(args.workspace)
    results = ws.path("results.json")
    target = ws.path("audit.json")
    if results.exists():
        verdict = audit_run(None, SuiteResult.load(results))
        if args.force or not target.exists():
            target.write_text(verdict.to_json(), encoding="utf-8")
    elif target.exists():
        verdict = load_verdict(target)
    else:
        verdict = AuditVerdict.from_dict({"category": "ExecutionError",
                                          "evidence": "no results.json in workspace"})
    _emit(args, verdict.to_dict(), f"{verdict.category.value}: {verdict.evidence}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    run = _run_config(args)
    out = args.workspace / "comparison.json"
    args.workspace.mkdir(parents=True, exist_ok=True)
    if out.exists() and not args.force:
        record = json.loads(out.read_text(encoding="utf-8"))
    else:
        gateway = run.build_gateway()
        rec = compare_workspaces(args.ws_a, args.ws_b, gateway, args.seed,
                                 check_positions=args.check_positions)
        if args.baseline:
            rec.baseline = args.baseline
        out.write_text(rec.to_json(), encoding="utf-8")
        with open(args.workspace / TRANSCRIPT, "w", encoding="utf-8") as fh:
            for e in gateway.transcript():
                fh.write(json.dumps(e.to_dict(), ensure_ascii=False) + "\n")
        record = rec.to_dict()
    lines = [f"{j['dimension']}: {j['outcome']}" for j in record["judgments"]]
    lines.append(f"points A={record['points']['A']:.2f} B={record['points']['B']:.2f} "
                 f"winner={record['winner']}")
    _emit(args, record, "\n".join(lines))
    return 0


def cmd_tally(args: argparse.Namespace) -> int:
    table = tally_comparisons(load_pairs(args.pairs))
    payload = {
        baseline: {col: {"wins": t.wins, "ties": t.ties, "losses": t.losses,
                         "win_tie_rate": win_tie_rate(t)} for col, t in row.items()}
        for baseline, row in table.items()
    }
    _emit(args, payload, tally_markdown(table))
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    stats = compute_stats(load_stats_input(args.input))
    _emit(args, stats, stats_markdown(stats))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {
        "process-traces": cmd_process_traces,
        "run-all": cmd_pipeline,
        "audit": cmd_audit,
        "compare": cmd_compare,
        "tally": cmd_tally,
        "stats": cmd_stats,
        **{name: cmd_pipeline for name in STAGE_COMMANDS},
    }
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"traceeval: usage error: {exc}", file=sys.stderr)
        return 2
    except (TraceEvalError, OSError, ValueError, KeyError) as exc:
        print(f"traceeval: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
