"""Run every pipeline mode over the fixture agents and compare against ours.

Each agent directory needs a config.yaml (see tests/fixtures/agents). For
every (agent, mode) the full pipeline runs into <out>/<agent>/<mode>; then
ours is compared with each baseline using the judge configured by
--judge-config, and the per-baseline win-tie table and Eval@1 per mode are
printed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from traceeval.audit import eval_at_1, load_verdict
from traceeval.config import load_config
from traceeval.meta_eval import compare_workspaces, tally_comparisons, tally_markdown
from traceeval.numbers import fmt_pct
from traceeval.pipeline import Workspace, run_pipeline

ROOT = Path(__file__).resolve().parents[1]
BASELINES = ["b1", "b2", "b3", "b4"]


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--agents", type=Path, nargs="+",
                    default=sorted((ROOT / "tests" / "fixtures" / "agents").iterdir()))
    ap.add_argument("--out", type=Path, default=ROOT / "runs" / "ablation")
    ap.add_argument("--judge-config", type=Path, default=ROOT / "tests" / "fixtures" / "meta" / "compare.yaml")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--force", action="store_true")
    args = ap.parse_args(argv)

    judge = load_config(args.judge_config)
    verdicts: dict[str, list] = {m: [] for m in BASELINES + ["ours"]}
    comparisons = []
    for agent in args.agents:
        base = load_config(agent / "config.yaml")
        requirement = (base.requirement.read_text(encoding="utf-8") if base.requirement
                       else "Create an evaluation plan.")
        for mode in BASELINES + ["ours"]:
            ws = Workspace(args.out / agent.name / mode)
            manifest = run_pipeline(ws, base.with_mode(mode), requirement, force=args.force)
            audit = ws.path("audit.json")
            verdicts[mode].append(load_verdict(audit) if audit.exists() else False)
            calls = sum(e.get("model_calls", 0) + e.get("judge_calls", 0) for e in manifest["stages"])
            status = "complete" if manifest["complete"] else "incomplete"
            print(f"{agent.name:<16} {mode:<5} {status:<10} calls={calls}")
        for mode in BASELINES:
            rec = compare_workspaces(args.out / agent.name / "ours", args.out / agent.name / mode,
                                     judge.build_gateway(), args.seed)
            d = rec.to_dict()
            d["baseline"] = mode.upper()
            comparisons.append(d)

    print("\nEval@1 by mode")
    for mode, vs in verdicts.items():
        print(f"  {mode:<5} {fmt_pct(eval_at_1(vs))}%")
    print("\nWin-tie rate of ours against each baseline")
    print(tally_markdown(tally_comparisons(comparisons)))
    (args.out / "comparisons.json").write_text(json.dumps({"comparisons": comparisons}, indent=1),
                                              encoding="utf-8")
    return 0


if __name__ == "__main__":
    sys.exit(main())
