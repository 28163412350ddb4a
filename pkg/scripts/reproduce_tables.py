"""Recompute the published win-tie and Eval@1 cells from their raw counts.

Reads tests/fixtures/published/tables.json and prints one row per cell with
the printed value, the recomputed value and whether they agree. Exit status
is 1 if any cell disagrees.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from traceeval.audit import eval_at_1
from traceeval.meta_eval import WinTieTally, win_tie_rate
from traceeval.numbers import fmt_pct

DEFAULT = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "published" / "tables.json"


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tables", type=Path, default=DEFAULT)
    args = ap.parse_args(argv)
    tables = json.loads(args.tables.read_text(encoding="utf-8"))

    bad = 0
    print(f"{'backbone':<8} {'baseline':<8} {'column':<8} {'W/T/L':<11} {'printed':>7} {'computed':>8}")
    for cell in tables["win_tie"]:
        t = WinTieTally(cell["wins"], cell["ties"], cell["losses"])
        got = fmt_pct(win_tie_rate(t))
        flag = "" if got == cell["printed"] else "  MISMATCH"
        bad += bool(flag)
        print(f"{cell['backbone']:<8} {cell['baseline']:<8} {cell['column']:<8} {t.label():<11} "
              f"{cell['printed']:>7} {got:>8}{flag}")
    print()
    print(f"{'backbone':<8} {'approach':<8} {'n/N':<7} {'printed':>7} {'computed':>8}")
    for cell in tables["eval_at_1"]:
        n, total = cell["successes"], cell["runs"]
        got = fmt_pct(eval_at_1([True] * n + [False] * (total - n)))
        flag = "" if got == cell["printed"] else "  MISMATCH"
        bad += bool(flag)
        print(f"{cell['backbone']:<8} {cell['approach']:<8} {f'{n}/{total}':<7} "
              f"{cell['printed']:>7} {got:>8}{flag}")
    cells = len(tables["win_tie"]) + len(tables["eval_at_1"])
    print(f"\n{cells - bad}/{cells} cells reproduced")
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
