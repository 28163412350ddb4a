"""Regenerate tests/fixtures/audit/<category>/results.json."""

from __future__ import annotations

import sys
from pathlib import Path

from traceeval.metrics import JUDGE, RULE, MetricResult, MetricSpec, SuiteResult
from traceeval.records import EvalRecord
from traceeval.rules import parse_rule

ROOT = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "audit"


def suite(scores: dict[str, list[float]], provenance="real-trace", outputs=None, gold=False) -> SuiteResult:
    n = len(next(iter(scores.values())))
    outputs = outputs or [f"answer {i}" for i in range(n)]
    records = [EvalRecord(f"case_{i:03d}", f"query {i}", outputs[i], provenance) for i in range(n)]
    specs = []
    for j, name in enumerate(scores):
        if j == 0:
            specs.append(MetricSpec(name, JUDGE, criteria=f"{name} criteria", reference_is_output=gold))
        else:
            specs.append(MetricSpec(name, RULE, rule=parse_rule({"op": "output_nonempty"})))
    results = [
        MetricResult(name, rec.test_id, vals[i], vals[i] >= 0.7, f"{name}={vals[i]}")
        for i, rec in enumerate(records) for name, vals in scores.items()
    ]
    return SuiteResult.aggregate(specs, records, results)


CASES = {
    "all_zero": suite({"Accuracy": [0.0] * 4, "Coverage": [0.0] * 4, "Format": [0.0] * 4}),
    "synthetic": suite({"Accuracy": [0.2, 0.7, 1.0, 0.5]}, provenance="synthetic"),
    "predicted_as_gold": suite({"Accuracy": [0.2, 0.7, 1.0, 0.5]}, gold=True),
    "empty_outputs": suite({"Accuracy": [0.2, 0.7, 1.0, 0.5]}, outputs=["", "", "", "x"]),
    "varied_ok": suite({"Accuracy": [0.2, 0.7, 1.0], "Present": [1.0, 1.0, 0.0]}),
}


def main() -> int:
    for name, result in CASES.items():
        d = ROOT / name
        d.mkdir(parents=True, exist_ok=True)
        (d / "results.json").write_text(result.to_json(), encoding="utf-8")
        print(d / "results.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
