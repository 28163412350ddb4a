"""Regenerate tests/fixtures/agreement/alignment.json.

40 cases, five dimensions each. The judge matches the human majority on 39
overall winners and on 38/39/29/20/24 per-dimension labels (150 of 200).
"""

from __future__ import annotations

import json
import random
import sys
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "agreement" / "alignment.json"
LABELS = ["A", "B", "Tie"]
MATCHES = {"URF": 38, "MR": 39, "CQC": 29, "PQ": 20, "PCA": 24}
N = 40


def other(label: str, rng: random.Random) -> str:
    return rng.choice([x for x in LABELS if x != label])


def build(seed: int = 20251014) -> dict:
    rng = random.Random(seed)
    ids = [f"case_{i:02d}" for i in range(N)]
    human = {k: {"overall": rng.choice(["A", "A", "A", "Tie", "B"])} for k in ids}
    judge = {k: {"overall": human[k]["overall"]} for k in ids}
    judge[ids[7]]["overall"] = other(human[ids[7]]["overall"], rng)
    for dim, m in MATCHES.items():
        miss = set(rng.sample(ids, N - m))
        for k in ids:
            h = rng.choice(LABELS)
            human[k][dim] = h
            judge[k][dim] = other(h, rng) if k in miss else h
    return {"alignment": {"judge": judge, "human": human}}


def main() -> int:
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(build(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(OUT)
    return 0


if __name__ == "__main__":
    sys.exit(main())
