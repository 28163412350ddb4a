"""Pairwise meta-evaluation of two evaluation workspaces.

Each active dimension gets an A / B / Tie verdict from a judge model; the
verdicts are combined with fixed weights into points for each side. Weights
are held as exact fractions so that points always sum to one and equal
totals are recognised exactly.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Sequence

from . import TraceEvalError
from .gateway import Gateway, GatewayError, ModelRequest
from .metrics import extract_json_object
from .numbers import percent
from .textbudget import truncate

logger = logging.getLogger(__name__)

DEFAULT_DIGEST_CAP = 12_000


class MetaEvalError(TraceEvalError):
    pass


class DimensionId(str, Enum):
    URF = "URF"
    MR = "MR"
    CQC = "CQC"
    PQ = "PQ"
    PCA = "PCA"

    @property
    def title(self) -> str:
        return DIMENSION_TITLES[self]


DIMENSION_TITLES = {
    DimensionId.URF: "User Requirement Fulfillment",
    DimensionId.MR: "Metric Relevance",
    DimensionId.CQC: "Code Quality & Complexity",
    DimensionId.PQ: "Plan Quality",
    DimensionId.PCA: "Plan-Code Alignment",
}

_FULL = {
    DimensionId.URF: Fraction(15, 100),
    DimensionId.MR: Fraction(30, 100),
    DimensionId.CQC: Fraction(25, 100),
    DimensionId.PQ: Fraction(15, 100),
    DimensionId.PCA: Fraction(15, 100),
}
_REDUCED = {
    DimensionId.URF: Fraction(25, 100),
    DimensionId.MR: Fraction(40, 100),
    DimensionId.CQC: Fraction(35, 100),
}


class Outcome(str, Enum):
    AWins = "A"
    BWins = "B"
    Tie = "Tie"

    def flipped(self) -> "Outcome":
        if self is Outcome.AWins:
            return Outcome.BWins
        if self is Outcome.BWins:
            return Outcome.AWins
        return self

    @classmethod
    def parse(cls, raw: Any) -> "Outcome":
        if isinstance(raw, str):
            key = raw.strip().lower().replace("_", " ")
            table = {"a": cls.AWins, "a wins": cls.AWins, "b": cls.BWins, "b wins": cls.BWins,
                     "tie": cls.Tie}
            if key in table:
                return table[key]
        raise ValueError(f"not an outcome: {raw!r}")


def exact_weights(both_have_plans: bool) -> dict[DimensionId, Fraction]:
    return dict(_FULL if both_have_plans else _REDUCED)


def active_weights(both_have_plans: bool) -> dict[DimensionId, float]:
    """Five-dimension weights when both sides have a plan, else the renormalised three."""
    return {d: float(w) for d, w in exact_weights(both_have_plans).items()}


@dataclass(frozen=True)
class DimensionJudgment:
    dimension: DimensionId
    outcome: Outcome
    evidence: str = ""

    def __post_init__(self) -> None:
        if self.outcome is not Outcome.Tie and not self.evidence.strip():
            raise MetaEvalError(f"{self.dimension.value}: a decided outcome needs evidence")

    def swapped(self) -> "DimensionJudgment":
        return DimensionJudgment(self.dimension, self.outcome.flipped(), self.evidence)

    def to_dict(self) -> dict[str, str]:
        return {"dimension": self.dimension.value, "outcome": self.outcome.value,
                "evidence": self.evidence}


@dataclass(frozen=True)
class ComparisonResult:
    judgments: tuple[DimensionJudgment, ...]
    points_a: float
    points_b: float
    winner: Outcome
    weights: tuple[tuple[DimensionId, float], ...] = ()

    def outcome_for(self, dim: DimensionId) -> Outcome | None:
        return next((j.outcome for j in self.judgments if j.dimension is dim), None)


def _weight_map(weights: dict[DimensionId, Any]) -> dict[DimensionId, Fraction]:
    # floats are mapped back to the exact two-decimal fractions they came from
    return {d: w if isinstance(w, Fraction) else Fraction(str(w)) for d, w in weights.items()}


def aggregate(
    judgments: Iterable[DimensionJudgment], weights: dict[DimensionId, Any]
) -> ComparisonResult:
    """Weighted points: full weight to the dimension winner, half each on a tie."""
    exact = _weight_map(weights)
    by_dim: dict[DimensionId, DimensionJudgment] = {}
    for j in judgments:
        if j.dimension in by_dim:
            raise MetaEvalError(f"duplicate judgment for {j.dimension.value}")
        if j.dimension not in exact:
            raise MetaEvalError(f"{j.dimension.value} is not an active dimension")
        by_dim[j.dimension] = j
    missing = [d.value for d in exact if d not in by_dim]
    if missing:
        raise MetaEvalError(f"missing judgments for {', '.join(missing)}")

    pa = pb = Fraction(0)
    for dim, w in exact.items():
        outcome = by_dim[dim].outcome
        if outcome is Outcome.AWins:
            pa += w
        elif outcome is Outcome.BWins:
            pb += w
        else:
            pa += w / 2
            pb += w / 2
    winner = Outcome.AWins if pa > pb else Outcome.BWins if pb > pa else Outcome.Tie
    return ComparisonResult(
        judgments=tuple(by_dim[d] for d in exact),
        points_a=float(pa),
        points_b=float(pb),
        winner=winner,
        weights=tuple((d, float(w)) for d, w in exact.items()),
    )


@dataclass(frozen=True)
class WinTieTally:
    wins: int = 0
    ties: int = 0
    losses: int = 0

    def __post_init__(self) -> None:
        if min(self.wins, self.ties, self.losses) < 0:
            raise ValueError("tally counts must be non-negative")

    @property
    def total(self) -> int:
        return self.wins + self.ties + self.losses

    def add(self, outcome: Outcome) -> "WinTieTally":
        if outcome is Outcome.AWins:
            return WinTieTally(self.wins + 1, self.ties, self.losses)
        if outcome is Outcome.BWins:
            return WinTieTally(self.wins, self.ties, self.losses + 1)
        return WinTieTally(self.wins, self.ties + 1, self.losses)

    def label(self) -> str:
        return f"{self.wins}W/{self.ties}T/{self.losses}L"


def win_tie_rate(tally: WinTieTally) -> float:
    """``(wins + ties / 2) / total * 100`` to one decimal."""
    if tally.total == 0:
        raise ValueError("win-tie rate of an empty tally")
    return percent(Fraction(2 * tally.wins + tally.ties, 2), tally.total)


# -- judging ----------------------------------------------------------------------

RUBRICS: dict[DimensionId, str] = {
    DimensionId.URF: """\
Question: which evaluation serves the user's explicit requirements better?
- A wins when A covers a requirement that B misses or treats only indirectly,
  or A answers the requirement with a tighter, more focused implementation.
- B wins symmetrically.
- Tie when both cover the requirements equally well, or when the requirement
  is generic (for example only "create an evaluation plan") and there is
  nothing explicit to compare.
A focused implementation beats an exhaustive one that adds unrequested checks.""",
    DimensionId.MR: """\
Question: whose metrics carry more signal and less noise? Signal is a metric
that measures what the evaluation goal needs; noise is a trivial, redundant
or distracting metric.
- A wins when A covers the essentials with fewer noisy metrics: more relevant
  metrics, less overlap, clearer names.
- B wins symmetrically.
- Tie when signal-to-noise, redundancy and clarity are comparable or the
  trade-offs cancel out.
A longer metric list is not better signal. Break remaining ties on name clarity.""",
    DimensionId.CQC: """\
Question: whose metric code is correct and simpler? Apply in priority order:
(1) metric logic correctness, (2) organisation, (3) clean implementation,
(4) readability.
- A wins when B has at least one metric-logic flaw and A has none; or, with
  equal correctness, A reaches the same functionality with fewer files and
  less code; or A has no unused imports or over-engineering while B does; or
  A's names are clearer.
- B wins symmetrically.
- Tie when both are correct with similar size, cleanliness and readability.""",
    DimensionId.PQ: """\
Question: whose plan is more complete, coherent and actionable for its
length? Apply in priority order: (1) plan completeness, (2) completeness of
definitions, (3) conciseness, (4) ease of understanding.
- A wins when A has goals, metrics and methodology while B lacks an
  essential part; or completeness is equal and A is at least 50 lines
  shorter; or A is clearly easier to read.
- B wins symmetrically.
- Tie when both have all components, complete definitions and similar length
  and readability.
A plan over 1000 lines must justify its length; one over 1500 lines should
lose to a shorter equivalent.""",
    DimensionId.PCA: """\
Question: whose implementation follows its own plan more faithfully? Apply
in priority order: (1) metric alignment, (2) implementation mismatches,
(3) missing planned features, (4) unplanned additions.
- A wins when every A metric matches its plan and B has at least one
  misaligned metric; or A has zero mismatches and B at least one; or A
  implements everything planned and B misses at least one item; or A adds
  nothing unplanned and B adds at least one thing.
- B wins symmetrically.
- Tie when both are fully aligned with no mismatches and at most one missing
  or unplanned item each.""",
}

ANTI_LENGTH_BIAS = """\
Length is not quality. Prefer the evaluation a practitioner would rather
maintain. Red flags: 20 or more metrics, code about twice the length the task
needs, plans beyond 1500 lines."""

META_SYSTEM = "You are a comparative meta-evaluator of agent evaluations. Answer with JSON only."
OUTCOME_REMINDER = (
    'Reply with exactly one JSON object: {"outcome": "A" | "B" | "Tie", '
    '"evidence": "<specific evidence from the artifacts>"}'
)


@dataclass(frozen=True)
class Artifacts:
    """What the judge sees of one side of a comparison."""

    label: str
    metric_suite: str
    results: str
    plan: str | None = None
    code: str | None = None
    requirement: str | None = None

    @property
    def has_plan(self) -> bool:
        return bool(self.plan and self.plan.strip())

    def digest(self, cap: int = DEFAULT_DIGEST_CAP, include_plan: bool = True) -> str:
        sections = []
        if include_plan and self.has_plan:
            sections.append(("Plan", self.plan))
        sections.append(("Metric suite", self.metric_suite))
        if self.code:
            sections.append(("Code", self.code))
        sections.append(("Results", self.results))
        share = max(cap // len(sections), 1)
        out = []
        for title, body in sections:
            n_lines = body.count("\n") + 1
            out.append(f"### {title} ({n_lines} lines)\n{truncate(body, share)}")
        return "\n\n".join(out)

    @classmethod
    def from_workspace(cls, root: str | Path, label: str | None = None) -> "Artifacts":
        root = Path(root)
        suite = root / "metric_suite.json"
        results = root / "results.json"
        if not suite.is_file() or not results.is_file():
            raise MetaEvalError(f"{root} lacks metric_suite.json or results.json")
        plan = root / "plan.md"
        script = root / "eval_script.py"
        req = root / "requirement.txt"
        return cls(
            label=label or root.name,
            metric_suite=suite.read_text(encoding="utf-8"),
            results=_results_digest(results.read_text(encoding="utf-8")),
            plan=plan.read_text(encoding="utf-8") if plan.is_file() else None,
            code=script.read_text(encoding="utf-8") if script.is_file() else None,
            requirement=req.read_text(encoding="utf-8") if req.is_file() else None,
        )


def _results_digest(text: str) -> str:
    """Aggregate block of results.json; per-cell lists are dropped."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        return text
    keep = {k: data[k] for k in ("n_records", "n_passed", "success_rate", "per_metric") if k in data}
    return json.dumps(keep, indent=2, sort_keys=True)


def dimension_prompt(
    first: Artifacts, second: Artifacts, dim: DimensionId, cap: int = DEFAULT_DIGEST_CAP,
    requirement: str | None = None,
) -> str:
    include_plan = dim in (DimensionId.PQ, DimensionId.PCA) or (first.has_plan and second.has_plan)
    parts = [
        f"## Dimension: {dim.title} ({dim.value})",
        RUBRICS[dim],
        ANTI_LENGTH_BIAS,
    ]
    req = requirement or first.requirement or second.requirement
    if req:
        parts.append(f"## User requirement\n{req.strip()}")
    parts.append(f"## Approach A\n{first.digest(cap, include_plan)}")
    parts.append(f"## Approach B\n{second.digest(cap, include_plan)}")
    parts.append(OUTCOME_REMINDER)
    return "\n\n".join(parts)


def _parse_outcome(text: str) -> tuple[Outcome, str] | None:
    obj = extract_json_object(text)
    if obj is None:
        return None
    try:
        outcome = Outcome.parse(obj.get("outcome"))
    except ValueError:
        return None
    evidence = str(obj.get("evidence") or "").strip()
    if outcome is not Outcome.Tie and not evidence:
        return None
    return outcome, evidence


def judge_dimension(
    a: Artifacts,
    b: Artifacts,
    dim: DimensionId,
    gateway: Gateway,
    swapped: bool = False,
    cap: int = DEFAULT_DIGEST_CAP,
    requirement: str | None = None,
) -> DimensionJudgment:
    """Judge one dimension; ``swapped`` presents B first and maps the answer back."""
    first, second = (b, a) if swapped else (a, b)
    messages = [("system", META_SYSTEM), ("user", dimension_prompt(first, second, dim, cap, requirement))]
    try:
        text = gateway.complete(ModelRequest.of(*messages, temperature=0.0)).text
        parsed = _parse_outcome(text)
        if parsed is None:
            messages += [("assistant", text), ("user", OUTCOME_REMINDER)]
            text = gateway.complete(ModelRequest.of(*messages, temperature=0.0)).text
            parsed = _parse_outcome(text)
    except GatewayError as exc:
        raise MetaEvalError(f"{dim.value}: judge call failed: {exc}") from exc
    if parsed is None:
        raise MetaEvalError(f"{dim.value}: unparseable judge outcome after retry")
    outcome, evidence = parsed
    if swapped:
        outcome = outcome.flipped()
    return DimensionJudgment(dim, outcome, evidence)


@dataclass(frozen=True)
class PositionCheck:
    dimension: DimensionId
    as_presented: Outcome
    reversed: Outcome

    @property
    def consistent(self) -> bool:
        return self.as_presented is self.reversed


def position_check(
    a: Artifacts, b: Artifacts, dim: DimensionId, gateway: Gateway, cap: int = DEFAULT_DIGEST_CAP,
    requirement: str | None = None,
) -> PositionCheck:
    """Judge under both presentations; both outcomes are in true A/B terms."""
    straight = judge_dimension(a, b, dim, gateway, False, cap, requirement)
    flipped = judge_dimension(a, b, dim, gateway, True, cap, requirement)
    check = PositionCheck(dim, straight.outcome, flipped.outcome)
    if not check.consistent:
        logger.warning("position-dependent verdict on %s: %s vs %s", dim.value,
                       straight.outcome.value, flipped.outcome.value)
    return check


@dataclass
class ComparisonRecord:
    pair_id: str
    seed: int
    result: ComparisonResult
    presentation: list[dict[str, Any]]
    plan_asymmetry: bool = False
    baseline: str | None = None
    position_checks: list[PositionCheck] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "pair_id": self.pair_id,
            "seed": self.seed,
            "active_weights": {dim.value: w for dim, w in self.result.weights},
            "judgments": [j.to_dict() for j in self.result.judgments],
            "points": {"A": self.result.points_a, "B": self.result.points_b},
            "winner": self.result.winner.value,
            "presentation": self.presentation,
            "plan_asymmetry": self.plan_asymmetry,
        }
        if self.baseline is not None:
            d["baseline"] = self.baseline
        if self.position_checks:
            d["position_checks"] = [
                {"dimension": c.dimension.value, "as_presented": c.as_presented.value,
                 "reversed": c.reversed.value, "consistent": c.consistent}
                for c in self.position_checks
            ]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"


def compare_artifacts(
    a: Artifacts,
    b: Artifacts,
    gateway: Gateway,
    seed: int,
    pair_id: str | None = None,
    cap: int = DEFAULT_DIGEST_CAP,
    check_positions: bool = False,
    requirement: str | None = None,
) -> ComparisonRecord:
    both = a.has_plan and b.has_plan
    asym = a.has_plan != b.has_plan
    if asym:
        logger.info("only one side has a plan; using the three-dimension weights")
    weights = exact_weights(both)
    rng = random.Random(seed)
    judgments, presentation, checks = [], [], []
    for dim in weights:
        swapped = rng.random() < 0.5
        presentation.append({"dimension": dim.value, "order": ["B", "A"] if swapped else ["A", "B"]})
        judgments.append(judge_dimension(a, b, dim, gateway, swapped, cap, requirement))
        if check_positions:
            checks.append(position_check(a, b, dim, gateway, cap, requirement))
    result = aggregate(judgments, weights)
    return ComparisonRecord(
        pair_id=pair_id or f"{a.label}__vs__{b.label}",
        seed=seed,
        result=result,
        presentation=presentation,
        plan_asymmetry=asym,
        position_checks=checks,
    )


def compare_workspaces(
    ws_a: str | Path,
    ws_b: str | Path,
    gateway: Gateway,
    seed: int,
    out_path: str | Path | None = None,
    **kw: Any,
) -> ComparisonRecord:
    record = compare_artifacts(
        Artifacts.from_workspace(ws_a), Artifacts.from_workspace(ws_b), gateway, seed, **kw
    )
    if out_path is not None:
        Path(out_path).write_text(record.to_json(), encoding="utf-8")
    return record


# -- tallies ------------------------------------------------------------------------

OVERALL = "Overall"
TALLY_COLUMNS = [d.value for d in DimensionId] + [OVERALL]


def tally_comparisons(comparisons: Sequence[dict[str, Any]]) -> dict[str, dict[str, WinTieTally]]:
    """Per-baseline W/T/L counts from comparison records; side A is the system under test."""
    table: dict[str, dict[str, WinTieTally]] = {}
    for comp in comparisons:
        row = table.setdefault(comp.get("baseline") or "all", {})
        for j in comp.get("judgments", []):
            col = j["dimension"]
            row[col] = row.get(col, WinTieTally()).add(Outcome.parse(j["outcome"]))
        row[OVERALL] = row.get(OVERALL, WinTieTally()).add(Outcome.parse(comp["winner"]))
    return table


def tally_markdown(table: dict[str, dict[str, WinTieTally]]) -> str:
    lines = ["| Comparison | " + " | ".join(TALLY_COLUMNS) + " |",
             "|---|" + "---|" * len(TALLY_COLUMNS)]
    for baseline in sorted(table):
        row = table[baseline]
        cells = []
        for col in TALLY_COLUMNS:
            t = row.get(col)
            cells.append("-" if t is None or t.total == 0 else f"{win_tie_rate(t):.1f} ({t.label()})")
        lines.append(f"| vs {baseline} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def load_pairs(path: str | Path) -> list[dict[str, Any]]:
    """Read a pairs manifest.

    ``{"comparisons": [...]}`` holds comparison records inline or as
    ``{"path": "...", "baseline": ...}`` references relative to the manifest.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    entries = data.get("comparisons", data) if isinstance(data, dict) else data
    out = []
    for entry in entries:
        if "path" in entry:
            with open(path.parent / entry["path"], encoding="utf-8") as fh:
                comp = json.load(fh)
            if entry.get("baseline"):
                comp["baseline"] = entry["baseline"]
            out.append(comp)
        else:
            out.append(entry)
    return out
