"""Agreement and alignment statistics for validating meta-evaluators."""

from __future__ import annotations

import csv
import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Hashable, Mapping, Sequence

from . import TraceEvalError
from .numbers import fmt_pct, percent

OVERALL = "overall"


class AgreementError(TraceEvalError):
    pass


def _check_matrix(ratings: Sequence[Sequence[Hashable]]) -> int:
    if not ratings:
        raise AgreementError("ratings matrix needs at least one item")
    n = len(ratings[0])
    if n < 2:
        raise AgreementError("ratings matrix needs at least two raters")
    for i, row in enumerate(ratings):
        if len(row) != n:
            raise AgreementError(f"item {i} has {len(row)} ratings, expected {n}")
        if any(v is None or v == "" for v in row):
            raise AgreementError(f"item {i} has an unlabeled cell")
    return n


def fleiss_kappa(ratings: Sequence[Sequence[Hashable]]) -> float:
    """Fleiss' kappa for an items x raters label matrix."""
    n = _check_matrix(ratings)
    if all(len(set(row)) == 1 for row in ratings):
        return 1.0
    n_items = len(ratings)
    totals: Counter = Counter()
    p_items = []
    for row in ratings:
        counts = Counter(row)
        totals.update(counts)
        p_items.append((sum(c * c for c in counts.values()) - n) / (n * (n - 1)))
    p_bar = math.fsum(p_items) / n_items
    p_e = math.fsum((c / (n_items * n)) ** 2 for c in totals.values())
    if 1.0 - p_e == 0.0:
        raise AgreementError("Fleiss' kappa undefined: chance agreement is 1")
    return (p_bar - p_e) / (1.0 - p_e)


def gwet_ac1(
    rater_a: Sequence[Hashable], rater_b: Sequence[Hashable], labels: Sequence[Hashable] | None = None
) -> float:
    """Gwet's AC1 for two raters; chance term ``sum pi(1-pi) / (L-1)``.

    ``labels`` fixes the label alphabet; by default it is the set of labels
    either rater used.
    """
    if len(rater_a) != len(rater_b):
        raise AgreementError("raters labeled different numbers of items")
    _check_matrix(list(zip(rater_a, rater_b)))
    n = len(rater_a)
    if all(a == b for a, b in zip(rater_a, rater_b)):
        return 1.0
    alphabet = list(dict.fromkeys(labels)) if labels is not None else sorted(
        set(rater_a) | set(rater_b), key=repr)
    unknown = (set(rater_a) | set(rater_b)) - set(alphabet)
    if unknown:
        raise AgreementError(f"labels outside the alphabet: {sorted(map(repr, unknown))}")
    if len(alphabet) < 2:
        raise AgreementError("AC1 needs at least two labels")
    p_a = sum(a == b for a, b in zip(rater_a, rater_b)) / n
    counts = Counter(rater_a) + Counter(rater_b)
    pis = [counts[lab] / (2 * n) for lab in alphabet]
    p_e = math.fsum(p * (1 - p) for p in pis) / (len(alphabet) - 1)
    if 1.0 - p_e == 0.0:
        raise AgreementError("AC1 undefined: chance agreement is 1")
    return (p_a - p_e) / (1.0 - p_e)


def average_ranks(values: Sequence[float]) -> list[float]:
    """1-based ranks; tied values share the mean of the ranks they span."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        rank = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = rank
        i = j + 1
    return ranks


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> float:
    if len(x) != len(y):
        raise AgreementError("spearman_rho needs equal-length inputs")
    if len(x) < 2:
        raise AgreementError("spearman_rho needs at least two observations")
    rx, ry = average_ranks(x), average_ranks(y)
    mx, my = math.fsum(rx) / len(rx), math.fsum(ry) / len(ry)
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(rx, ry))
    sxx = math.fsum((a - mx) ** 2 for a in rx)
    syy = math.fsum((b - my) ** 2 for b in ry)
    if sxx == 0.0 or syy == 0.0:
        raise AgreementError("spearman_rho undefined: zero rank variance")
    rho = sxy / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, rho))


@dataclass(frozen=True)
class RunAgreement:
    k_way: float
    pairwise_avg: float
    n_cases: int
    n_runs: int

    def to_dict(self) -> dict[str, Any]:
        return {"k_way": self.k_way, "pairwise_avg": self.pairwise_avg,
                "n_cases": self.n_cases, "n_runs": self.n_runs}


def run_agreement(runs: Sequence[Sequence[Hashable]]) -> RunAgreement:
    """Share of cases on which all runs agree, and the mean pairwise match share."""
    if len(runs) < 2:
        raise AgreementError("run_agreement needs at least two runs")
    n = len(runs[0])
    if n == 0:
        raise AgreementError("runs are empty")
    if any(len(r) != n for r in runs):
        raise AgreementError("runs have different lengths")
    unanimous = sum(1 for case in zip(*runs) if len(set(case)) == 1)
    pairs = list(itertools.combinations(range(len(runs)), 2))
    matches = sum(sum(a == b for a, b in zip(runs[i], runs[j])) for i, j in pairs)
    return RunAgreement(percent(unanimous, n), percent(matches, n * len(pairs)), n, len(runs))


def _align(judge: Mapping[str, Any], human: Mapping[str, Any]) -> list[str]:
    if set(judge) != set(human):
        only_j = sorted(set(judge) - set(human))
        only_h = sorted(set(human) - set(judge))
        raise AgreementError(f"case ids differ (judge only: {only_j}, human only: {only_h})")
    if not judge:
        raise AgreementError("no cases to align")
    return sorted(judge)


def macro_f1(truth: Sequence[Hashable], pred: Sequence[Hashable]) -> float:
    """Unweighted mean F1 over every label seen in either sequence."""
    labels = set(truth) | set(pred)
    scores = []
    for lab in labels:
        tp = sum(1 for t, p in zip(truth, pred) if t == lab and p == lab)
        fp = sum(1 for t, p in zip(truth, pred) if t != lab and p == lab)
        fn = sum(1 for t, p in zip(truth, pred) if t == lab and p != lab)
        scores.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    return math.fsum(scores) / len(scores)


@dataclass(frozen=True)
class MatchCount:
    matches: int
    total: int

    @property
    def pct(self) -> float:
        return percent(self.matches, self.total)

    def to_dict(self) -> dict[str, Any]:
        return {"matches": self.matches, "total": self.total, "pct": self.pct}


@dataclass(frozen=True)
class AlignmentReport:
    accuracy: MatchCount
    macro_f1: float
    per_dimension: dict[str, MatchCount] = field(default_factory=dict)
    dimensions_pooled: MatchCount | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "accuracy": self.accuracy.to_dict(),
            "macro_f1": self.macro_f1,
            "per_dimension": {k: v.to_dict() for k, v in self.per_dimension.items()},
            "dimensions_pooled": self.dimensions_pooled.to_dict() if self.dimensions_pooled else None,
        }

    def to_markdown(self) -> str:
        rows = [("Overall winner match", self.accuracy)]
        if self.dimensions_pooled is not None:
            rows.append(("Per-dimension match", self.dimensions_pooled))
        rows += [(f"  {k}", v) for k, v in self.per_dimension.items()]
        lines = ["| Measure | Value |", "|---|---|"]
        lines += [f"| {name} | {fmt_pct(m.pct)}% ({m.matches}/{m.total}) |" for name, m in rows]
        lines.append(f"| Macro-F1 | {self.macro_f1:.3f} |")
        return "\n".join(lines) + "\n"


def _outcomes(entry: Any) -> dict[str, Any]:
    return dict(entry) if isinstance(entry, Mapping) else {OVERALL: entry}


def alignment_report(judge: Mapping[str, Any], human: Mapping[str, Any]) -> AlignmentReport:
    """Compare judge outcomes with human majority labels per case.

    Each value is either a bare overall label or a mapping with an
    ``overall`` key plus optional per-dimension labels.
    """
    ids = _align(judge, human)
    j = {k: _outcomes(judge[k]) for k in ids}
    h = {k: _outcomes(human[k]) for k in ids}
    for k in ids:
        if OVERALL not in j[k] or OVERALL not in h[k]:
            raise AgreementError(f"case {k} lacks an overall outcome")
    truth = [h[k][OVERALL] for k in ids]
    pred = [j[k][OVERALL] for k in ids]
    accuracy = MatchCount(sum(t == p for t, p in zip(truth, pred)), len(ids))

    dims: dict[str, list[int]] = {}
    for k in ids:
        for dim in h[k]:
            if dim == OVERALL or dim not in j[k]:
                continue
            cell = dims.setdefault(dim, [0, 0])
            cell[0] += j[k][dim] == h[k][dim]
            cell[1] += 1
    per_dim = {d: MatchCount(m, t) for d, (m, t) in dims.items()}
    pooled = None
    if per_dim:
        pooled = MatchCount(sum(m.matches for m in per_dim.values()),
                            sum(m.total for m in per_dim.values()))
    return AlignmentReport(accuracy, macro_f1(truth, pred), per_dim, pooled)


# -- IO -----------------------------------------------------------------------------


def read_ratings_csv(path: str | Path) -> list[list[str]]:
    """Items x raters matrix from CSV; a header row and an ``item`` id column are optional."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows and rows[0] and rows[0][0].strip().lower() in ("item", "id", "case", "case_id"):
        rows = [r[1:] for r in rows[1:]]
    return [[c.strip() for c in r] for r in rows]


def compute_stats(data: Mapping[str, Any]) -> dict[str, Any]:
    """Evaluate every statistic whose input block is present.

    Recognised keys: ``ratings`` (items x raters), ``pair`` ({a, b, labels?}),
    ``runs`` (list of runs), ``spearman`` ({x, y}), ``alignment`` ({judge, human}).
    """
    out: dict[str, Any] = {}
    if "ratings" in data:
        out["fleiss_kappa"] = fleiss_kappa(data["ratings"])
    if "pair" in data:
        pair = data["pair"]
        out["gwet_ac1"] = gwet_ac1(pair["a"], pair["b"], pair.get("labels"))
    if "runs" in data:
        out["run_agreement"] = run_agreement(data["runs"]).to_dict()
    if "spearman" in data:
        out["spearman_rho"] = spearman_rho(data["spearman"]["x"], data["spearman"]["y"])
    if "alignment" in data:
        out["alignment"] = alignment_report(data["alignment"]["judge"], data["alignment"]["human"]).to_dict()
    if not out:
        raise AgreementError("no recognised statistics input")
    return out


def load_stats_input(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return {"ratings": read_ratings_csv(path)}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def stats_markdown(stats: Mapping[str, Any]) -> str:
    lines = ["| Statistic | Value |", "|---|---|"]
    if "fleiss_kappa" in stats:
        lines.append(f"| Fleiss' kappa | {stats['fleiss_kappa']:.3f} |")
    if "gwet_ac1" in stats:
        lines.append(f"| Gwet's AC1 | {stats['gwet_ac1']:.3f} |")
    if "spearman_rho" in stats:
        lines.append(f"| Spearman rho | {stats['spearman_rho']:.3f} |")
    if "run_agreement" in stats:
        ra = stats["run_agreement"]
        lines.append(f"| All-run agreement | {fmt_pct(ra['k_way'])}% |")
        lines.append(f"| Mean pairwise agreement | {fmt_pct(ra['pairwise_avg'])}% |")
    if "alignment" in stats:
        al = stats["alignment"]
        acc = al["accuracy"]
        lines.append(f"| Overall winner match | {fmt_pct(acc['pct'])}% ({acc['matches']}/{acc['total']}) |")
        if al.get("dimensions_pooled"):
            dp = al["dimensions_pooled"]
            lines.append(f"| Per-dimension match | {fmt_pct(dp['pct'])}% ({dp['matches']}/{dp['total']}) |")
        lines.append(f"| Macro-F1 | {al['macro_f1']:.3f} |")
    return "\n".join(lines) + "\n"
