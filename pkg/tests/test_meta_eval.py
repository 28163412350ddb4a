import itertools
import json
import random
from decimal import Decimal
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from traceeval.meta_eval import (
    ANTI_LENGTH_BIAS,
    OVERALL,
    RUBRICS,
    Artifacts,
    DimensionId as D,
    DimensionJudgment,
    MetaEvalError,
    Outcome,
    WinTieTally,
    active_weights,
    aggregate,
    compare_artifacts,
    compare_workspaces,
    dimension_prompt,
    exact_weights,
    judge_dimension,
    load_pairs,
    position_check,
    tally_comparisons,
    tally_markdown,
    win_tie_rate,
)
from traceeval.textbudget import truncate

from conftest import function_gateway, last_user

FULL = {D.URF: "0.15", D.MR: "0.30", D.CQC: "0.25", D.PQ: "0.15", D.PCA: "0.15"}
REDUCED = {D.URF: "0.25", D.MR: "0.40", D.CQC: "0.35"}

A_SIDE = Artifacts("a", '{"metrics": ["MARK-A"]}', '{"success_rate": 1}', plan="# Plan A")
B_SIDE = Artifacts("b", '{"metrics": ["MARK-B"]}', '{"success_rate": 0}', plan="# Plan B")


def j(dim, outcome):
    return DimensionJudgment(dim, outcome, "" if outcome is Outcome.Tie else "because")


def oracle_points(outcomes, table):
    """Decimal hand sum: full weight to the winner, half each on a tie."""
    pa = pb = Decimal(0)
    for dim, o in outcomes.items():
        w = Decimal(table[dim])
        if o is Outcome.AWins:
            pa += w
        elif o is Outcome.BWins:
            pb += w
        else:
            pa += w / 2
            pb += w / 2
    return pa, pb


def sides(prompt):
    first = prompt.split("## Approach A\n", 1)[1].split("## Approach B\n", 1)[0]
    return first


def marker_judge(req):
    """Order-insensitive: the side showing MARK-A always wins."""
    first = sides(last_user(req))
    return json.dumps({"outcome": "A" if "MARK-A" in first else "B", "evidence": "MARK-A side is better"})


def first_slot_judge(req):
    return json.dumps({"outcome": "A", "evidence": "first listed"})


# -- weights -----------------------------------------------------------------------


def test_active_weights_full():
    assert active_weights(True) == {d: float(w) for d, w in FULL.items()}


def test_active_weights_reduced():
    assert active_weights(False) == {D.URF: 0.25, D.MR: 0.40, D.CQC: 0.35}


@pytest.mark.parametrize("both", [True, False])
def test_weights_sum_to_one(both):
    assert sum(exact_weights(both).values()) == 1
    assert sum(Fraction(str(w)) for w in active_weights(both).values()) == 1


def test_dimension_titles():
    assert D.MR.title == "Metric Relevance" and D.PCA.title == "Plan-Code Alignment"


# -- aggregation -------------------------------------------------------------------


def test_unanimous_a():
    r = aggregate([j(d, Outcome.AWins) for d in D], active_weights(True))
    assert (r.points_a, r.points_b, r.winner) == (1.0, 0.0, Outcome.AWins)


def test_all_ties():
    r = aggregate([j(d, Outcome.Tie) for d in D], active_weights(True))
    assert (r.points_a, r.points_b, r.winner) == (0.5, 0.5, Outcome.Tie)


def test_mixed_hand_sum():
    outcomes = {D.MR: Outcome.AWins, D.CQC: Outcome.AWins, D.URF: Outcome.BWins,
                D.PQ: Outcome.BWins, D.PCA: Outcome.BWins}
    r = aggregate([j(d, o) for d, o in outcomes.items()], active_weights(True))
    assert r.points_a == pytest.approx(0.55, abs=1e-12) and r.points_b == pytest.approx(0.45, abs=1e-12)
    assert r.winner is Outcome.AWins


def test_exact_tie_on_points_is_tie():
    # URF+PQ (0.30) vs MR (0.30), rest tied
    outcomes = {D.URF: Outcome.AWins, D.PQ: Outcome.AWins, D.MR: Outcome.BWins,
                D.CQC: Outcome.Tie, D.PCA: Outcome.Tie}
    r = aggregate([j(d, o) for d, o in outcomes.items()], active_weights(True))
    assert r.points_a == r.points_b and r.winner is Outcome.Tie


@pytest.mark.parametrize("judgments", [
    [j(d, Outcome.Tie) for d in (D.URF, D.MR)],
    [j(d, Outcome.Tie) for d in (D.URF, D.MR, D.CQC, D.CQC)],
    [j(d, Outcome.Tie) for d in D],
])
def test_aggregate_rejects_bad_dimension_sets(judgments):
    with pytest.raises(MetaEvalError):
        aggregate(judgments, active_weights(False))


def test_evidence_required_for_decisions():
    with pytest.raises(MetaEvalError):
        DimensionJudgment(D.MR, Outcome.AWins, " ")
    assert DimensionJudgment(D.MR, Outcome.Tie).evidence == ""


@pytest.mark.parametrize("table", [FULL, REDUCED], ids=["full", "reduced"])
def test_every_outcome_combination_matches_oracle(table):
    weights = {d: float(w) for d, w in table.items()}
    for combo in itertools.product(list(Outcome), repeat=len(table)):
        outcomes = dict(zip(table, combo))
        r = aggregate([j(d, o) for d, o in outcomes.items()], weights)
        pa, pb = oracle_points(outcomes, table)
        assert r.points_a == float(pa) and r.points_b == float(pb)
        assert r.winner is (Outcome.AWins if pa > pb else Outcome.BWins if pb > pa else Outcome.Tie)


outcome_st = st.sampled_from(list(Outcome))


@given(st.booleans(), st.lists(outcome_st, min_size=5, max_size=5), st.randoms())
def test_aggregate_properties(both, outcomes, rnd):
    weights = active_weights(both)
    js = [j(d, o) for d, o in zip(weights, outcomes)]
    r = aggregate(js, weights)
    assert abs(r.points_a + r.points_b - 1.0) <= 1e-12
    shuffled = list(js)
    rnd.shuffle(shuffled)
    assert aggregate(shuffled, weights) == r
    flipped = aggregate([x.swapped() for x in js], weights)
    assert (flipped.points_a, flipped.points_b) == (r.points_b, r.points_a)
    assert flipped.winner is r.winner.flipped()


# -- win-tie rate -----------------------------------------------------------------------


@pytest.mark.parametrize("w,t,l,expected", [
    (38, 1, 1, "96.2"), (40, 0, 0, "100.0"), (24, 16, 0, "80.0"), (0, 0, 40, "0.0"),
    (36, 2, 2, "92.5"), (29, 10, 1, "85.0"),
])
def test_win_tie_rate_examples(w, t, l, expected):
    assert f"{win_tie_rate(WinTieTally(w, t, l)):.1f}" == expected


def test_win_tie_rate_empty():
    with pytest.raises(ValueError):
        win_tie_rate(WinTieTally())


def test_tally_add_and_label():
    t = WinTieTally()
    for o in [Outcome.AWins] * 3 + [Outcome.Tie, Outcome.BWins]:
        t = t.add(o)
    assert t.label() == "3W/1T/1L" and t.total == 5


@given(st.integers(0, 60), st.integers(0, 60), st.integers(0, 60))
def test_win_tie_rate_complement(w, t, l):
    if w + t + l == 0:
        return
    a, b = win_tie_rate(WinTieTally(w, t, l)), win_tie_rate(WinTieTally(l, t, w))
    assert round(a * 10) + round(b * 10) == 1000


# -- judging ------------------------------------------------------------------------------


def test_prompt_has_rubric_and_anti_length_clause():
    p = dimension_prompt(A_SIDE, B_SIDE, D.MR)
    assert p.startswith("## Dimension: Metric Relevance (MR)")
    assert RUBRICS[D.MR] in p and ANTI_LENGTH_BIAS in p
    assert p.index("MARK-A") < p.index("MARK-B")


def test_plan_numeric_heuristic_in_rubric():
    assert "1000" in RUBRICS[D.PQ]


def test_plan_hidden_when_one_side_lacks_it():
    no_plan = Artifacts("c", "{}", "{}")
    assert "# Plan A" not in dimension_prompt(A_SIDE, no_plan, D.MR)
    assert "# Plan A" in dimension_prompt(A_SIDE, B_SIDE, D.MR)


def test_judge_protocol_a_wins():
    gw, _ = function_gateway(lambda r: '{"outcome": "A", "evidence": "fewer redundant metrics"}')
    jd = judge_dimension(A_SIDE, B_SIDE, D.MR, gw)
    assert jd.outcome is Outcome.AWins and jd.evidence == "fewer redundant metrics"


def test_symmetric_mock_on_identical_sides_ties():
    def symmetric(req):
        p = last_user(req)
        a, b = p.split("## Approach A\n")[1].split("## Approach B\n")
        b = b.split("Reply with")[0]
        return '{"outcome": "Tie"}' if a.strip() == b.strip() else '{"outcome": "A", "evidence": "x"}'

    gw, _ = function_gateway(symmetric)
    assert judge_dimension(A_SIDE, A_SIDE, D.URF, gw).outcome is Outcome.Tie


def test_swapped_presentation_is_mapped_back():
    gw, _ = function_gateway(marker_judge)
    for swapped in (False, True):
        assert judge_dimension(A_SIDE, B_SIDE, D.CQC, gw, swapped=swapped).outcome is Outcome.AWins


def test_unparseable_recovers_with_one_retry():
    answers = iter(["I prefer A.", '{"outcome": "B", "evidence": "cleaner"}'])
    gw, backend = function_gateway(lambda r: next(answers))
    assert judge_dimension(A_SIDE, B_SIDE, D.URF, gw).outcome is Outcome.BWins
    assert backend.calls == 2


def test_unparseable_twice_errors():
    gw, backend = function_gateway(lambda r: "no idea")
    with pytest.raises(MetaEvalError, match="unparseable"):
        judge_dimension(A_SIDE, B_SIDE, D.URF, gw)
    assert backend.calls == 2


@pytest.mark.parametrize("text", ['{"outcome": "abstain"}', '{"outcome": "A"}', '{"evidence": "x"}'])
def test_abstention_and_missing_evidence_are_errors(text):
    gw, _ = function_gateway(lambda r: text)
    with pytest.raises(MetaEvalError):
        judge_dimension(A_SIDE, B_SIDE, D.MR, gw)


def test_position_check_flags_adversarial_mock():
    gw, _ = function_gateway(first_slot_judge)
    check = position_check(A_SIDE, B_SIDE, D.MR, gw)
    assert (check.as_presented, check.reversed, check.consistent) == (Outcome.AWins, Outcome.BWins, False)
    gw, _ = function_gateway(marker_judge)
    assert position_check(A_SIDE, B_SIDE, D.MR, gw).consistent


# -- comparisons ------------------------------------------------------------------------


def test_both_plans_five_judgments():
    gw, _ = function_gateway(marker_judge)
    rec = compare_artifacts(A_SIDE, B_SIDE, gw, seed=1)
    assert len(rec.result.judgments) == 5 and rec.result.winner is Outcome.AWins
    assert rec.result.points_a == 1.0


def test_no_plans_three_judgments():
    gw, _ = function_gateway(marker_judge)
    a, b = Artifacts("a", "MARK-A", "{}"), Artifacts("b", "MARK-B", "{}")
    rec = compare_artifacts(a, b, gw, seed=1)
    assert [x.dimension for x in rec.result.judgments] == [D.URF, D.MR, D.CQC]
    assert dict(rec.result.weights) == active_weights(False)


def test_one_plan_uses_reduced_map_and_records_asymmetry():
    gw, _ = function_gateway(marker_judge)
    rec = compare_artifacts(A_SIDE, Artifacts("b", "MARK-B", "{}"), gw, seed=2)
    assert len(rec.result.judgments) == 3 and rec.plan_asymmetry
    assert rec.to_dict()["plan_asymmetry"] is True


@pytest.mark.parametrize("seed", range(12))
def test_seed_round_trip_order_insensitive(seed):
    gw, _ = function_gateway(marker_judge)
    rec = compare_artifacts(A_SIDE, B_SIDE, gw, seed=seed)
    rng = random.Random(seed)
    expected = [["B", "A"] if rng.random() < 0.5 else ["A", "B"] for _ in range(5)]
    assert [p["order"] for p in rec.presentation] == expected
    assert all(x.outcome is Outcome.AWins for x in rec.result.judgments)


def test_seed_changes_presentation_not_outcome():
    orders = set()
    for seed in range(20):
        gw, _ = function_gateway(marker_judge)
        rec = compare_artifacts(A_SIDE, B_SIDE, gw, seed=seed)
        orders.add(tuple(tuple(p["order"]) for p in rec.presentation))
        assert rec.result.winner is Outcome.AWins
    assert len(orders) > 1


def test_judge_error_fails_comparison():
    gw, _ = function_gateway(lambda r: "garbage")
    with pytest.raises(MetaEvalError):
        compare_artifacts(A_SIDE, B_SIDE, gw, seed=0)


def _workspace(root, suite, plan=None):
    root.mkdir(parents=True)
    (root / "metric_suite.json").write_text(suite)
    (root / "results.json").write_text(json.dumps({"n_records": 1, "results": ["x" * 100]}))
    if plan:
        (root / "plan.md").write_text(plan)
    return root


def test_compare_workspaces_deterministic(tmp_path):
    a = _workspace(tmp_path / "a", '{"m": "MARK-A"}', "# plan")
    b = _workspace(tmp_path / "b", '{"m": "MARK-B"}', "# plan")
    out = tmp_path / "comparison.json"
    outs = []
    for _ in range(2):
        gw, _ = function_gateway(marker_judge)
        outs.append(compare_workspaces(a, b, gw, seed=7, out_path=out).to_json())
    assert outs[0] == outs[1] == out.read_text()
    rec = json.loads(outs[0])
    for key in ("pair_id", "seed", "active_weights", "judgments", "points", "winner", "presentation"):
        assert key in rec


def test_results_digest_drops_per_cell_lists(tmp_path):
    art = Artifacts.from_workspace(_workspace(tmp_path / "a", "{}"))
    assert "xxxx" not in art.results and "n_records" in art.results


def test_workspace_without_suite_rejected(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(MetaEvalError):
        Artifacts.from_workspace(tmp_path / "empty")


def test_digest_cap():
    big = Artifacts("a", "x" * 10_000, "y" * 10_000)
    assert len(big.digest(cap=1000)) < 1300
    assert truncate("abcdef", 4) .startswith("ab") and truncate("abcdef", 4).endswith("ef")


# -- tallies ---------------------------------------------------------------------------


def _comparison(winner, urf="A", baseline="b2"):
    return {"baseline": baseline, "winner": winner,
            "judgments": [{"dimension": "URF", "outcome": urf}]}


def test_tally_table(tmp_path):
    comps = [_comparison("A")] * 24 + [_comparison("Tie", "Tie")] * 16
    table = tally_comparisons(comps)
    assert table["b2"][OVERALL].label() == "24W/16T/0L"
    assert "80.0 (24W/16T/0L)" in tally_markdown(table)


def test_load_pairs_inline_and_refs(tmp_path):
    (tmp_path / "c1.json").write_text(json.dumps(_comparison("A", baseline=None)))
    manifest = {"comparisons": [{"path": "c1.json", "baseline": "b1"}, _comparison("B", baseline="b3")]}
    (tmp_path / "pairs.json").write_text(json.dumps(manifest))
    comps = load_pairs(tmp_path / "pairs.json")
    assert [c["baseline"] for c in comps] == ["b1", "b3"]
