import json
import random
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st
from scipy.stats import spearmanr
from sklearn.metrics import f1_score

from traceeval.agreement import (
    AgreementError,
    alignment_report,
    average_ranks,
    compute_stats,
    fleiss_kappa,
    gwet_ac1,
    load_stats_input,
    macro_f1,
    read_ratings_csv,
    run_agreement,
    spearman_rho,
    stats_markdown,
)
from traceeval.cli import main

from conftest import FIXTURES

LABELS = ["A", "B", "Tie"]


# Worked by hand with exact fractions.
# Fleiss, 3 raters x 4 items, rows (3A), (2A,1B), (1A,2B), (3B):
#   P_i = 1, 1/3, 1/3, 1 -> P_bar = 2/3; p_A = p_B = 1/2 -> P_e = 1/2
#   kappa = (2/3 - 1/2) / (1/2) = 1/3
FLEISS_ROWS = [["A", "A", "A"], ["A", "A", "B"], ["A", "B", "B"], ["B", "B", "B"]]
FLEISS_KAPPA = Fraction(1, 3)

# AC1, 10 items, 7 agreements; pooled counts A=10 B=7 Tie=3 of 20:
#   pi = .5/.35/.15, sum pi(1-pi) = .605, P_e = .605/2 = .3025
#   AC1 = (.7 - .3025) / (1 - .3025) = 53/93
AC1_A = ["A", "A", "A", "A", "B", "B", "B", "Tie", "Tie", "A"]
AC1_B = ["A", "A", "A", "B", "B", "B", "A", "Tie", "B", "A"]
AC1_VALUE = Fraction(53, 93)


def rows_strategy(min_items=1):
    return st.integers(2, 5).flatmap(
        lambda n: st.lists(st.lists(st.sampled_from(LABELS), min_size=n, max_size=n),
                           min_size=min_items, max_size=30))


class TestFleiss:
    def test_worked_example(self):
        assert fleiss_kappa(FLEISS_ROWS) == pytest.approx(float(FLEISS_KAPPA), abs=1e-12)

    def test_unanimous_is_exactly_one(self):
        assert fleiss_kappa([["A"] * 3, ["B"] * 3, ["Tie"] * 3]) == 1.0
        assert fleiss_kappa([["A", "A"]] * 5) == 1.0

    def test_random_raters_near_zero(self):
        rng = random.Random(7)
        rows = [[rng.choice(LABELS) for _ in range(3)] for _ in range(10_000)]
        assert abs(fleiss_kappa(rows)) < 0.05

    @pytest.mark.parametrize("rows", [[], [["A"]], [["A", "B"], ["A"]], [["A", ""]]])
    def test_malformed(self, rows):
        with pytest.raises(AgreementError):
            fleiss_kappa(rows)

    @given(rows=rows_strategy())
    def test_bounded_above_by_one(self, rows):
        try:
            k = fleiss_kappa(rows)
        except AgreementError:
            return
        assert k <= 1.0 + 1e-12

    @given(rows=rows_strategy(), perm=st.permutations(LABELS))
    def test_relabel_invariant(self, rows, perm):
        mapping = dict(zip(LABELS, perm))
        relabeled = [[mapping[v] for v in r] for r in rows]
        try:
            base = fleiss_kappa(rows)
        except AgreementError:
            with pytest.raises(AgreementError):
                fleiss_kappa(relabeled)
            return
        assert fleiss_kappa(relabeled) == pytest.approx(base, abs=1e-12)


class TestAC1:
    def test_worked_example(self):
        assert gwet_ac1(AC1_A, AC1_B) == pytest.approx(float(AC1_VALUE), abs=1e-12)

    def test_unanimous_is_exactly_one(self):
        assert gwet_ac1(["A", "B", "Tie"], ["A", "B", "Tie"]) == 1.0

    def test_disjoint_is_negative(self):
        a = ["A", "B"] * 5
        b = ["B", "A"] * 5
        assert gwet_ac1(a, b) == pytest.approx(-1.0)

    @given(pairs=st.lists(st.tuples(st.sampled_from("xy"), st.sampled_from("xy")), min_size=1, max_size=40))
    def test_binary_chance_term(self, pairs):
        a, b = [p[0] for p in pairs], [p[1] for p in pairs]
        if a == b:
            assert gwet_ac1(a, b) == 1.0
            return
        n = len(a)
        pa = Fraction(sum(x == y for x, y in zip(a, b)), n)
        pi = Fraction(a.count("x") + b.count("x"), 2 * n)
        pe = 2 * pi * (1 - pi)
        assert gwet_ac1(a, b, labels=["x", "y"]) == pytest.approx(float((pa - pe) / (1 - pe)), abs=1e-12)

    @given(pairs=st.lists(st.tuples(st.sampled_from(LABELS), st.sampled_from(LABELS)), min_size=1, max_size=40),
           perm=st.permutations(LABELS))
    def test_relabel_invariant(self, pairs, perm):
        mapping = dict(zip(LABELS, perm))
        a, b = [p[0] for p in pairs], [p[1] for p in pairs]
        base = gwet_ac1(a, b, labels=LABELS)
        moved = gwet_ac1([mapping[x] for x in a], [mapping[x] for x in b], labels=LABELS)
        assert moved == pytest.approx(base, abs=1e-12)

    def test_label_outside_alphabet(self):
        with pytest.raises(AgreementError):
            gwet_ac1(["A", "C"], ["A", "A"], labels=["A", "B"])

    def test_length_mismatch(self):
        with pytest.raises(AgreementError):
            gwet_ac1(["A"], ["A", "B"])


class TestSpearman:
    @given(st.lists(st.tuples(st.integers(-5, 5), st.integers(-5, 5)), min_size=3, max_size=30))
    def test_matches_scipy(self, pairs):
        x = [float(p[0]) for p in pairs]
        y = [float(p[1]) for p in pairs]
        if len(set(x)) < 2 or len(set(y)) < 2:
            with pytest.raises(AgreementError):
                spearman_rho(x, y)
            return
        assert spearman_rho(x, y) == pytest.approx(spearmanr(x, y).statistic, abs=1e-9)

    @given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=20, unique=True))
    def test_monotone_transform_invariant(self, xs):
        ys = [v ** 3 + 2 * v for v in xs]
        assert spearman_rho(xs, ys) == pytest.approx(1.0)
        assert spearman_rho(xs, [-v for v in ys]) == pytest.approx(-1.0)

    def test_average_ranks_ties(self):
        assert average_ranks([10, 20, 20, 30]) == [1.0, 2.5, 2.5, 4.0]


class TestRunAgreement:
    def test_identical_runs(self):
        run = ["A", "B", "Tie", "A"]
        ra = run_agreement([run, list(run), list(run)])
        assert (ra.k_way, ra.pairwise_avg) == (100.0, 100.0)

    def test_three_of_four_unanimous(self):
        runs = [["A", "B", "Tie", "A"], ["A", "B", "Tie", "A"], ["A", "B", "Tie", "B"]]
        ra = run_agreement(runs)
        assert ra.k_way == 75.0
        # 3 unanimous cases x 3 pairs + 1 matching pair on the split case = 10/12
        assert ra.pairwise_avg == 83.3
        assert (ra.n_cases, ra.n_runs) == (4, 3)

    @given(st.integers(2, 5).flatmap(
        lambda k: st.integers(1, 12).flatmap(
            lambda n: st.lists(st.lists(st.sampled_from(LABELS), min_size=n, max_size=n),
                               min_size=k, max_size=k))))
    def test_k_way_below_pairwise(self, runs):
        ra = run_agreement(runs)
        assert 0.0 <= ra.k_way <= ra.pairwise_avg <= 100.0

    @pytest.mark.parametrize("runs", [[["A"]], [[], []], [["A"], ["A", "B"]]])
    def test_malformed(self, runs):
        with pytest.raises(AgreementError):
            run_agreement(runs)


class TestAlignment:
    def test_published_match_counts(self):
        data = load_stats_input(FIXTURES / "agreement" / "alignment.json")
        rep = alignment_report(data["alignment"]["judge"], data["alignment"]["human"])
        assert (rep.accuracy.matches, rep.accuracy.total, rep.accuracy.pct) == (39, 40, 97.5)
        pooled = rep.dimensions_pooled
        assert (pooled.matches, pooled.total, pooled.pct) == (150, 200, 75.0)
        assert {d: m.matches for d, m in rep.per_dimension.items()} == {
            "URF": 38, "MR": 39, "CQC": 29, "PQ": 20, "PCA": 24}

    def test_all_mismatched(self):
        human = {f"c{i}": "A" for i in range(6)}
        judge = {f"c{i}": "B" for i in range(6)}
        rep = alignment_report(judge, human)
        assert rep.accuracy.pct == 0.0
        assert rep.macro_f1 == 0.0

    def test_bare_labels_have_no_dimensions(self):
        rep = alignment_report({"x": "A"}, {"x": "A"})
        assert rep.dimensions_pooled is None
        assert rep.accuracy.pct == 100.0

    def test_case_ids_must_match(self):
        with pytest.raises(AgreementError, match="case ids differ"):
            alignment_report({"x": "A"}, {"y": "A"})

    def test_missing_overall(self):
        with pytest.raises(AgreementError, match="overall"):
            alignment_report({"x": {"MR": "A"}}, {"x": {"overall": "A"}})

    @given(st.lists(st.tuples(st.sampled_from(LABELS), st.sampled_from(LABELS)), min_size=1, max_size=50))
    def test_macro_f1_matches_sklearn(self, pairs):
        truth, pred = [p[0] for p in pairs], [p[1] for p in pairs]
        ref = f1_score(truth, pred, average="macro", zero_division=0)
        assert macro_f1(truth, pred) == pytest.approx(ref, abs=1e-12)


class TestIO:
    def test_csv_with_header(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("item,r1,r2,r3\n" + "\n".join(f"i{k},{','.join(r)}" for k, r in enumerate(FLEISS_ROWS)) + "\n")
        assert read_ratings_csv(p) == FLEISS_ROWS
        stats = compute_stats(load_stats_input(p))
        assert stats["fleiss_kappa"] == pytest.approx(1 / 3)

    def test_csv_without_header(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("A, A\nB ,B\n")
        assert read_ratings_csv(p) == [["A", "A"], ["B", "B"]]

    def test_compute_stats_every_block(self):
        stats = compute_stats({
            "ratings": FLEISS_ROWS,
            "pair": {"a": AC1_A, "b": AC1_B},
            "runs": [["A", "B"], ["A", "A"]],
            "spearman": {"x": [1, 2, 3], "y": [1, 3, 2]},
            "alignment": {"judge": {"c": "A"}, "human": {"c": "A"}},
        })
        assert set(stats) == {"fleiss_kappa", "gwet_ac1", "run_agreement", "spearman_rho", "alignment"}
        assert stats["run_agreement"]["k_way"] == 50.0
        md = stats_markdown(stats)
        for row in ("Fleiss' kappa | 0.333", "Gwet's AC1 | 0.570", "Spearman rho | 0.500",
                    "All-run agreement | 50.0%"):
            assert row in md
        json.dumps(stats)

    def test_compute_stats_empty(self):
        with pytest.raises(AgreementError):
            compute_stats({"other": 1})

    def test_cli_stats(self, capsys):
        assert main(["stats", "--input", str(FIXTURES / "agreement" / "alignment.json")]) == 0
        out = capsys.readouterr().out
        assert "97.5% (39/40)" in out and "75.0% (150/200)" in out
        assert main(["stats", "--json", "--input", str(FIXTURES / "agreement" / "alignment.json")]) == 0
        assert json.loads(capsys.readouterr().out)["alignment"]["accuracy"]["pct"] == 97.5
