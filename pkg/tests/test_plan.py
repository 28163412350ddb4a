import json

import pytest
from hypothesis import given, strategies as st

from traceeval.plan import (
    CODE_BASED,
    LLM_AS_JUDGE,
    TEST_CASE_FIELDS,
    EvaluationPlan,
    PlanError,
    PlanMetric,
    TestCase,
    TestCaseError,
    dump_test_cases,
    parse_method,
    parse_plan,
    parse_test_cases,
)

from conftest import FIXTURES

PLAN_TEXT = (FIXTURES / "plans" / "three_metrics.md").read_text(encoding="utf-8")

GENERAL_INFO = {
    "test_id": "general_info_001",
    "scenario": "General Information Queries",
    "query": "What are the latest developments in AI?",
    "description": "Tests agent's ability to search and synthesize",
    "expected_behavior": "Agent should perform web search and provide a factual answer",
}


def heading_oracle(text):
    """Level-3 headings between the metrics heading and the next level-2 heading."""
    inside, names = False, []
    for line in text.splitlines():
        if line.startswith("## "):
            inside = "evaluation metrics" in line.lower()
        elif inside and line.startswith("### "):
            names.append(line[4:].strip())
    return names


class TestPlanParsing:
    def test_three_metric_fixture(self):
        plan = parse_plan(PLAN_TEXT)
        assert plan.metric_names() == heading_oracle(PLAN_TEXT)
        assert len(plan.metrics) == 3
        assert [m.method for m in plan.metrics] == [LLM_AS_JUDGE, CODE_BASED, LLM_AS_JUDGE]
        assert plan.metrics[1].area == "Tool use"
        assert plan.title == "Evaluation Plan: travel_planner"
        assert plan.objectives == ["Itineraries cover every requested day",
                                   "The agent calls the right tools for each request"]
        assert plan.scenarios == ["Multi-day itinerary requests", "Hotel-only searches"]
        assert "search_hotels" in plan.agent_spec

    def test_markdown_round_trip(self):
        plan = parse_plan(PLAN_TEXT)
        again = parse_plan(plan.to_markdown())
        assert again == plan
        assert again.to_markdown() == plan.to_markdown()

    def test_no_metrics_section(self):
        with pytest.raises(PlanError, match="no Evaluation Metrics"):
            parse_plan("# Plan\n\n## Agent Specification\nsomething\n")

    def test_empty_metrics_section(self):
        with pytest.raises(PlanError, match="defines no metrics"):
            parse_plan("## Evaluation Metrics\n\nnothing here\n")

    def test_metric_without_method(self):
        with pytest.raises(PlanError, match="no Method"):
            parse_plan("## Evaluation Metrics\n### Accuracy\n- **Description:** d\n")

    def test_duplicate_metric_names(self):
        block = "### Accuracy\n- **Method:** Code-based\n"
        with pytest.raises(PlanError, match="unique"):
            parse_plan("## Evaluation Metrics\n" + block + block)

    @pytest.mark.parametrize("raw,expected", [
        ("Code-based", CODE_BASED), ("code based", CODE_BASED), ("[Code-based]", CODE_BASED),
        ("LLM-as-Judge", LLM_AS_JUDGE), ("llm-as-a-judge", LLM_AS_JUDGE), ("LLMAsJudge", LLM_AS_JUDGE),
    ])
    def test_method_aliases(self, raw, expected):
        assert parse_method(raw) == expected

    def test_unknown_method(self):
        with pytest.raises(PlanError):
            parse_method("vibes")

    def test_metric_requires_name(self):
        with pytest.raises(PlanError):
            PlanMetric(" ", "a", "d", CODE_BASED)

    @given(st.lists(st.tuples(st.text("abcdefgh XYZ", min_size=1, max_size=12).map(str.strip).filter(bool),
                              st.sampled_from([CODE_BASED, LLM_AS_JUDGE])),
                    min_size=1, max_size=5, unique_by=lambda t: t[0]))
    def test_generated_plans_round_trip(self, metrics):
        plan = EvaluationPlan(
            agent_spec="An agent.",
            objectives=["obj"],
            metrics=[PlanMetric(n, "area", f"desc of {n}", m) for n, m in metrics],
            scenarios=["s"],
            tech_stack=["t"],
        )
        parsed = parse_plan(plan.to_markdown())
        assert [(m.name, m.method) for m in parsed.metrics] == metrics


class TestCases:
    def test_general_info_round_trip(self):
        line = json.dumps(GENERAL_INFO)
        cases, issues = parse_test_cases(line + "\n")
        assert not issues and len(cases) == 1
        out = dump_test_cases(cases)
        canon = json.dumps(json.loads(out), sort_keys=True)
        assert canon == json.dumps(GENERAL_INFO, sort_keys=True)
        assert dump_test_cases(parse_test_cases(out)[0]) == out

    def test_field_order_is_schema_order(self):
        out = dump_test_cases([TestCase.from_dict(GENERAL_INFO)])
        assert list(json.loads(out)) == list(TEST_CASE_FIELDS)

    def test_line_missing_query_is_rejected(self):
        bad = {k: v for k, v in GENERAL_INFO.items() if k != "query"}
        good = dict(GENERAL_INFO, test_id="general_info_002")
        cases, issues = parse_test_cases(json.dumps(bad) + "\n" + json.dumps(good) + "\n")
        assert [c.test_id for c in cases] == ["general_info_002"]
        assert len(issues) == 1 and issues[0].line_no == 1 and "query" in issues[0].message

    def test_empty_query_rejected(self):
        with pytest.raises(TestCaseError, match="query"):
            TestCase.from_dict(dict(GENERAL_INFO, query="  "))

    @pytest.mark.parametrize("mutate,msg", [
        (lambda d: {**d, "extra": "x"}, "unexpected"),
        (lambda d: {**d, "scenario": 3}, "strings"),
        (lambda d: [d], "object"),
    ])
    def test_schema_violations(self, mutate, msg):
        with pytest.raises(TestCaseError, match=msg):
            TestCase.from_dict(mutate(dict(GENERAL_INFO)))

    def test_duplicate_ids(self):
        text = json.dumps(GENERAL_INFO) + "\n" + json.dumps(GENERAL_INFO) + "\n"
        cases, issues = parse_test_cases(text)
        assert len(cases) == 1
        assert "duplicate" in issues[0].message and issues[0].line_no == 2
        with pytest.raises(TestCaseError, match="duplicate"):
            dump_test_cases([cases[0], cases[0]])

    def test_invalid_json_and_fences(self):
        text = "```jsonl\n" + json.dumps(GENERAL_INFO) + "\n{not json\n```\n"
        cases, issues = parse_test_cases(text)
        assert len(cases) == 1
        assert issues[0].line_no == 3 and "invalid JSON" in issues[0].message

    @given(st.lists(st.fixed_dictionaries({k: st.text(min_size=1, max_size=20).filter(str.strip)
                                           for k in TEST_CASE_FIELDS}),
                    max_size=8, unique_by=lambda d: d["test_id"]))
    def test_jsonl_round_trip(self, rows):
        cases = [TestCase.from_dict(r) for r in rows]
        text = dump_test_cases(cases)
        parsed, issues = parse_test_cases(text)
        assert not issues and parsed == cases
        assert dump_test_cases(parsed) == text
