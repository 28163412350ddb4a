import pytest
from hypothesis import given, strategies as st

from traceeval.skills import (
    CATEGORIES,
    Skill,
    SkillError,
    bundle_for_stage,
    default_registry,
    load_registry,
    placeholders,
    render_template,
    render_text,
)
from traceeval.stages import StageId


def write_skill(root, dirname, id, category="procedural", stages="Planning", body="Do the thing.\n"):
    d = root / dirname
    d.mkdir(parents=True)
    (d / "SKILL.md").write_text(f"id: {id}\ncategory: {category}\nstages: {stages}\n---\n{body}")
    return d


def test_three_valid_skills(tmp_path):
    for i in range(3):
        write_skill(tmp_path, f"s{i}", f"skill-{i}")
    (tmp_path / "notes.txt").write_text("not a skill dir")
    assert len(load_registry(tmp_path)) == len([p for p in tmp_path.iterdir() if p.is_dir()]) == 3


def test_empty_directory(tmp_path):
    assert len(load_registry(tmp_path)) == 0


def test_duplicate_id(tmp_path):
    write_skill(tmp_path, "a", "plan-template", "template")
    write_skill(tmp_path, "b", "plan-template", "template")
    with pytest.raises(SkillError, match="duplicate id"):
        load_registry(tmp_path)


@pytest.mark.parametrize("header", [
    "category: procedural\nstages: Planning\n",
    "id: x\nstages: Planning\n",
    "id: x\ncategory: procedural\n",
])
def test_missing_manifest_field(tmp_path, header):
    d = tmp_path / "s"
    d.mkdir()
    (d / "SKILL.md").write_text(header + "---\nbody\n")
    with pytest.raises(SkillError, match="missing manifest field"):
        load_registry(tmp_path)


def test_unknown_category_and_stage(tmp_path):
    write_skill(tmp_path / "c", "s", "x", category="recipe")
    with pytest.raises(SkillError, match="category"):
        load_registry(tmp_path / "c")
    write_skill(tmp_path / "d", "s", "x", stages="Deploy")
    with pytest.raises(SkillError):
        load_registry(tmp_path / "d")


def test_empty_body_rejected(tmp_path):
    write_skill(tmp_path, "s", "x", body="   \n")
    with pytest.raises(SkillError, match="body"):
        load_registry(tmp_path)


def test_resources_loaded(tmp_path):
    d = write_skill(tmp_path, "s", "docs", category="dynamic-resource", stages="CodeGen")
    (d / "resources").mkdir()
    (d / "resources" / "queries.txt").write_text("deepeval | LLMTestCase\n")
    skill = load_registry(tmp_path).get("docs")
    assert skill.resource("queries.txt") == "deepeval | LLMTestCase\n"


def test_bundle_single_stage(tmp_path):
    write_skill(tmp_path, "a", "plan-template", "template", "Planning")
    write_skill(tmp_path, "b", "report-template", "template", "Reporting")
    reg = load_registry(tmp_path)
    assert bundle_for_stage(reg, StageId.Planning).ids() == ["plan-template"]


def test_bundle_shared_skill(tmp_path):
    write_skill(tmp_path, "a", "shared", stages="Planning, Reporting")
    reg = load_registry(tmp_path)
    assert "shared" in bundle_for_stage(reg, StageId.Planning).ids()
    assert "shared" in bundle_for_stage(reg, StageId.Reporting).ids()


def test_bundle_empty_stage(tmp_path):
    write_skill(tmp_path, "a", "x", stages="Planning")
    assert len(bundle_for_stage(load_registry(tmp_path), StageId.Instrumentation)) == 0


def test_bundle_order_category_then_id(tmp_path):
    write_skill(tmp_path, "1", "z-proc", "procedural")
    write_skill(tmp_path, "2", "a-tmpl", "template")
    write_skill(tmp_path, "3", "a-proc", "procedural")
    write_skill(tmp_path, "4", "code", "code-pattern")
    ids = bundle_for_stage(load_registry(tmp_path), StageId.Planning).ids()
    assert ids == ["a-proc", "z-proc", "a-tmpl", "code"]


def test_registry_load_deterministic(tmp_path):
    for i in (3, 1, 2):
        write_skill(tmp_path, f"d{i}", f"s{i}", stages="Planning,CodeGen")
    assert load_registry(tmp_path).dumps() == load_registry(tmp_path).dumps()


def test_default_registry_covers_stages():
    reg = default_registry()
    assert "plan-template" in reg and "report-template" in reg
    for stage in (StageId.Planning, StageId.CodeGen, StageId.Reporting):
        assert len(bundle_for_stage(reg, stage)) >= 1
    assert {s.category for s in reg.skills} == set(CATEGORIES)


def test_plan_template_partial_fields():
    skill = default_registry().get("plan-template")
    out = render_template(skill, {"AGENT NAME": "career_assist"})
    assert "career_assist" in out.text
    assert "AGENT NAME" not in out.unresolved
    assert out.unresolved and all(f"[{p}]" in out.text for p in out.unresolved)


def test_empty_fields_identity():
    skill = default_registry().get("plan-template")
    out = render_template(skill, {})
    assert out.text == skill.body
    assert list(out.unresolved) == placeholders(skill.body)


def test_report_template_test_scale():
    out = render_template(default_registry().get("report-template"), {"N": "5"})
    assert "5 test cases" in out.text


def test_render_requires_template_category():
    skill = Skill("p", "procedural", frozenset({StageId.Planning}), "p", "body [X]")
    with pytest.raises(SkillError):
        render_template(skill, {})


def test_markdown_links_are_not_placeholders():
    assert placeholders("see [docs](http://x) and [NAME]") == ["NAME"]


names = st.text("ABCDEFGHIJ _", min_size=1, max_size=8).map(str.strip).filter(bool)


@given(st.lists(names, max_size=5), st.text(alphabet="abc \n", max_size=20))
def test_render_identity_property(ph, filler):
    body = filler.join(f"[{p}]" for p in ph) + filler
    assert render_text(body, {}).text == body


@given(stages=st.sets(st.sampled_from(list(StageId)), min_size=1), probe=st.sampled_from(list(StageId)))
def test_bundle_membership_property(stages, probe, tmp_path_factory):
    root = tmp_path_factory.mktemp("reg")
    write_skill(root, "a", "one", stages=",".join(s.value for s in stages))
    write_skill(root, "b", "two", stages=probe.value)
    reg = load_registry(root)
    for stage in StageId:
        assert all(stage in s.stages for s in bundle_for_stage(reg, stage).skills)
