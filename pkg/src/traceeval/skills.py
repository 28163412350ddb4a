"""Evaluation skills: on-disk packages of instructions, templates and code patterns.

Layout, one directory per skill::

    <root>/<skill-dir>/SKILL.md       manifest header, a ``---`` line, Markdown body
    <root>/<skill-dir>/resources/*    optional named text resources

Manifest header lines are ``key: value``; required keys are ``id``,
``category`` and ``stages`` (comma separated). ``title`` defaults to the id.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources as importlib_resources
from pathlib import Path

from . import TraceEvalError
from .stages import StageId

CATEGORIES = ("procedural", "template", "code-pattern", "dynamic-resource")
MANIFEST = "SKILL.md"
_PLACEHOLDER = re.compile(r"\[([A-Za-z0-9][^\[\]\n]*)\](?!\()")


class SkillError(TraceEvalError):
    pass


@dataclass(frozen=True)
class Skill:
    id: str
    category: str
    stages: frozenset[StageId]
    title: str
    body: str
    resources: tuple[tuple[str, str], ...] = ()
    meta: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if not self.id:
            raise SkillError("skill id must be non-empty")
        if self.category not in CATEGORIES:
            raise SkillError(f"skill {self.id}: unknown category {self.category!r}")
        if not self.stages:
            raise SkillError(f"skill {self.id}: stages must be non-empty")
        if not self.body.strip():
            raise SkillError(f"skill {self.id}: body is empty")

    def resource(self, name: str) -> str | None:
        return dict(self.resources).get(name)

    def get_meta(self, key: str, default: str | None = None) -> str | None:
        return dict(self.meta).get(key, default)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "category": self.category,
            "stages": sorted(s.value for s in self.stages),
            "title": self.title,
            "body": self.body,
            "resources": [list(r) for r in self.resources],
            "meta": [list(m) for m in self.meta],
        }


@dataclass(frozen=True)
class SkillBundle:
    stage: StageId
    skills: tuple[Skill, ...]

    def __len__(self) -> int:
        return len(self.skills)

    def ids(self) -> list[str]:
        return [s.id for s in self.skills]

    def to_markdown(self) -> str:
        parts = []
        for s in self.skills:
            parts.append(f"## Skill: {s.title} ({s.category})\n\n{s.body.strip()}\n")
        return "\n".join(parts)


@dataclass(frozen=True)
class Registry:
    skills: tuple[Skill, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.skills)

    def __contains__(self, skill_id: str) -> bool:
        return any(s.id == skill_id for s in self.skills)

    def get(self, skill_id: str) -> Skill:
        for s in self.skills:
            if s.id == skill_id:
                return s
        raise KeyError(skill_id)

    def dumps(self) -> str:
        return json.dumps([s.to_dict() for s in self.skills], indent=2, ensure_ascii=False)


def _parse_manifest(text: str, source: Path) -> tuple[dict[str, str], str]:
    lines = text.splitlines()
    header: dict[str, str] = {}
    for i, line in enumerate(lines):
        if line.strip() == "---":
            body = "\n".join(lines[i + 1:]).strip("\n") + "\n"
            return header, body
        if not line.strip():
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise SkillError(f"{source}: malformed manifest line {line!r}")
        header[key.strip().lower()] = value.strip()
    raise SkillError(f"{source}: manifest header is not terminated by '---'")


def load_skill(directory: Path) -> Skill:
    manifest = directory / MANIFEST
    if not manifest.is_file():
        raise SkillError(f"{directory}: missing {MANIFEST}")
    header, body = _parse_manifest(manifest.read_text(encoding="utf-8"), manifest)
    for key in ("id", "category", "stages"):
        if not header.get(key):
            raise SkillError(f"{manifest}: missing manifest field {key!r}")
    try:
        stages = frozenset(StageId.parse(s) for s in header["stages"].split(",") if s.strip())
    except ValueError as exc:
        raise SkillError(f"{manifest}: {exc}") from exc
    res_dir = directory / "resources"
    res = ()
    if res_dir.is_dir():
        res = tuple(
            (p.name, p.read_text(encoding="utf-8")) for p in sorted(res_dir.iterdir()) if p.is_file()
        )
    extra = tuple(
        sorted((k, v) for k, v in header.items() if k not in {"id", "category", "stages", "title"})
    )
    return Skill(
        id=header["id"],
        category=header["category"],
        stages=stages,
        title=header.get("title") or header["id"],
        body=body,
        resources=res,
        meta=extra,
    )


def load_registry(root: str | Path) -> Registry:
    """Load and validate every skill directory under ``root``."""
    root = Path(root)
    if not root.is_dir():
        raise SkillError(f"skill root {root} is not a directory")
    skills: list[Skill] = []
    seen: set[str] = set()
    for directory in sorted(p for p in root.iterdir() if p.is_dir()):
        skill = load_skill(directory)
        if skill.id in seen:
            raise SkillError(f"duplicate id {skill.id!r}")
        seen.add(skill.id)
        skills.append(skill)
    skills.sort(key=lambda s: s.id)
    return Registry(tuple(skills))


def default_registry() -> Registry:
    """The skills shipped with the package."""
    root = importlib_resources.files("traceeval") / "default_skills"
    with importlib_resources.as_file(root) as path:
        return load_registry(path)


def bundle_for_stage(registry: Registry, stage: StageId) -> SkillBundle:
    selected = [s for s in registry.skills if stage in s.stages]
    selected.sort(key=lambda s: (CATEGORIES.index(s.category), s.id))
    return SkillBundle(stage, tuple(selected))


@dataclass(frozen=True)
class RenderedTemplate:
    text: str
    unresolved: tuple[str, ...]


def placeholders(text: str) -> list[str]:
    """Distinct ``[PLACEHOLDER]`` names in order of first appearance."""
    seen: dict[str, None] = {}
    for m in _PLACEHOLDER.finditer(text):
        seen.setdefault(m.group(1), None)
    return list(seen)


def render_text(text: str, fields: dict[str, str]) -> RenderedTemplate:
    def sub(m: re.Match[str]) -> str:
        name = m.group(1)
        return fields[name] if name in fields else m.group(0)

    rendered = _PLACEHOLDER.sub(sub, text)
    unresolved = tuple(p for p in placeholders(text) if p not in fields)
    return RenderedTemplate(rendered, unresolved)


def render_template(skill: Skill, fields: dict[str, str]) -> RenderedTemplate:
    """Substitute ``[NAME]`` placeholders; unknown ones stay verbatim and are reported."""
    if skill.category != "template":
        raise SkillError(f"skill {skill.id} is a {skill.category} skill, not a template")
    return render_text(skill.body, fields)
