"""Run configuration: one YAML or JSON file, paths relative to the file."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from . import TraceEvalError
from .gateway import Gateway, HttpBackend, ScriptedBackend

ENDPOINT_ENV = "TRACEEVAL_MODEL_ENDPOINT"
DEFAULT_COLLECTOR = "http://localhost:4318"


class ConfigError(TraceEvalError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    use_traces: bool = True
    use_planning: bool = True
    use_skills: bool = True
    agentic: bool = True
    tool_budget: int = 50
    metric_count_hint: int | None = None
    trace_byte_budget: int = 16_000
    source_byte_budget: int = 16_000
    self_review: bool = False
    emit_script: bool = False
    concurrency: int = 1
    mode: str = "custom"

    def __post_init__(self) -> None:
        if self.tool_budget < 0:
            raise ConfigError("tool_budget must be >= 0")
        if self.metric_count_hint is not None:
            if self.metric_count_hint < 1:
                raise ConfigError("metric_count_hint must be >= 1")
            if self.use_skills and self.metric_count_hint > 5:
                raise ConfigError("metric_count_hint above 5 is not allowed with skills")
        if self.use_planning and not self.agentic:
            raise ConfigError("planning needs an agentic configuration")
        if self.use_skills and not self.agentic:
            raise ConfigError("skills need an agentic configuration")

    @classmethod
    def preset(cls, mode: str, **overrides: Any) -> "PipelineConfig":
        mode = mode.lower()
        if mode not in PRESETS:
            raise ConfigError(f"unknown mode {mode!r}; choose from {', '.join(PRESETS)}")
        return cls(**{**PRESETS[mode], "mode": mode, **overrides})

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


PRESETS: dict[str, dict[str, bool]] = {
    "b1": dict(agentic=False, use_planning=False, use_skills=False, use_traces=True),
    "b2": dict(agentic=True, use_planning=False, use_skills=False, use_traces=False),
    "b3": dict(agentic=True, use_planning=False, use_skills=False, use_traces=True),
    "b4": dict(agentic=True, use_planning=True, use_skills=False, use_traces=True),
    "ours": dict(agentic=True, use_planning=True, use_skills=True, use_traces=True),
}


@dataclass(frozen=True)
class RunConfig:
    pipeline: PipelineConfig = field(default_factory=lambda: PipelineConfig.preset("ours"))
    model_endpoint: str | None = None
    model_id: str = "default"
    model_temperature: float = 0.0
    model_api_key_env: str | None = None
    docs_endpoint: str | None = None
    mock_script: Path | None = None
    agent_name: str = "agent"
    agent_source: Path | None = None
    raw_traces: Path | None = None
    test_fixture: Path | None = None
    collector_endpoint: str = DEFAULT_COLLECTOR
    requirement: Path | None = None
    skills_root: Path | None = None

    def with_mode(self, mode: str, **overrides: Any) -> "RunConfig":
        keep = {
            k: getattr(self.pipeline, k)
            for k in ("tool_budget", "metric_count_hint", "trace_byte_budget", "source_byte_budget",
                      "self_review", "emit_script", "concurrency")
        }
        keep.update(overrides)
        return replace(self, pipeline=PipelineConfig.preset(mode, **keep))

    def build_gateway(self) -> Gateway:
        if self.mock_script is not None:
            return Gateway(ScriptedBackend.from_file(self.mock_script), self.model_temperature)
        endpoint = os.environ.get(ENDPOINT_ENV) or self.model_endpoint
        if not endpoint:
            raise ConfigError(f"no model endpoint: set model.endpoint, mock.script_path or ${ENDPOINT_ENV}")
        key = os.environ.get(self.model_api_key_env) if self.model_api_key_env else None
        return Gateway(
            HttpBackend(endpoint, self.model_id, self.docs_endpoint, api_key=key),
            self.model_temperature,
        )


def _get(data: dict[str, Any], dotted: str, default: Any = None) -> Any:
    node: Any = data
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            return default
        node = node[part]
    return node


def _path(base: Path, raw: Any) -> Path | None:
    if raw in (None, ""):
        return None
    p = Path(str(raw)).expanduser()
    return p if p.is_absolute() else (base / p)


def config_from_dict(data: dict[str, Any], base: Path = Path(".")) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    pipe = dict(_get(data, "pipeline", {}) or {})
    mode = str(pipe.pop("mode", "ours"))
    known = {f.name for f in fields(PipelineConfig)} - {"mode"}
    unknown = sorted(set(pipe) - known)
    if unknown:
        raise ConfigError(f"unknown pipeline keys: {', '.join(unknown)}")
    try:
        pipeline = PipelineConfig.preset(mode, **pipe) if mode != "custom" else PipelineConfig(**pipe)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(
        pipeline=pipeline,
        model_endpoint=_get(data, "model.endpoint"),
        model_id=str(_get(data, "model.id", "default")),
        model_temperature=float(_get(data, "model.temperature", 0.0)),
        model_api_key_env=_get(data, "model.api_key_env"),
        docs_endpoint=_get(data, "docs.endpoint"),
        mock_script=_path(base, _get(data, "mock.script_path")),
        agent_name=str(_get(data, "agent.name", "agent")),
        agent_source=_path(base, _get(data, "agent.source_dir")),
        raw_traces=_path(base, _get(data, "traces.raw_dir")),
        test_fixture=_path(base, _get(data, "tests.fixture_path")),
        collector_endpoint=str(_get(data, "instrumentation.collector_endpoint") or DEFAULT_COLLECTOR),
        requirement=_path(base, _get(data, "requirement_path")),
        skills_root=_path(base, _get(data, "skills.root")),
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML/JSON: {exc}") from exc
    return config_from_dict(data, path.parent)
