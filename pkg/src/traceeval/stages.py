from __future__ import annotations

from enum import Enum


class StageId(str, Enum):
    """Pipeline stages, declared in execution order."""

    Planning = "Planning"
    TestGen = "TestGen"
    Instrumentation = "Instrumentation"
    TraceProcessing = "TraceProcessing"
    CodeGen = "CodeGen"
    Reporting = "Reporting"

    @property
    def order(self) -> int:
        return list(StageId).index(self)

    @classmethod
    def parse(cls, raw: str) -> "StageId":
        for stage in cls:
            if stage.value.lower() == raw.strip().lower():
                return stage
        raise ValueError(f"unknown stage {raw!r}")
