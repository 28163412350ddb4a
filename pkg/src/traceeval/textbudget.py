"""Deterministic size caps for text embedded in prompts."""

from __future__ import annotations


def truncate(text: str, cap: int) -> str:
    """Keep the head and tail of ``text`` within roughly ``cap`` characters."""
    if cap <= 0:
        raise ValueError("cap must be positive")
    if len(text) <= cap:
        return text
    head = cap // 2
    tail = cap - head
    dropped = len(text) - head - tail
    return f"{text[:head]}\n[... {dropped} characters truncated ...]\n{text[-tail:]}"


def truncate_bytes(text: str, budget: int) -> tuple[str, bool]:
    """Head/tail cut of ``text`` to ``budget`` UTF-8 bytes; returns (text, truncated)."""
    if budget <= 0:
        raise ValueError("budget must be positive")
    raw = text.encode("utf-8")
    if len(raw) <= budget:
        return text, False
    head = raw[: budget // 2].decode("utf-8", errors="ignore")
    tail = raw[len(raw) - (budget - budget // 2):].decode("utf-8", errors="ignore")
    dropped = len(raw) - budget
    return f"{head}\n[... {dropped} bytes truncated ...]\n{tail}", True
