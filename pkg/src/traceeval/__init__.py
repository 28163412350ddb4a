"""Trace-grounded evaluation generation and pairwise meta-evaluation for LLM agents."""

__version__ = "0.1.0"


class TraceEvalError(Exception):
    """Base class for domain errors raised by this package."""
