"""
Exception hierarchy for Leaklab.

Library code raises these; only the runner turns them into task status and
process exit codes.
"""
from __future__ import annotations

from typing import Optional


class LeaklabError(Exception):
    """Base class for all Leaklab errors."""


class DomainError(LeaklabError, ValueError):
    """Invalid argument: bad pmf, subset, layout, width, case or target."""


class ResourceError(LeaklabError, RuntimeError):
    """Exact enumeration would exceed the configured budget."""


class InternalError(LeaklabError, RuntimeError):
    """An internal invariant was broken."""


class ConfigError(DomainError):
    """Config document could not be parsed or has an invalid field."""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        self.line = line
        where = []
        if field:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
