"""
Check results for validation and certificate reports.

Operations that report instead of raising (basis validation, certificate
verification, solver feasibility) collect one CheckResult per condition.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any


@dataclass
class CheckResult:
    """Result of a single numerical check."""

    name: str
    passed: bool
    message: str
    severity: str = "error"  # error, warning, info
    details: dict[str, Any] = field(default_factory=dict)


def all_passed(checks: list[CheckResult], severity: str = "error") -> bool:
    """True if no check of the given severity failed."""
    return not any(not c.passed and c.severity == severity for c in checks)


def format_checks(checks: list[CheckResult]) -> str:
    """One line per check, OK/FAIL/WARN prefixed."""
    lines = []
    for c in checks:
        if c.passed:
            icon = "OK"
        elif c.severity == "error":
            icon = "FAIL"
        elif c.severity == "warning":
            icon = "WARN"
        else:
            icon = "INFO"
        lines.append(f"{icon} {c.name}: {c.message}")
    return "\n".join(lines)
