"""Exception hierarchy.

Every error carries a short ``code`` so the CLI and the HTTP service can emit
machine-parsable diagnostics without string matching on messages.
"""

from __future__ import annotations

from typing import Any


class AuditError(Exception):
    code = "AuditError"

    def __init__(self, message: str, **detail: Any) -> None:
        super().__init__(message)
        self.message = message
        self.detail = detail

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"error": self.code, "message": self.message}
        out.update({k: v for k, v in self.detail.items() if v is not None})
        return out


class EmptyLog(AuditError, ValueError):
    code = "EmptyLog"


class UnsortedEvents(AuditError, ValueError):
    code = "UnsortedEvents"


class InvalidWindow(AuditError, ValueError):
    code = "InvalidWindow"


class DomainError(AuditError, ValueError):
    code = "DomainError"


class DegenerateCost(AuditError, ValueError):
    code = "DegenerateCost"


class InvalidThresholds(AuditError, ValueError):
    code = "InvalidThresholds"


class InvalidEvent(AuditError, ValueError):
    """A DecisionEvent (or other record) violates a field invariant."""

    code = "InvalidEvent"


class ConfigError(AuditError, ValueError):
    code = "ConfigError"


class IllegalTransition(AuditError):
    code = "IllegalTransition"


class ParseError(AuditError, ValueError):
    """Base for line-level record parse failures; always carries ``line``."""

    code = "ParseError"

    def __init__(self, message: str, *, line: int | None = None, **detail: Any) -> None:
        super().__init__(message, line=line, **detail)
        self.line = line


class MissingField(ParseError):
    code = "MissingField"

    def __init__(self, key: str, *, line: int | None = None) -> None:
        super().__init__(f"missing required key {key!r}", line=line, key=key)
        self.key = key


class InvalidEnum(ParseError):
    code = "InvalidEnum"

    def __init__(self, key: str, value: Any, allowed: list[str], *, line: int | None = None) -> None:
        super().__init__(
            f"invalid value {value!r} for {key!r}; expected one of {allowed}",
            line=line,
            key=key,
        )
        self.key = key


class InvalidField(ParseError):
    code = "InvalidField"

    def __init__(self, key: str, reason: str, *, line: int | None = None) -> None:
        super().__init__(f"invalid {key!r}: {reason}", line=line, key=key)
        self.key = key


class RecordSyntaxError(ParseError):
    code = "SyntaxError"


class CorruptSegment(AuditError):
    code = "CorruptSegment"


class StoreIoError(AuditError, OSError):
    code = "IoError"


class UnknownScenario(AuditError, KeyError):
    code = "UnknownScenario"

    def __str__(self) -> str:
        return self.message
