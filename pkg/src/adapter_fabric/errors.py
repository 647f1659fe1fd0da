"""Error type shared by all control-plane stores and operations."""

from __future__ import annotations


class FabricError(Exception):
    """Operation failure carrying a machine-readable code.

    Codes are stable strings (e.g. "UNKNOWN_ADAPTER", "RATE_LIMITED") that
    callers match on; the message is human-oriented detail.
    """

    def __init__(self, code: str, message: str = ""):
        super().__init__(message or code)
        self.code = code
        self.message = message or code

    def __repr__(self) -> str:
        return f"FabricError({self.code!r}, {self.message!r})"
