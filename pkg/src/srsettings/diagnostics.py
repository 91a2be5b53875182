from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class Diagnostic:
    """A non-fatal problem found while reading or joining inputs."""

    severity: str  # "warning" | "error"
    code: str
    message: str
    subject: str = ""
    source: str = ""

    def to_dict(self) -> dict:
        return asdict(self)
