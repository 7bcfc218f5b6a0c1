# src/errors.py
from typing import List, Optional

# CLI exit codes
EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_INCOMPLETE_RUN = 4


class ZipperError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(ZipperError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(ZipperError):
    """A pre-condition of an operation was violated."""


class ConfigError(ZipperError):
    """Invalid configuration. Carries field-level diagnostics."""

    def __init__(self, message: str, diagnostics: Optional[List[str]] = None):
        self.diagnostics = list(diagnostics or [])
        if self.diagnostics:
            message = message + "\n" + "\n".join(f"  - {d}" for d in self.diagnostics)
        super().__init__(message)


class StructureError(ZipperError):
    """A target structure (similarity matrix, teacher rank) cannot be realized."""


class CompatibilityError(ZipperError):
    """Two parameter sets (checkpoint and model, warm-start source and target) do not match."""

    def __init__(self, mismatches: List[str], message: str = "incompatible warm-start source"):
        self.mismatches = list(mismatches)
        super().__init__(message + ":\n" + "\n".join(f"  - {m}" for m in self.mismatches))


class LanguageKeyError(ZipperError, KeyError):
    """Language id not configured for the object being queried."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown language"


class InvariantError(ZipperError):
    """An internal invariant failed at runtime."""


class ArtifactError(ZipperError):
    """A run directory is incomplete or mixes artifacts from different configs."""

    def __init__(self, message: str, missing: Optional[List[str]] = None):
        self.missing = list(missing or [])
        if self.missing:
            message = message + "\n" + "\n".join(f"  - {m}" for m in self.missing)
        super().__init__(message)
