"""Exception types shared across the engine."""

from __future__ import annotations


class EngineError(Exception):
    """Base class for all errors raised by this package."""


class ProtocolError(EngineError):
    """Malformed or inconsistent data crossing a module or file boundary.

    ``path`` and ``offset`` are set when the error originates from a file so
    diagnostics can point at the byte that broke the contract.
    """

    def __init__(self, message: str, *, path: str | None = None, offset: int | None = None):
        self.path = path
        self.offset = offset
        parts = [message]
        if path is not None:
            parts.append(f"path={path}")
        if offset is not None:
            parts.append(f"offset={offset}")
        super().__init__(": ".join(parts) if len(parts) == 1 else f"{parts[0]} ({', '.join(parts[1:])})")


class ManifestError(ProtocolError):
    """Manifest failed validation; carries every violation found, not just the first."""

    def __init__(self, violations: list[str], *, path: str | None = None):
        self.violations = list(violations)
        summary = f"{len(self.violations)} manifest violation(s)"
        detail = "; ".join(self.violations[:20])
        if len(self.violations) > 20:
            detail += "; ..."
        super().__init__(f"{summary}: {detail}", path=path)


class PlanError(EngineError):
    """Perturbation plan cannot satisfy its invariants (e.g. budget below part count)."""


class CoverageError(EngineError):
    """A required variant or attribution is absent and the policy forbids skipping."""


class NumericalError(EngineError):
    """A numerical routine left its domain of validity (e.g. covariance far from PSD)."""
