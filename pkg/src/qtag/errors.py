"""Exception hierarchy shared by every module."""


class QtagError(Exception):
    """Base class for all library errors."""


class ConfigurationError(QtagError, ValueError):
    """Invalid geometry, protocol or scenario parameters.

    ``errors`` holds every problem found, as ``(field_path, message)`` pairs,
    so callers can report all of them at once.
    """

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [("", errors)]
        self.errors = list(errors)
        super().__init__("; ".join(f"{p}: {m}" if p else m for p, m in self.errors))


class KeyDepletionError(QtagError):
    """Shared key material is exhausted; more key expansion must run."""


class ReleaseRefused(QtagError):
    """The tag refuses to release a bit from a burned round or block."""


class CausalityViolation(QtagError):
    """An injection used information outside its past light cone."""

    def __init__(self, datum, deficit, message=None):
        self.datum = datum
        self.deficit = deficit
        super().__init__(
            message
            or f"datum {datum!r} not causally accessible (deficit {float(deficit):.6g} time units)"
        )


class CapabilityViolation(QtagError):
    """The adversary used a capability its scenario does not grant."""


class EngineError(QtagError):
    """Internal simulator misuse (scheduling in the past, runaway event counts)."""


class ReplayMismatch(QtagError):
    """A trace cannot be replayed (bad header or version)."""
