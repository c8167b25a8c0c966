"""Exception types shared across the package."""


class EsdtError(Exception):
    """Base class for package errors."""


class SpecError(EsdtError):
    """Invalid policy architecture description."""


class LayoutError(EsdtError):
    """Flat parameter vector does not match the spec's layout."""


class ConfigError(EsdtError):
    """Bad run configuration (unknown key, wrong type, broken invariant)."""


class ProtocolError(EsdtError):
    """Malformed wire message."""


class TransportError(EsdtError):
    """Connection-level failure (worker lost, timeout, bad handshake)."""


class WorkerFailure(TransportError):
    """A worker kept failing after the one allowed retry."""


class EnvError(EsdtError):
    """Environment contract violation (e.g. step after done)."""
