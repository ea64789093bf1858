class ByzAdmmError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(ByzAdmmError, ValueError):
    """Invalid configuration: bad dimension, missing key, violated constraint."""


class ParseError(ByzAdmmError, ValueError):
    """Malformed dataset file."""

    def __init__(self, message, *, offset=None, line=None):
        where = ""
        if offset is not None:
            where = f" (byte offset {offset})"
        elif line is not None:
            where = f" (line {line})"
        super().__init__(message + where)
        self.offset = offset
        self.line = line


class SolverError(ByzAdmmError, RuntimeError):
    def __init__(self, message, *, gradient_norm):
        super().__init__(f"{message}; final gradient norm {gradient_norm:.3e}")
        self.gradient_norm = gradient_norm


class ProtocolError(ByzAdmmError, RuntimeError):
    """A synchronous round was missing a worker message."""


class DivergenceError(ByzAdmmError, RuntimeError):
    """Non-finite state during a run."""

    def __init__(self, k, worker, what="state"):
        who = "master" if worker is None else f"worker {worker}"
        super().__init__(f"non-finite {what} at round {k} ({who})")
        self.k = k
        self.worker = worker


class InvariantError(ByzAdmmError, AssertionError):
    """A per-round runtime invariant (dual box, influence bound) was violated."""
