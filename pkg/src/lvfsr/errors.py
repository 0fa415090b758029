"""Exception types shared across the package."""


class LvfsrError(Exception):
    """Base class for all structured errors raised by this package."""


class ShapeError(LvfsrError):
    """Operands have incompatible or contract-violating shapes."""


class NonFiniteError(LvfsrError):
    """An operation produced NaN or Inf; names the producing operation."""

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        msg = f"non-finite values produced by operation '{op}'"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class GraphError(LvfsrError):
    """Invalid use of the recorded computation graph."""


class FormatError(LvfsrError):
    """A serialized file is malformed, truncated, or of the wrong version."""


class ConfigError(LvfsrError):
    """A configuration file or value violates its schema."""


class DataError(LvfsrError):
    """Dataset contents violate the documented layout or value ranges."""
