"""Exception hierarchy.

Every error raised deliberately by the package derives from ``CorrNoiseError``
so callers (and the CLI) can separate usage problems from bugs.
"""


class CorrNoiseError(Exception):
    pass


class ParameterError(CorrNoiseError, ValueError):
    """A scalar parameter lies outside its domain."""


class ShapeError(CorrNoiseError, ValueError):
    pass


class SizeError(CorrNoiseError, ValueError):
    """Materialization or enumeration would exceed a configured limit."""


class SingularStrategyError(CorrNoiseError, ValueError):
    pass


class DegenerateParameterError(CorrNoiseError, ValueError):
    """Decay parameters coincide (or nearly so)."""


class NonRealInverseError(CorrNoiseError, ValueError):
    pass


class SchemaError(CorrNoiseError, ValueError):
    pass


class EnumerationLimitError(SizeError):
    pass


class MonotonicityError(CorrNoiseError, ValueError):
    pass


class UnsupportedError(CorrNoiseError, ValueError):
    """The requested combination of strategy / schema / route is not defined."""


class IndefiniteSolutionError(CorrNoiseError, ArithmeticError):
    pass


class ExhaustedStreamError(CorrNoiseError, IndexError):
    pass


class ConfigurationError(CorrNoiseError, ValueError):
    pass
