"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ParameterError(ValueError):
    """An argument is outside its valid range."""


class InputError(ValueError):
    """Input data violates a precondition (empty, bad marginals, ...)."""


class ContractViolationError(RuntimeError):
    """A caller-supplied callable broke its stated contract."""


class NumericalError(RuntimeError):
    """A numerical failure (NaN/Inf loss, divergence) aborted a computation."""
