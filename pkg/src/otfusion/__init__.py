"""otfusion: context-aware attention and optimal-transport fusion for
two-modality classification, with calibration metrics and the almost
stochastic order significance test."""

__version__ = "0.1.0"

from .errors import (ContractViolationError, DimensionError, InputError,
                     NumericalError, ParameterError)

__all__ = [
    "__version__",
    "ContractViolationError",
    "DimensionError",
    "InputError",
    "NumericalError",
    "ParameterError",
]
