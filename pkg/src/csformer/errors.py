"""Exception types shared across the package."""


class CsformerError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(CsformerError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(CsformerError, RuntimeError):
    """A call violated a documented precondition."""


class ConfigError(CsformerError, ValueError):
    """Invalid model, ablation or training configuration."""


class NumericsError(CsformerError, ArithmeticError):
    """Non-finite values appeared in a computation."""


class InversionError(CsformerError, ArithmeticError):
    """A normalization cannot be inverted (zero affine scale)."""


class DataError(CsformerError, ValueError):
    """Malformed or insufficient input data."""


class IncompatibleError(DataError):
    """A checkpoint and a dataset do not fit together."""
