"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class SliceIndexError(IndexError):
    """A frontal-slice index is outside ``[0, n3)``."""


class DivisibilityError(ValueError):
    """The slice count ``p`` does not divide the feature width ``d``."""

    def __init__(self, d, p):
        self.d = d
        self.p = p
        super().__init__(f"p={p} does not divide d={d}")


class TransformError(ValueError):
    """A transform matrix is not invertible, not orthogonal, or unsupported."""


class NumericalError(ArithmeticError):
    """An iterative kernel failed to converge."""

    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message if residual is None else f"{message} (residual={residual:.3e})")


class ConfigError(ValueError):
    """A configuration is missing a field or holds an invalid value."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(message)


class TrainingError(RuntimeError):
    """Training produced non-finite values."""
