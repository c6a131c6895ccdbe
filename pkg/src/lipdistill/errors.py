"""Exception hierarchy shared across the package."""


class LipDistillError(Exception):
    """Base class for all errors raised by lipdistill."""


class DimensionError(LipDistillError, ValueError):
    """Tensor shapes disagree along a named axis."""


class GeometryError(LipDistillError, ValueError):
    """Kernel/stride/padding combination yields an empty or invalid output."""


class DomainError(LipDistillError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NumericalError(LipDistillError, ArithmeticError):
    """A non-finite value appeared although every input was finite."""


class ConfigError(LipDistillError, ValueError):
    """A configuration file or spec is malformed or names something unknown."""


class LayerError(ConfigError):
    """Shape inference failed at a specific layer of a model spec."""

    def __init__(self, layer: str, message: str):
        super().__init__(f"layer {layer!r}: {message}")
        self.layer = layer
