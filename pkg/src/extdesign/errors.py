"""Exception hierarchy shared by all modules."""


class ExtDesignError(Exception):
    """Base class for errors raised by this package."""


class ModelError(ExtDesignError, ValueError):
    """Bad model input (dimension mismatch, invalid parameters)."""


class RegistryError(ExtDesignError, KeyError):
    """Unknown built-in model or functional name."""


class NumericError(ExtDesignError, ArithmeticError):
    """A computation produced non-finite values."""


class DesignError(ExtDesignError, ValueError):
    """Invalid design measure."""


class VacuousConstraint(ExtDesignError, ArithmeticError):
    """The denominator of a ratio vanishes, so the constraint carries no information."""


class LPError(ExtDesignError, RuntimeError):
    """Linear programming failure that should be impossible by construction."""


class ConfigError(ExtDesignError, ValueError):
    """Malformed run configuration."""
