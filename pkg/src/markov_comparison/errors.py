"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid model, scenario or argument combination."""


class GridError(ValueError):
    """A time that is not a knot of the evolution grid was requested."""


class ConvergenceError(RuntimeError):
    """Step control could not reach the requested tolerance."""
