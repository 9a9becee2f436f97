"""Exception types shared across the package."""


class CaspError(Exception):
    """Base class for all package errors."""


class ConfigError(CaspError, ValueError):
    """Invalid configuration or argument combination."""


class DataError(CaspError, ValueError):
    """Malformed or missing input data."""


class FeasibilityError(CaspError, ValueError):
    """A policy or feasible map violates the two-stage support restriction."""


class OffSupportError(CaspError, ZeroDivisionError):
    """A ratio needs a zero behavior propensity and no floor is active.

    ``triple`` is the ``(context, generator, item)`` that hit the zero.
    """

    def __init__(self, triple, message=None):
        self.triple = tuple(int(v) for v in triple)
        super().__init__(message or f"zero behavior propensity at (x, a1, a2) = {self.triple}")


class EmptyFeasibleSetError(CaspError, ValueError):
    """No library policy satisfies a burden constraint."""

    def __init__(self, b_max, min_policy, min_burden):
        self.b_max = b_max
        self.min_policy = min_policy
        self.min_burden = min_burden
        super().__init__(
            f"no policy has burden <= {b_max:g}; "
            f"smallest burden is {min_burden:g} ({min_policy})"
        )
