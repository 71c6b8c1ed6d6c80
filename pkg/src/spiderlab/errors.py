"""Exception hierarchy shared by all spiderlab modules."""


class SpiderlabError(Exception):
    """Base class for library errors."""


class ParameterError(SpiderlabError, ValueError):
    """Invalid family parameters, rule definitions or scenario values."""


class SizeError(SpiderlabError):
    """A ball or spider network exceeded the configured vertex cap."""


class RuleViolationError(SpiderlabError, ValueError):
    """A configuration is not admissible under the configuration rule."""


class NotFoundError(SpiderlabError, KeyError):
    """A vertex, site or configuration is absent from a network."""


class NumericalError(SpiderlabError):
    """Base class for failures of the numerical layer."""


class AbsorbingStateError(NumericalError):
    """An interior state has zero exit rate."""


class NonReversibleError(NumericalError):
    """Detailed balance fails around some cycle."""

    def __init__(self, message, cycle=None):
        super().__init__(message)
        self.cycle = cycle


class SolverError(NumericalError):
    """A linear solve failed, was singular, or left a large residual."""


class UnreachableError(NumericalError):
    """Some states cannot reach the target set."""

    def __init__(self, message, states=()):
        super().__init__(message)
        self.states = list(states)


class LumpabilityError(NumericalError):
    """A partition is not strongly lumpable."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class ReducibleError(NumericalError):
    """A chain that must be irreducible splits into several classes."""

    def __init__(self, message, components=()):
        super().__init__(message)
        self.components = list(components)
