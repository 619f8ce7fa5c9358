"""Exception types raised across the package."""


class AttitudeHydroError(Exception):
    """Base class for all package errors."""


class AngleAtPi(AttitudeHydroError):
    """Rotation logarithm requested at (or numerically near) angle pi."""


class SingularFlux(AttitudeHydroError):
    """Flux moment too close to singular for a polar decomposition."""


class PoleSingularity(AttitudeHydroError):
    """Vector sits at the excluded north pole of the stereographic chart."""


class GridTooCoarse(AttitudeHydroError):
    pass


class SizeMismatch(AttitudeHydroError):
    pass


class DegenerateKernel(AttitudeHydroError):
    """Discrete Fokker-Planck operator has more than one null direction."""


class QuadratureMismatch(AttitudeHydroError):
    pass


class SolverSingular(AttitudeHydroError):
    pass


class DegenerateWeight(AttitudeHydroError):
    pass


class NonPositiveDensity(AttitudeHydroError):
    pass


class CflViolation(AttitudeHydroError):
    pass


class InconsistentRHS(AttitudeHydroError):
    """Corrector right-hand side has a component along the collision kernel."""


class ConfigError(AttitudeHydroError):
    pass


class SolverAbort(AttitudeHydroError):
    """A time-stepping run stopped early; ``time`` records where."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time
