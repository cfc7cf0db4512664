"""Exception hierarchy shared by all impactsim modules."""

import numpy as np


class ImpactSimError(Exception):
    """Base class for errors raised by impactsim."""


class ConfigurationError(ImpactSimError, ValueError):
    """A parameter lies outside its documented range."""


class AdmissibilityError(ImpactSimError, ValueError):
    """Initial data violate the no-impact-at-start condition."""


class MetricDegeneracyError(ImpactSimError):
    def __init__(self, point, reason="mass matrix is not symmetric positive definite"):
        self.point = np.array(point, dtype=float)
        super().__init__(f"{reason} at u={self.point.tolist()}")


class DegenerateBoundaryError(ImpactSimError):
    def __init__(self, point):
        self.point = np.array(point, dtype=float)
        super().__init__(f"constraint gradient vanishes at u={self.point.tolist()}")


class ProjectionError(ImpactSimError):
    """Newton iteration for the nearest boundary point did not converge.

    ``iterate`` holds the last boundary candidate and ``residual`` the norm of
    the KKT (or shooting) residual at that candidate.
    """

    def __init__(self, message, iterate, residual):
        self.iterate = np.array(iterate, dtype=float)
        self.residual = float(residual)
        super().__init__(f"{message} (residual={self.residual:.3e})")


class StepFailure(ImpactSimError):
    """The implicit step could not be solved by fixed-point iteration."""

    def __init__(self, step, message, contraction=float("nan")):
        self.step = int(step)
        self.contraction = float(contraction)
        super().__init__(f"step {self.step}: {message}")
