import numpy as np


class StateSpaceError(ValueError):
    """A point lies outside the state interval of the diffusion."""


class QuadratureError(RuntimeError):
    """Numerical integration against the stationary law failed."""


class MissingMomentsError(NotImplementedError):
    """The model does not provide the closed-form conditional moments required."""


class SingularWeightsError(np.linalg.LinAlgError):
    """A weight matrix or conditional covariance is singular."""


class ConfigurationWarning(UserWarning):
    """The model configuration violates an assumption that is not verified."""


class SingularJacobian(ArithmeticError):
    pass


class BoundsEscape(RuntimeError):
    pass


class NoConvergence(RuntimeError):
    """No start produced a root of the estimating equation within tolerance."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []
