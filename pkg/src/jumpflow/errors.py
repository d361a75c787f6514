"""Exception types raised across the package."""


class LabError(Exception):
    """Base class for all errors raised by jumpflow."""


class InvalidRadius(LabError, ValueError):
    pass


class InvalidCutoff(LabError, ValueError):
    pass


class ExponentOutOfRange(LabError, ValueError):
    pass


class CertificationError(LabError, ValueError):
    """A Levy measure failed the small-ball (A1) certification."""


class TimeOutOfRange(LabError, ValueError):
    pass


class DuplicateTimestamp(LabError, ValueError):
    pass


class JumpOutOfSupport(LabError, ValueError):
    pass


class LevelOutOfRange(LabError, ValueError):
    pass


class ParameterOutOfRange(LabError, ValueError):
    pass


class VariableSigma(LabError, TypeError):
    """The Fourier symbol only exists for a constant diffusion matrix."""


class NoConvergence(LabError, RuntimeError):
    def __init__(self, iterations, last_ratio, message=None):
        self.iterations = iterations
        self.last_ratio = last_ratio
        super().__init__(
            message
            or f"fixed point stalled after {iterations} iterations "
            f"(contraction ratio {last_ratio:.3g})"
        )


class LambdaExplosion(LabError, RuntimeError):
    pass


class PicardDivergence(LabError, RuntimeError):
    def __init__(self, gaps):
        self.gaps = list(gaps)
        super().__init__(f"Picard gaps increased 3 times in a row: {self.gaps[-4:]}")


class ConfigInvalid(LabError, ValueError):
    pass


class GridTooCoarse(LabError, ValueError):
    """The periodic grid cannot carry the jumps of the quadrature."""
