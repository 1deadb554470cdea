"""Exception types raised across the package."""


class QpatError(Exception):
    """Base class for all package errors."""


class InvalidOrderError(QpatError, ValueError):
    """Moment order is not a positive odd integer."""


class InvalidParameterError(QpatError, ValueError):
    pass


class InvalidCoefficientError(QpatError, ValueError):
    pass


class DegenerateCoefficientError(QpatError, ValueError):
    pass


class LemmaViolationError(QpatError):
    """A computational check of one of the matrix lemmas failed."""

    def __init__(self, lemma, message):
        super().__init__(f"{lemma}: {message}")
        self.lemma = lemma


class IdentityViolationError(LemmaViolationError):
    pass


class SolverError(QpatError, RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NonConvergenceError(SolverError):
    def __init__(self, message, residual=None, spectral_radius=None):
        super().__init__(message, residual)
        self.spectral_radius = spectral_radius


class LineSearchStall(QpatError, RuntimeError):
    """Line search found no acceptable step; carries the best iterate."""

    def __init__(self, message, x_best=None, trace=None):
        super().__init__(message)
        self.x_best = x_best
        self.trace = trace


class UnreliableReconstructionError(QpatError, RuntimeError):
    def __init__(self, message, flagged=None):
        super().__init__(message)
        self.flagged = flagged


class UndefinedRegionError(QpatError, ValueError):
    def __init__(self, message, nodes=None):
        super().__init__(message)
        self.nodes = nodes


class DegeneratePairError(QpatError, ValueError):
    pass


class UnidentifiableError(QpatError, RuntimeError):
    pass


class IllPosedError(QpatError, ValueError):
    pass
