"""Exception hierarchy shared by all modules."""


class BrownRayError(Exception):
    """Base class for every error raised by this package."""


class ConstraintViolation(BrownRayError):
    """The estimated moments cannot be produced by any Brownian-ray system.

    ``failed`` lists the names of the violated constraints, so callers can
    report exactly why the model was judged inapt for the data.
    """

    def __init__(self, failed, message=None):
        self.failed = tuple(failed)
        if message is None:
            message = "Brownian-ray model is not apt for this data: " + ", ".join(self.failed)
        super().__init__(message)


class SingularMatrix(BrownRayError):
    def __init__(self, message, schur=None):
        self.schur = schur
        super().__init__(message)


class InsufficientData(BrownRayError):
    pass


class PSDViolation(BrownRayError):
    pass


class InsufficientPaths(BrownRayError):
    def __init__(self, message, count=0):
        self.count = count
        super().__init__(message)


class NonConvergence(BrownRayError):
    """Fixed-point iteration hit its cap; ``result`` holds the last iterate."""

    def __init__(self, message, result=None):
        self.result = result
        super().__init__(message)


class NegativeTheta(BrownRayError):
    def __init__(self, message, value=None):
        self.value = value
        super().__init__(message)


class OutOfNoArbitrageBounds(BrownRayError):
    pass
