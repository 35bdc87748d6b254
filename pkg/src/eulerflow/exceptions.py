"""Exception types raised by eulerflow."""


class EulerFlowError(Exception):
    """Base class for all package errors."""


class InvalidRotation(EulerFlowError, ValueError):
    """A matrix is not a proper rotation (orthonormal, det +1)."""


class InvalidParameter(EulerFlowError, ValueError):
    """A transform parameter lies outside its admissible set."""


class ConvergenceFailure(EulerFlowError, RuntimeError):
    """Numerical inversion could not bracket or reach its target."""


class ShapeMismatch(EulerFlowError, ValueError):
    pass


class StateMismatch(EulerFlowError, RuntimeError):
    """Backward pass requested without the matching forward cache."""


class NonFiniteLoss(EulerFlowError, FloatingPointError):
    def __init__(self, message, batch_index=None):
        super().__init__(message)
        self.batch_index = batch_index


class UnknownKind(EulerFlowError, ValueError):
    pass


class FormatVersionMismatch(EulerFlowError, ValueError):
    pass


class CorruptRecord(EulerFlowError, ValueError):
    pass
