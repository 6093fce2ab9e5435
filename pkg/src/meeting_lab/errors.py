"""Exception hierarchy.

Precondition failures derive from :class:`PreconditionError` (CLI exit code 1),
numerical failures from :class:`NumericalError` (CLI exit code 2).
"""


class MeetingLabError(Exception):
    pass


class PreconditionError(MeetingLabError, ValueError):
    pass


class NumericalError(MeetingLabError, ArithmeticError):
    pass


class KernelError(PreconditionError):
    pass


class NonRegular(KernelError):
    pass


class Disconnected(KernelError):
    pass


class LoopEdge(KernelError):
    pass


class UnknownFamily(PreconditionError):
    pass


class DimensionMismatch(PreconditionError):
    pass


class InsufficientTraces(PreconditionError):
    pass


class OutsideDomain(PreconditionError):
    pass


class PreconditionViolation(PreconditionError):
    """Raised when one or more hypotheses of the error bound fail."""

    def __init__(self, failures):
        self.failures = list(failures)
        super().__init__("; ".join(self.failures))


class RejectionBudgetExceeded(NumericalError):
    pass


class EigensolverFailure(NumericalError):
    pass


class SolveFailure(NumericalError):
    pass


class QuadratureNonconvergence(NumericalError):
    pass
