"""Exception types shared across the package."""


class SubvarlapError(Exception):
    """Base class for library errors."""


class InvalidArgument(SubvarlapError, ValueError):
    pass


class ConjugateInfinite(InvalidArgument):
    """The conjugate exponent is infinite somewhere (p == 1)."""


class SobolevExponentUndefined(InvalidArgument):
    """p_plus >= Q / order, so the Sobolev exponent blows up."""


class UnsupportedOrder(InvalidArgument):
    pass


class InvalidExponentPair(InvalidArgument):
    """1/p - 1/q is not a constant in [0, 1)."""


class InvalidWeight(InvalidArgument):
    pass


class IncompleteFamily(SubvarlapError):
    """Some grid point is not covered by any ball of the family."""


class NormEstimateTooSmall(SubvarlapError):
    """Rubio de Francia terms stopped decreasing: the norm of M was underestimated."""


class InvalidState(SubvarlapError, FloatingPointError):
    pass


class GateFailure(SubvarlapError):
    """A precondition checked before an experiment does not hold."""

    def __init__(self, gate, detail=""):
        self.gate = gate
        self.detail = detail
        msg = f"gate failed: {gate}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DegenerateBallWarning(UserWarning):
    """A ball is too small to contain any cell center."""
