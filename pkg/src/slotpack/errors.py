"""Exception hierarchy shared by every slotpack module."""


class SlotpackError(Exception):
    """Base class for all library errors."""


class ShapeMismatch(SlotpackError, ValueError):
    pass


class LevelMismatch(SlotpackError):
    """Two ciphertexts combined at different multiplicative levels."""


class DepthExhausted(SlotpackError):
    """A multiplication was requested on a level-0 ciphertext."""


class TargetAboveCurrent(SlotpackError):
    pass


class MissingWeight(SlotpackError, KeyError):
    pass


class NonSquareCapacity(SlotpackError, ValueError):
    pass


class IndivisibleGeometry(SlotpackError, ValueError):
    pass


class OutOfRange(SlotpackError, IndexError):
    pass


class InvalidGeometry(SlotpackError, ValueError):
    pass


class PlanningError(SlotpackError):
    pass


class InfeasiblePlan(PlanningError):
    """Some layer needs more depth than a freshly bootstrapped ciphertext has."""


class FormatError(SlotpackError, ValueError):
    """Malformed tensor, weight blob or manifest file."""
