"""Exception hierarchy shared by every qunet module."""


class QunetError(Exception):
    """Base class for all simulator errors."""


# Register and state construction

class DimensionMismatch(QunetError, ValueError):
    """Operand dimensions or site layouts do not agree."""


class NotNormalizable(QunetError, ValueError):
    """Amplitudes cannot be brought to unit norm within the accepted window."""


class DigitOutOfRange(QunetError, ValueError):
    """A basis digit is outside its site's level range."""


class IndexOutOfRange(QunetError, ValueError):
    """A flat basis index is outside the register."""


class CapacityExceeded(QunetError):
    """The register would exceed the configured maximum dimension."""


class BadDimension(QunetError, ValueError):
    """A level count is smaller than 2 or outside a command's range."""


# Operators and measurement

class NonUnitary(QunetError, ValueError):
    """An operator flagged unitary fails U^dagger U = I."""


class IncompleteProjectorFamily(QunetError, ValueError):
    """Projectors are not Hermitian, idempotent, orthogonal and complete."""


class ZeroProbabilityBranch(QunetError):
    """A forced measurement outcome has (numerically) zero probability."""


class BadOutcome(QunetError, ValueError):
    """A measurement outcome is out of range for its measurement."""


class BadSenderIndex(QunetError, ValueError):
    pass


class BadReceiverIndex(QunetError, ValueError):
    pass


# Protocol orchestration

class ConfigInvalid(QunetError, ValueError):
    """A protocol configuration or step plan is inconsistent."""


class InboxViolation(ConfigInvalid):
    """A party read a measurement result it has not received."""


class RoundRegression(QunetError):
    """A message was delivered with a round not after the last one."""


class TranscriptMismatch(QunetError):
    """A recorded transcript cannot be replayed against a configuration."""


# Verification

class BranchExplosion(QunetError):
    """Exhaustive enumeration would visit too many branches."""


class NoConsistentConvention(QunetError):
    """No candidate phase convention reproduces every branch."""


class AmbiguousConvention(QunetError):
    """More than one candidate phase convention reproduces every branch."""
