"""
Exceptions raised by motionid.

Everything that is a problem with the *data* (as opposed to a programming error
or a bad command line) derives from MotionIDError, which lets the command line
map it to the "data error" exit code.
"""


class MotionIDError(Exception):
    """Base class for every data-level failure in motionid."""


class EmptySpan(MotionIDError, ValueError):
    """No sample overlaps the requested time span."""


class ZeroQuaternion(MotionIDError, ValueError):
    """A quaternion with (numerically) zero norm cannot represent a rotation."""


class SchemaError(MotionIDError, ValueError):
    """A CSV file does not start with the expected header."""


class RowError(MotionIDError, ValueError):
    """A single CSV row could not be parsed."""

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class OrderError(MotionIDError, ValueError):
    """Timestamps that must increase did not."""


class NoEvents(MotionIDError, ValueError):
    """The recording has no device events to anchor windows on."""


class TooFewAttempts(MotionIDError, ValueError):
    """Not enough verification attempts to form the six location clusters."""


class GridMismatch(MotionIDError, ValueError):
    """Two series that must share a time grid do not."""


class TooShort(MotionIDError, ValueError):
    """A series is too short for the requested transform."""


class CropTooLong(MotionIDError, ValueError):
    """The requested crop is longer than the tensor being cropped."""


class ShapeMismatch(MotionIDError, ValueError):
    """Array shapes are incompatible with the layer or loss."""


class BadTarget(MotionIDError, ValueError):
    """A class target is outside the classifier's range."""


class DegenerateBatch(MotionIDError, ValueError):
    """A contrastive batch contains a sample without any positive."""


class InsufficientData(MotionIDError, ValueError):
    """There is not enough labelled data to train or validate."""


class UserNotHeldOut(MotionIDError, ValueError):
    """Fine-tuning was asked for a user that is not in the final test set."""


class EmptyValidation(MotionIDError, ValueError):
    """Epoch selection has nothing to validate against."""


class InsufficientAttempts(MotionIDError, ValueError):
    """A user has fewer attempts than the final test protocol needs."""


class EmptySide(MotionIDError, ValueError):
    """A score set is missing genuine or impostor scores."""


class UnusableDirectory(MotionIDError, OSError):
    """A data or output directory is missing or lacks the needed permissions."""


class UsageError(Exception):
    """The command line or configuration asks for something that cannot run."""
