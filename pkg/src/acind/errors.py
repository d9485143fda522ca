"""Errors - exception hierarchy shared by the library and the command line"""

from typing import Optional


class AcindError(Exception):
    """Base class for every error raised by acind"""

    exit_code = 1


class ValidationError(AcindError):
    """Invalid input: mismatched shapes, bad parameters, bad flags"""

    exit_code = 2


class SegmentationError(ValidationError):
    """Thresholding cannot split the image into the requested classes"""


class FileFormatError(AcindError):
    """A file does not follow the documented binary or CSV layout"""

    exit_code = 1


class NumericalError(AcindError):
    """Training produced a non-finite loss"""

    exit_code = 3

    def __init__(self, epoch: int, last_finite_loss: Optional[float]):
        self.epoch = epoch
        self.last_finite_loss = last_finite_loss
        super().__init__(
            f"non-finite loss at epoch {epoch} (last finite loss: {last_finite_loss})"
        )
