"""Exception types raised by the package.

Invalid arguments raise ``ValueError`` and unreadable files raise ``OSError``;
the classes below cover the remaining failure modes.
"""


class NumericalError(FloatingPointError):
    """A non-finite value appeared in an iterate or score evaluation."""

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss.

    ``checkpoint`` holds the last parameters that produced a finite loss.
    """

    def __init__(self, message, checkpoint=None, step=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.step = step


class ModelStateError(RuntimeError):
    """A score model was required but none was loaded."""
