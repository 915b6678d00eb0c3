"""Exception types raised across the package."""


class InvalidArgument(ValueError):
    """Bad shapes, out-of-range scalars and similar caller errors."""


class FormatError(ValueError):
    """A file on disk does not match the expected binary or image layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DivergenceError(ArithmeticError):
    """A non-finite value appeared during iteration."""

    def __init__(self, message, index=None, step=None):
        parts = [message]
        if step is not None:
            parts.append(f"continuation step {step}")
        if index is not None:
            parts.append(f"iteration {index}")
        super().__init__(", ".join(parts))
        self.index = index
        self.step = step


class TrainingError(RuntimeError):
    def __init__(self, message, epoch=None):
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)
        self.epoch = epoch
