"""Exception types shared across the package."""


class RejectedInput(ValueError):
    """Raised when an argument violates an operation's preconditions."""


class NumericFault(ArithmeticError):
    """Raised when training or evaluation produces non-finite values."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
