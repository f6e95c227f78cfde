"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class IntegrationError(RuntimeError):
    """A time integration produced a non-finite state.

    ``state`` holds the last finite (S_Nor, S_Trop) pair and ``t`` the model
    time in years at which it was valid.
    """

    def __init__(self, message, state=None, t=None):
        super().__init__(message)
        self.state = state
        self.t = t


class NumericError(RuntimeError):
    """Non-finite values outside time integration (loss, logits, ...)."""
