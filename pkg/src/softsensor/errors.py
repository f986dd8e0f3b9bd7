"""Exception types shared across the package."""


class SoftSensorError(Exception):
    """Base class for all errors raised by softsensor."""


class ConfigError(SoftSensorError, ValueError):
    """Invalid configuration value, missing key, or inconsistent dimensions."""


class IntegrationDiverged(SoftSensorError, ArithmeticError):
    """The simulated plant produced a non-finite state."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"integration diverged at step {step}")


class ObserverDiverged(SoftSensorError, ArithmeticError):
    """The observer estimate left the finite range allowed by the divergence guard."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"observer diverged at step {step}")


class SingularPointError(SoftSensorError, ValueError):
    """A Jacobian was requested on a set where the model is not differentiable."""

    def __init__(self, coordinates, message=None):
        self.coordinates = tuple(coordinates)
        pairs = ", ".join(f"x{i + 1}=0" if i == j else f"x{i + 1}=x{j + 1}" for i, j in self.coordinates)
        super().__init__(message or f"model is not differentiable at {pairs}")


class TrainingFailed(SoftSensorError, RuntimeError):
    """Every training epoch diverged; carries the history gathered so far."""

    def __init__(self, epoch, history, message=None):
        self.epoch = epoch
        self.history = list(history)
        last = self.history[-1].total if self.history else float("nan")
        super().__init__(message or f"training failed at epoch {epoch} (last loss {last!r})")
