"""Error types shared across the package."""


class ParameterError(ValueError):
    """An operation's precondition on its parameters was violated."""


class ConfigError(ValueError):
    """A run configuration failed schema or invariant validation."""


class DenoiserError(RuntimeError):
    """A denoiser call failed.

    Carries sampling-step context when raised inside a sampling loop so that
    failures from remote backends can name the step that broke.
    """

    def __init__(self, message: str, *, sampling_step: int | None = None,
                 training_step: int | None = None):
        if sampling_step is not None:
            message = f"{message} (sampling step {sampling_step}, training step {training_step})"
        super().__init__(message)
        self.sampling_step = sampling_step
        self.training_step = training_step
