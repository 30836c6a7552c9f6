"""Exception types shared across modules."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class TrainingError(RuntimeError):
    """Training diverged or could not proceed."""


class ScheduleError(ValueError):
    """A discount or phase schedule left its numerically safe range."""


class CheckpointError(ValueError):
    """A checkpoint file is corrupt, truncated, or of an unsupported version."""
