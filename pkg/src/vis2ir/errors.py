"""Exception hierarchy shared by every vis2ir module."""


class Vis2IRError(Exception):
    pass


class ConfigError(Vis2IRError, ValueError):
    """Invalid spec or config value. ``field`` names the offending key."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class PreconditionError(Vis2IRError, ValueError):
    pass


class ConsistencyError(Vis2IRError, RuntimeError):
    """Internal shape contract violated (usually a padding or spec bug)."""


class DatasetError(Vis2IRError):
    pass


class CheckpointError(Vis2IRError):
    pass


class TrainingAborted(Vis2IRError, RuntimeError):
    def __init__(self, message, snapshot=None):
        self.snapshot = snapshot
        super().__init__(message)
