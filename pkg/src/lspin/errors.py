"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration, split or parameter value."""


class SpecError(ValueError):
    """Network specification that cannot be built."""


class DegenerateDataError(ValueError):
    """Data on which a quantity is undefined (no events, no comparable pairs, ...)."""


class UndefinedMetricError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    def __init__(self, epoch: int, message: str = "loss became non-finite"):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch
