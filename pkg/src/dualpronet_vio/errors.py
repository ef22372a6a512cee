"""Exception hierarchy.

Every error carries a short machine-readable ``kind`` and an exit code used by
the command line driver.
"""


class VioError(Exception):
    kind = "error"
    exit_code = 1


class ConfigError(VioError, ValueError):
    kind = "config"
    exit_code = 2


class DataError(VioError, ValueError):
    kind = "data"
    exit_code = 3


class PreintegrationError(VioError, ValueError):
    kind = "preintegration"
    exit_code = 4


class ModelError(VioError, ValueError):
    kind = "model"
    exit_code = 5


class ModelFormatError(ModelError):
    kind = "model-format"


class WarmupError(ModelError):
    """Raised when the inference buffer holds fewer samples than the model needs."""

    kind = "warmup"


class TrainingDivergedError(ModelError):
    kind = "training-diverged"


class EstimatorError(VioError, RuntimeError):
    kind = "estimator"
    exit_code = 6
