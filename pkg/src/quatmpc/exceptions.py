"""Exception types raised across the package."""


class NearSingularChart(ValueError):
    """Inverse Cayley map requested for a rotation too close to 180 degrees."""


class DimensionMismatch(ValueError):
    """Control or contact arrays disagree with the robot model."""


class ReferenceInconsistent(ValueError):
    """Linearization reference is not a rollout of the discrete dynamics."""


class NonPositiveDefinite(RuntimeError):
    """Q_uu could not be made positive definite within the regularization cap."""


class RolloutDiverged(RuntimeError):
    """A forward rollout left the admissible state magnitude bound."""


class KinematicSingularity(ValueError):
    """ZYX Euler-rate map evaluated at gimbal lock."""


class PenetrationFault(RuntimeError):
    """A body point penetrated the environment beyond the allowed depth."""


class ConfigError(ValueError):
    """Malformed robot or scenario configuration.

    ``field`` carries the dotted path of the offending entry.
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
