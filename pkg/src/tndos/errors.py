"""Exception hierarchy shared by all modules."""


class TndosError(Exception):
    """Base class for library errors."""


class ConfigurationError(TndosError, ValueError):
    """Invalid or unsupported model / run configuration."""


class StructuralError(TndosError, ValueError):
    """Incompatible tensor indices, grids or shapes."""


class DegenerateInputError(TndosError, ValueError):
    """Input carries no weight (all-zero singular values, empty DOS, ...)."""


class SectorError(TndosError, ValueError):
    """Requested symmetry sector is empty or unreachable."""


class DomainError(TndosError, ValueError):
    """Argument outside the mathematical domain of a function."""


class CapacityError(TndosError, RuntimeError):
    """An exact oracle was asked for a problem beyond its configured size cap."""


class MaskedWeightError(TndosError, ValueError):
    """Masked energies carry non-negligible Boltzmann weight."""


class TrajectoryDivergenceError(TndosError, RuntimeError):
    """A TEBD trajectory exceeded the per-step truncation threshold.

    Parameters
    ----------
    step : int
        Time step at which the threshold was exceeded.
    weight : float
        Truncation weight discarded in that step.
    seed : int or None
        Seed of the offending trajectory, when known.
    """

    def __init__(self, step, weight, seed=None):
        self.step = int(step)
        self.weight = float(weight)
        self.seed = seed
        where = f" (seed {seed})" if seed is not None else ""
        super().__init__(
            f"truncation weight {weight:.3e} at step {step} exceeds the abort threshold{where}"
        )
