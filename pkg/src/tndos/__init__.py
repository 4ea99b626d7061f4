"""Broadened many-body density of states and canonical thermodynamics from
real-time tensor-network evolution.

The functional layers are importable on their own (``tndos.tensor``,
``tndos.mps``, ``tndos.models``, ``tndos.tebd``, ``tndos.hs``,
``tndos.thermo``, ``tndos.oracles``); :class:`DosEstimator` wraps a complete
run behind a scikit-learn style interface and ``tndos.cli`` drives batch runs
from configuration files.
"""

__version__ = "0.1.0"

from .errors import (
    CapacityError,
    ConfigurationError,
    DegenerateInputError,
    DomainError,
    MaskedWeightError,
    SectorError,
    StructuralError,
    TndosError,
    TrajectoryDivergenceError,
)
from .estimator import DosEstimator
from .hs import (
    BroadenedDos,
    HsParameters,
    TraceSeries,
    dos_from_traces,
    erfc_inv,
    spectral_observable,
    trace_series_doubling,
    trace_series_sampling,
    tune_parameters,
)
from .models import HamiltonianSpec, trotter_gates
from .thermo import entropy, free_energy, thermal_average

__all__ = [
    "__version__",
    "DosEstimator",
    "HamiltonianSpec",
    "HsParameters",
    "TraceSeries",
    "BroadenedDos",
    "tune_parameters",
    "trace_series_sampling",
    "trace_series_doubling",
    "dos_from_traces",
    "spectral_observable",
    "erfc_inv",
    "trotter_gates",
    "free_energy",
    "entropy",
    "thermal_average",
    "TndosError",
    "ConfigurationError",
    "StructuralError",
    "DegenerateInputError",
    "SectorError",
    "DomainError",
    "CapacityError",
    "MaskedWeightError",
    "TrajectoryDivergenceError",
]
