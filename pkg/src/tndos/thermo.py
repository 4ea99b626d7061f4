"""Canonical thermodynamics from a broadened density of states."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigurationError, DegenerateInputError, MaskedWeightError, StructuralError
from .hs import BroadenedDos, SpectralObservable

__all__ = [
    "ThermoCurve",
    "ThermalAverage",
    "default_temperature_grid",
    "free_energy",
    "entropy",
    "thermal_average",
    "lower_support_edge",
    "THRESHOLD_FACTOR",
]

#: Temperatures at or below this multiple of ``eta**-0.5`` are flagged.
THRESHOLD_FACTOR = 3.0
#: The density counts as resolved once it exceeds this multiple of its largest negative excursion.
NOISE_FACTOR = 10.0


@dataclass
class ThermoCurve:
    temperatures: np.ndarray
    free_energy: np.ndarray
    T_lim: float
    clamped_mass: float = 0.0
    entropy: np.ndarray | None = None
    n_sites: int | None = None
    sector_dim: int | None = None

    def __post_init__(self):
        self.temperatures = np.asarray(self.temperatures, float)
        self.free_energy = np.asarray(self.free_energy, float)
        if np.any(np.diff(self.temperatures) <= 0):
            raise ConfigurationError("temperatures must be strictly increasing")

    @property
    def below_threshold(self) -> np.ndarray:
        """True where ``T <= 3 eta**-0.5``; results there are unreliable."""
        return self.temperatures <= THRESHOLD_FACTOR * self.T_lim

    def to_csv(self, path) -> None:
        L = self.n_sites or 1
        S = self.entropy if self.entropy is not None else np.full_like(self.free_energy, np.nan)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["T", "F", "F_per_site", "S", "S_per_site", "below_threshold"])
            for T, F, s, flag in zip(self.temperatures, self.free_energy, S, self.below_threshold):
                w.writerow([_fmt(T), _fmt(F), _fmt(F / L), _fmt(s), _fmt(s / L), int(flag)])


def _fmt(x) -> str:
    return format(float(x), ".17g")


def default_temperature_grid(dos: BroadenedDos, n_points: int = 200) -> np.ndarray:
    """Log-spaced grid from ``eta**-0.5`` to ``100 * max(1, |E|)``."""
    scale = max(1.0, float(np.max(np.abs(dos.energies))))
    lo = dos.T_lim
    hi = 100.0 * scale
    if hi <= lo:
        hi = 10.0 * lo
    return np.logspace(np.log10(lo), np.log10(hi), n_points)


def _trapezoid_weights(x: np.ndarray) -> np.ndarray:
    w = np.zeros_like(x)
    dx = np.diff(x)
    w[:-1] += dx / 2
    w[1:] += dx / 2
    return w


def lower_support_edge(dos: BroadenedDos) -> int:
    """Index of the first energy where the density rises above its noise level.

    The noise level is taken from the largest negative excursion of the
    density (quadrature or sampling noise; an exact Gaussian sum has none).
    Below the edge the density is indistinguishable from noise, which the
    Boltzmann factor would otherwise amplify exponentially.
    """
    D = dos.density
    noise = max(0.0, -float(D.min()))
    if noise == 0.0:
        return 0
    above = np.flatnonzero(D > NOISE_FACTOR * noise)
    if above.size == 0:
        raise DegenerateInputError("density never rises above its noise level")
    return int(above[0])


def free_energy(dos: BroadenedDos, temperatures=None) -> ThermoCurve:
    """``F(T) = -T ln int exp(-E/T) D(E) dE``.

    Negative densities are clamped to zero and energies below
    :func:`lower_support_edge` are left out.
    """
    if not dos.spectral_mass > 0:
        raise DegenerateInputError("density has no positive spectral mass")
    T = default_temperature_grid(dos) if temperatures is None else np.asarray(temperatures, float)
    if np.any(T <= 0):
        raise ConfigurationError("temperatures must be positive")
    E = dos.energies
    w = _trapezoid_weights(E)
    D = dos.density.copy()
    D[:lower_support_edge(dos)] = 0.0
    positive = np.maximum(D, 0.0)
    clamped = float(np.sum(w * np.maximum(-dos.density, 0.0)))
    b = w * positive
    if not np.any(b > 0):
        raise DegenerateInputError("density vanishes after clamping negative values")
    keep = b > 0
    log_b, E_kept = np.log(b[keep]), E[keep]
    F = np.array([-t * logsumexp(log_b - E_kept / t) for t in T])
    return ThermoCurve(T, F, dos.T_lim, clamped, n_sites=dos.n_sites, sector_dim=dos.sector_dim)


def entropy(curve: ThermoCurve) -> ThermoCurve:
    """``S = -dF/dT`` by second-order finite differences on the grid."""
    if len(curve.temperatures) < 3:
        raise ConfigurationError("entropy needs at least three temperatures")
    S = -np.gradient(curve.free_energy, curve.temperatures, edge_order=2)
    return replace(curve, entropy=S)


@dataclass
class ThermalAverage:
    temperatures: np.ndarray
    values: np.ndarray
    masked_weight: np.ndarray
    name: str = ""


def thermal_average(observable: SpectralObservable, dos: BroadenedDos, temperatures,
                    tolerance: float = 1e-4) -> ThermalAverage:
    """Canonical average ``int e^{-E/T} Theta(E) D(E) dE / int e^{-E/T} D(E) dE``.

    Masked energies and energies below :func:`lower_support_edge` are left
    out of both integrals.  The masked share of the
    Boltzmann weight (with ``|D|``) is reported and must stay below
    ``tolerance``; otherwise :class:`MaskedWeightError` is raised.
    """
    if not np.array_equal(observable.energies, dos.energies):
        raise StructuralError("observable and density must share one energy grid")
    T = np.asarray(temperatures, float)
    E = dos.energies
    w = _trapezoid_weights(E)
    edge = lower_support_edge(dos)
    keep = ~observable.mask
    keep[:edge] = False
    num_w = w * np.where(keep, observable.numerator, 0.0)
    den_w = w * np.where(keep, dos.density, 0.0)
    abs_w = w * np.abs(dos.density)
    abs_w[:edge] = 0.0
    vals = np.empty(len(T))
    masked = np.empty(len(T))
    for i, t in enumerate(T):
        x = -(E - E[keep].min()) / t
        boltz = np.exp(x - x.max())
        den = np.sum(den_w * boltz)
        vals[i] = np.sum(num_w * boltz) / den
        tot = np.sum(abs_w * boltz)
        masked[i] = np.sum(abs_w[~keep] * boltz[~keep]) / tot
    if np.any(masked > tolerance):
        bad = T[np.argmax(masked > tolerance)]
        raise MaskedWeightError(f"masked energies carry {masked.max():.2e} of the Boltzmann weight "
                                f"(first at T = {bad:.4g})")
    return ThermalAverage(T, vals, masked, observable.name)
