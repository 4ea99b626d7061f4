"""Scikit-learn style front end for a complete density-of-states run."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import ConfigurationError
from .hs import (
    DOS_FLOOR,
    BroadenedDos,
    SpectralObservable,
    TraceSeries,
    dos_from_traces,
    spectral_observable,
    trace_series_doubling,
    trace_series_sampling,
    tune_parameters,
)
from .models import HamiltonianSpec
from .oracles import (
    DEFAULT_ED_CAP,
    broadened_dos_exact,
    exact_diag,
    exact_spectral_observable,
    ising_characteristic_trace,
)
from .tebd import DEFAULT_ABORT_THRESHOLD
from .tensor import DEFAULT_CUTOFF
from .thermo import ThermalAverage, ThermoCurve, entropy, free_energy, thermal_average

__all__ = ["DosEstimator", "make_spec", "PATHWAYS"]

PATHWAYS = ("sampling", "doubling", "exact", "free_fermion")


def make_spec(model: str, n_sites: int, h: float = 1.0, U: float = 1.0, J: float = 1.0,
              sector="default") -> HamiltonianSpec:
    """Build a :class:`HamiltonianSpec` from plain values.

    ``sector`` accepts ``"even"``/``"odd"`` (Ising), ``"half"`` or an
    ``(N_up, N_dn)`` pair (Hubbard), ``"full"``/``None`` for the whole space
    and ``"default"`` for the even sector or half filling.
    """
    if model == "ising":
        if sector in ("default", "even"):
            return HamiltonianSpec.ising(n_sites, h, "even")
        if sector == "odd":
            return HamiltonianSpec.ising(n_sites, h, "odd")
        if sector in (None, "full"):
            return HamiltonianSpec.ising(n_sites, h, None)
        if isinstance(sector, (tuple, list)) and len(sector) == 1:
            return HamiltonianSpec("ising", n_sites, h=h, sector=tuple(sector))
        raise ConfigurationError(f"Ising sector must be even, odd or full, got {sector!r}")
    if model == "hubbard":
        if sector in ("default", "half"):
            if n_sites % 2:
                raise ConfigurationError("half filling needs an even number of sites")
            return HamiltonianSpec.hubbard(n_sites, U, J, "half")
        if sector in (None, "full"):
            return HamiltonianSpec.hubbard(n_sites, U, J, None)
        if isinstance(sector, (tuple, list)) and len(sector) == 2:
            return HamiltonianSpec.hubbard(n_sites, U, J, tuple(int(x) for x in sector))
        raise ConfigurationError(f"Hubbard sector must be 'half', 'full' or (N_up, N_dn), got {sector!r}")
    raise ConfigurationError(f"unknown model {model!r}")


class DosEstimator(BaseEstimator):
    """Broadened density of states of a lattice model.

    ``fit`` takes no data: the model is fully described by the constructor
    parameters.  After fitting, ``predict(energies)`` evaluates the broadened
    density, and the thermodynamic helpers reuse the fitted density.

    Parameters
    ----------
    model : {"ising", "hubbard"}
    n_sites : int
    h, U, J : float
        Model couplings (``h`` for Ising, ``U`` and ``J`` for Hubbard).
    sector : str, tuple or None
        See :func:`make_spec`.
    pathway : {"sampling", "doubling", "exact", "free_fermion"}
        Random symmetric MPS, doubled-space trace, dense diagonalization, or
        the Ising free-fermion trace.
    m : int
        Bond dimension cap for the tensor-network pathways.
    n_samples : int
        Number of random states for the sampling pathway.
    eta : float or None
        Broadening parameter; ``None`` means ``10 * n_sites**2``.
    chi : float
        Relative Gaussian tail neglected beyond the time grid.
    energy_points : int or None
        Size of the energy grid (default four times the number of steps).
    observables : tuple of str
        Observables resolved in energy alongside the density.
    seed : int
        Trajectory ``r`` uses seed ``seed + r``.
    """

    def __init__(self, model="ising", n_sites=4, h=1.0, U=1.0, J=1.0, sector="default", pathway="sampling",
                 m=16, n_samples=100, eta=None, chi=1e-10, energy_points=None, observables=(), seed=0,
                 batch_size=250, threads=1, cutoff=DEFAULT_CUTOFF, abort_threshold=DEFAULT_ABORT_THRESHOLD,
                 quadrature="auto", ed_cap=DEFAULT_ED_CAP):
        self.model = model
        self.n_sites = n_sites
        self.h = h
        self.U = U
        self.J = J
        self.sector = sector
        self.pathway = pathway
        self.m = m
        self.n_samples = n_samples
        self.eta = eta
        self.chi = chi
        self.energy_points = energy_points
        self.observables = observables
        self.seed = seed
        self.batch_size = batch_size
        self.threads = threads
        self.cutoff = cutoff
        self.abort_threshold = abort_threshold
        self.quadrature = quadrature
        self.ed_cap = ed_cap

    # ------------------------------------------------------------------
    def _resolved_eta(self) -> float:
        return 10.0 * self.n_sites ** 2 if self.eta is None else float(self.eta)

    def fit(self, X=None, y=None):
        if self.pathway not in PATHWAYS:
            raise ConfigurationError(f"pathway must be one of {PATHWAYS}, got {self.pathway!r}")
        spec = make_spec(self.model, self.n_sites, self.h, self.U, self.J, self.sector)
        params = tune_parameters(spec, self._resolved_eta(), self.chi, self.energy_points)
        names = tuple(self.observables)
        self.spectrum_ = None
        if self.pathway == "sampling":
            series = trace_series_sampling(spec, params, int(self.m), int(self.n_samples), names, seed=int(self.seed),
                                           batch_size=int(self.batch_size), threads=int(self.threads),
                                           cutoff=self.cutoff, abort_threshold=self.abort_threshold)
        elif self.pathway == "doubling":
            series = trace_series_doubling(spec, params, int(self.m), names, cutoff=self.cutoff,
                                           abort_threshold=self.abort_threshold)
        elif self.pathway == "free_fermion":
            if spec.model != "ising" or names:
                raise ConfigurationError("the free-fermion pathway covers the Ising density only")
            parity = None if spec.sector is None else ("even" if spec.sector == (0,) else "odd")
            series = TraceSeries(params.times, ising_characteristic_trace(spec.n_sites, spec.h, params.times, parity),
                                 spec.sector, spec.sector_dim, method="free-fermion", n_sites=spec.n_sites)
        else:
            self.spectrum_ = exact_diag(spec, names, max_dim=int(self.ed_cap))
            series = None
        self.spec_ = spec
        self.params_ = params
        self.series_ = series
        if series is None:
            self.dos_ = broadened_dos_exact(self.spectrum_, params.eta, params.energies)
        else:
            self.dos_ = dos_from_traces(series, params, self.quadrature)
        return self

    # ------------------------------------------------------------------
    def predict(self, X) -> np.ndarray:
        """Broadened density at the energies ``X`` (1-D, or a single column)."""
        check_is_fitted(self, "dos_")
        energies = np.asarray(X, float)
        if energies.ndim == 2 and energies.shape[1] == 1:
            energies = energies[:, 0]
        if energies.ndim != 1:
            raise ConfigurationError("energies must be one-dimensional")
        return self.dos_(energies)

    def score(self, X, y) -> float:
        """Negative integrated absolute deviation from reference densities ``y``,
        per sector dimension (higher is better)."""
        E = np.asarray(X, float).ravel()
        order = np.argsort(E)
        diff = np.abs(self.predict(E) - np.asarray(y, float).ravel())
        return -float(np.trapezoid(diff[order], E[order]) / self.dos_.sector_dim)

    @property
    def density_(self) -> BroadenedDos:
        check_is_fitted(self, "dos_")
        return self.dos_

    def thermodynamics(self, temperatures=None) -> ThermoCurve:
        """Free energy and entropy on ``temperatures`` (default log grid)."""
        check_is_fitted(self, "dos_")
        return entropy(free_energy(self.dos_, temperatures))

    def spectral_observable(self, name: str, floor: float = DOS_FLOOR) -> SpectralObservable:
        check_is_fitted(self, "dos_")
        if name not in tuple(self.observables):
            raise ConfigurationError(f"observable {name!r} was not requested before fitting")
        if self.series_ is not None:
            return spectral_observable(self.series_, self.dos_, self.params_, name, floor, self.quadrature)
        dens = self.dos_.density
        mask = dens < floor * dens.max()
        ratio = exact_spectral_observable(self.spectrum_, name, self.params_.eta, self.dos_.energies)
        vals = np.where(mask, np.nan, ratio)
        return SpectralObservable(self.dos_.energies, vals, mask, name, ratio * dens, floor)

    def thermal_average(self, name: str, temperatures, tolerance: float = 1e-4) -> ThermalAverage:
        return thermal_average(self.spectral_observable(name), self.dos_, temperatures, tolerance)
