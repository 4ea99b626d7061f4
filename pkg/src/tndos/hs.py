"""Gaussian-broadened density of states from real-time traces.

The broadened density of states

    D(E) = sqrt(eta/pi) * sum_nu exp(-eta (E - E_nu)^2)

is the Fourier transform of the trace ``Tr exp(-i t H)`` damped by
``exp(-t^2 / (4 eta))``.  Only ``t >= 0`` is needed because the trace at
``-t`` is the complex conjugate of the trace at ``t``:

    D(E) = (1/pi) * int_0^inf exp(-t^2/(4 eta)) Re[exp(i t E) Tr exp(-i t H)] dt.

Traces are estimated either by averaging random-state overlaps inside one
symmetry sector (``trace_series_sampling``) or exactly through a doubled
system (``trace_series_doubling``).  The integral is evaluated with the
trapezoid rule on the evolution time grid.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.fft
import scipy.special

from .errors import ConfigurationError, DomainError, StructuralError
from .models import (
    HamiltonianSpec,
    estimate_spectral_width,
    lift_gates,
    lift_mpo,
    observable_mpo,
    trotter_gates,
)
from .mps import MatrixProductState, doubled_identity_mps, random_symmetric_mps
from .tebd import DEFAULT_ABORT_THRESHOLD, evolve_batch, evolve_trajectory
from .tensor import DEFAULT_CUTOFF

__all__ = [
    "erfc_inv",
    "HsParameters",
    "tune_parameters",
    "TraceSeries",
    "BroadenedDos",
    "SpectralObservable",
    "trace_series_sampling",
    "trace_series_doubling",
    "trace_series_from_record",
    "dos_from_traces",
    "spectral_observable",
    "spectral_weight_distribution",
    "tail_bound",
    "hs_quadrature",
    "DEFAULT_CHI",
    "DOS_FLOOR",
]

DEFAULT_CHI = 1e-10
#: Relative density below which energy-resolved observables are masked.
DOS_FLOOR = 1e-6
#: Energy-grid padding in units of the broadening width ``eta**-0.5``.
GRID_PADDING = 5.0


def erfc_inv(x: float) -> float:
    """Inverse complementary error function on ``(0, 2)``."""
    x = float(x)
    if not 0.0 < x < 2.0:
        raise DomainError(f"erfc_inv requires 0 < x < 2, got {x}")
    return float(scipy.special.erfcinv(x))


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HsParameters:
    """Time and energy discretization of one transform.

    ``n_steps`` is the number of Trotter steps; the time grid has
    ``n_steps + 1`` points ``k * dt`` and ends at or beyond ``t_bar``.
    """

    eta: float
    chi: float
    dt: float
    t_bar: float
    n_steps: int
    e_min: float
    e_max: float
    n_energies: int

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigurationError("eta must be positive")
        if not 0 < self.chi < 1:
            raise ConfigurationError("chi must lie in (0, 1)")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if self.n_steps < 1 or self.n_steps * self.dt < self.t_bar * (1 - 1e-12):
            raise ConfigurationError("n_steps * dt must reach t_bar")
        if not self.e_max > self.e_min or self.n_energies < 2:
            raise ConfigurationError("energy grid needs e_max > e_min and at least two points")

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    @property
    def energies(self) -> np.ndarray:
        return np.linspace(self.e_min, self.e_max, self.n_energies)

    @property
    def T_lim(self) -> float:
        return self.eta ** -0.5

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def tune_parameters(spec: HamiltonianSpec, eta: float, chi: float = DEFAULT_CHI, energy_points: int | None = None,
                    width: tuple | None = None, dt: float | None = None, tight: bool = False) -> HsParameters:
    """Choose ``dt``, the integration cutoff and the energy grid.

    ``dt`` is the inverse of the spectral-width bound, the cutoff
    ``t_bar = sqrt(4 eta) erfc_inv(chi)`` makes the neglected Gaussian tail
    of relative size ``chi``, and the energy grid spans the bound padded by
    ``5 / sqrt(eta)`` with ``4 N`` points unless ``energy_points`` is given.
    """
    if not eta > 0:
        raise ConfigurationError("eta must be positive")
    if not 0 < chi < 1:
        raise ConfigurationError("chi must lie in (0, 1)")
    lo, hi = width if width is not None else estimate_spectral_width(spec, tight=tight)
    delta = hi - lo
    if not delta > 0:
        raise ConfigurationError("spectral width bound must be positive")
    dt = 1.0 / delta if dt is None else float(dt)
    t_bar = math.sqrt(4 * eta) * erfc_inv(chi)
    n = max(1, math.ceil(t_bar / dt - 1e-9))
    pad = GRID_PADDING / math.sqrt(eta)
    n_e = 4 * n if energy_points is None else int(energy_points)
    return HsParameters(float(eta), float(chi), dt, t_bar, n, lo - pad, hi + pad, n_e)


def tail_bound(params: HsParameters, sector_dim: float) -> float:
    """Bound on the density contribution neglected beyond the time grid.

    Uses ``|Tr| <= sector_dim``:
    ``(dim/pi) int_{T}^inf exp(-t^2/4eta) dt = dim sqrt(eta/pi) erfc(T / sqrt(4 eta))``.
    """
    T = params.n_steps * params.dt
    return float(sector_dim * math.sqrt(params.eta / math.pi) * math.erfc(T / math.sqrt(4 * params.eta)))


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------

@dataclass
class TraceSeries:
    """Estimated ``Tr[exp(-i t H)]`` (and ``Tr[Theta exp(-i t H)]``) on a time grid.

    ``samples`` keeps the per-trajectory overlaps (shape ``(n_samples, n_times)``)
    when the series comes from random-state sampling.
    """

    times: np.ndarray
    values: np.ndarray
    sector: tuple | None
    sector_dim: int
    n_samples: int = 1
    per_sample_spread: np.ndarray | None = None
    observable_values: dict = field(default_factory=dict)
    samples: np.ndarray | None = field(default=None, repr=False)
    observable_samples: dict = field(default_factory=dict, repr=False)
    seeds: tuple = ()
    method: str = ""
    n_sites: int | None = None
    max_truncation: float = 0.0

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        self.values = np.asarray(self.values, complex)
        if self.times.shape != self.values.shape or self.times.ndim != 1:
            raise StructuralError("times and values must be 1-D arrays of equal length")
        if self.per_sample_spread is None:
            self.per_sample_spread = np.zeros(len(self.times))

    def scaled(self, factor: float) -> "TraceSeries":
        """Series multiplied by a real factor (used for linear combinations)."""
        return replace(self, values=self.values * factor,
                       observable_values={k: v * factor for k, v in self.observable_values.items()},
                       samples=None, observable_samples={})

    def __add__(self, other: "TraceSeries") -> "TraceSeries":
        if not np.array_equal(self.times, other.times):
            raise StructuralError("series live on different time grids")
        obs = {k: self.observable_values[k] + other.observable_values[k]
               for k in self.observable_values.keys() & other.observable_values.keys()}
        return replace(self, values=self.values + other.values, observable_values=obs, samples=None,
                       observable_samples={}, sector=None if self.sector != other.sector else self.sector,
                       sector_dim=self.sector_dim + other.sector_dim if self.sector != other.sector
                       else self.sector_dim)


def _sampling_batch(args):
    (spec, params, m, seeds, obs_names, cutoff, abort) = args
    gates = trotter_gates(spec, params.dt)
    states = [random_symmetric_mps(spec.n_sites, spec.physical_index, m, spec.charge, spec.symmetry, seed=s)
              for s in seeds]
    ops = [observable_mpo(n, spec) for n in obs_names]
    recs = evolve_batch(states, gates, params.n_steps, m, ops, cutoff=cutoff, abort_threshold=abort,
                        seeds=seeds)
    ov = np.stack([r.overlaps for r in recs])
    obs = {n: np.stack([r.observable_elements[n] for r in recs]) for n in obs_names}
    trunc = max(float(r.truncation_profile[-1]) for r in recs)
    return ov, obs, trunc


def trace_series_sampling(spec: HamiltonianSpec, params: HsParameters, m: int, n_samples: int,
                          observables=(), seed: int = 0, batch_size: int = 250, threads: int = 1,
                          cutoff: float = DEFAULT_CUTOFF,
                          abort_threshold: float = DEFAULT_ABORT_THRESHOLD) -> TraceSeries:
    """Sector trace from ``n_samples`` random MPS evolved with bond cap ``m``.

    Trajectory ``R`` is seeded with ``seed + R``.  Trajectories are evolved in
    lockstep batches of ``batch_size``; ``threads > 1`` distributes batches
    over worker processes.  Results depend on ``(seed, n_samples, batch_size)``
    only, not on ``threads``.
    """
    if n_samples < 1:
        raise ConfigurationError("n_samples must be >= 1")
    if m < 1:
        raise ConfigurationError("bond dimension m must be >= 1")
    if batch_size < 1:
        raise ConfigurationError("batch_size must be >= 1")
    obs_names = tuple(observables)
    seeds = [seed + r for r in range(n_samples)]
    chunks = [seeds[i:i + batch_size] for i in range(0, n_samples, batch_size)]
    jobs = [(spec, params, m, c, obs_names, cutoff, abort_threshold) for c in chunks]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_sampling_batch, jobs))
    else:
        results = [_sampling_batch(j) for j in jobs]
    samples = np.concatenate([r[0] for r in results], axis=0)
    obs_samples = {n: np.concatenate([r[1][n] for r in results], axis=0) for n in obs_names}
    dim = spec.sector_dim
    return TraceSeries(
        times=params.times,
        values=dim * samples.mean(axis=0),
        sector=spec.sector,
        sector_dim=dim,
        n_samples=n_samples,
        per_sample_spread=_stderr(samples, dim),
        observable_values={n: dim * v.mean(axis=0) for n, v in obs_samples.items()},
        samples=samples,
        observable_samples=obs_samples,
        seeds=tuple(seeds),
        method="sampling",
        n_sites=spec.n_sites,
        max_truncation=max(r[2] for r in results),
    )


def _stderr(samples: np.ndarray, dim: float) -> np.ndarray:
    n = samples.shape[0]
    if n < 2:
        return np.zeros(samples.shape[1])
    return dim * np.sqrt(np.var(samples.real, axis=0, ddof=1) + np.var(samples.imag, axis=0, ddof=1)) / math.sqrt(n)


def trace_series_doubling(spec: HamiltonianSpec, params: HsParameters, m: int, observables=(),
                          cutoff: float = DEFAULT_CUTOFF,
                          abort_threshold: float = DEFAULT_ABORT_THRESHOLD) -> TraceSeries:
    """Trace from the doubled maximally entangled state.

    Gates act on the system half of each merged site only, so the overlap
    with the initial state equals ``Tr[exp(-i t H)] / d**L``.  The series has
    no statistical error.  On the full space (``spec.sector is None``) any
    observable may be attached.  An Ising parity sector is resolved with the
    projector ``(1 +- P)/2`` by also tracing the parity string; observables
    are not available in that mode.
    """
    full = replace(spec, sector=None)
    L, d = spec.n_sites, spec.d
    names = list(observables)
    if spec.sector is not None:
        if spec.model != "ising":
            raise ConfigurationError("the doubling pathway resolves only Ising parity sectors; "
                                     "use the full space for this model")
        if names:
            raise ConfigurationError("observables with the doubling pathway require the full space")
        names = ["parity"]
    gates = lift_gates(trotter_gates(full, params.dt))
    psi = doubled_identity_mps(L, d)
    t0 = psi.tensors[0]
    psi.tensors[0] = t0 / math.sqrt(float(d) ** L)
    psi.center = 0
    ops = [lift_mpo(observable_mpo(n, full)) for n in names]
    rec = evolve_trajectory(psi, gates, params.n_steps, m, ops, cutoff=cutoff, abort_threshold=abort_threshold)
    dim = d ** L
    values = dim * rec.overlaps
    obs = {n: dim * rec.observable_elements[n] for n in names}
    sector, sector_dim = None, dim
    if spec.sector is not None:
        sign = 1.0 if spec.sector == (0,) else -1.0
        values = 0.5 * (values + sign * obs.pop("parity"))
        sector, sector_dim = spec.sector, spec.sector_dim
    return TraceSeries(
        times=params.times,
        values=values,
        sector=sector,
        sector_dim=sector_dim,
        n_samples=1,
        observable_values=obs,
        method="doubling",
        n_sites=L,
        max_truncation=float(rec.truncation_profile[-1]),
    )


def trace_series_from_record(record, sector_dim: int = 1, sector=None, n_sites=None) -> TraceSeries:
    """Wrap one trajectory as a series (no sector prefactor by default)."""
    return TraceSeries(times=record.times, values=sector_dim * record.overlaps, sector=sector,
                       sector_dim=sector_dim,
                       observable_values={k: sector_dim * v for k, v in record.observable_elements.items()},
                       method="trajectory", n_sites=n_sites,
                       max_truncation=float(record.truncation_profile[-1]))


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

def _weights(times: np.ndarray, eta: float) -> np.ndarray:
    dt = times[1] - times[0]
    w = np.full(len(times), dt)
    w[0] *= 0.5
    return w * np.exp(-times ** 2 / (4 * eta)) / np.pi


def _chirp(n, theta: float) -> np.ndarray:
    # exp(i theta n^2 / 2) with n^2 formed exactly and the phase reduced before exponentiation
    n = np.asarray(n, dtype=float)
    return np.exp(1j * np.fmod(0.5 * theta * (n * n), 2 * np.pi))


def _chirp_z(x: np.ndarray, dt: float, e0: float, de: float, m: int) -> np.ndarray:
    """``sum_k x_k exp(i k dt (e0 + j de))`` for ``j < m`` via Bluestein's FFT convolution.

    scipy.signal.czt builds its chirps by complex powers, which loses about
    1e-10 relative accuracy on long grids; the phases here are reduced
    explicitly instead.
    """
    n = x.shape[-1]
    theta = dt * de
    k = np.arange(n)
    y = x * np.exp(1j * dt * e0 * k) * _chirp(k, theta)
    size = scipy.fft.next_fast_len(n + m - 1)
    h = np.conj(_chirp(np.arange(-(n - 1), m), theta))
    kernel = np.zeros(size, complex)
    kernel[:m] = h[n - 1:]
    if n > 1:
        kernel[size - (n - 1):] = h[: n - 1]
    padded = np.zeros(x.shape[:-1] + (size,), complex)
    padded[..., :n] = y
    conv = scipy.fft.ifft(scipy.fft.fft(padded, axis=-1) * scipy.fft.fft(kernel), axis=-1)[..., :m]
    return conv * _chirp(np.arange(m), theta)


def _uniform(x: np.ndarray) -> bool:
    if len(x) < 3:
        return True
    step = (x[-1] - x[0]) / (len(x) - 1)
    return bool(np.allclose(np.diff(x), step, rtol=1e-9, atol=0))


def hs_quadrature(times, series, energies, eta: float, method: str = "auto") -> np.ndarray:
    """``(1/pi) sum_k w_k exp(-t_k^2/4eta) Re[exp(i t_k E) series_k]`` for every ``E``.

    ``series`` may carry leading axes (e.g. one row per sample).  ``method`` is
    ``"direct"`` (explicit phase matrix), ``"czt"`` (chirp-z transform through FFTs,
    needs uniform grids) or ``"auto"``.
    """
    times = np.asarray(times, float)
    energies = np.asarray(energies, float)
    series = np.asarray(series, complex)
    if times.ndim != 1 or len(times) < 2 or series.shape[-1] != len(times):
        raise StructuralError("series must match a time grid of at least two points")
    if not _uniform(times) or abs(times[0]) > 0:
        raise StructuralError("the quadrature needs a uniform time grid starting at t = 0")
    coeff = series * _weights(times, eta)
    if method == "auto":
        big = len(times) * len(energies) > 4_000_000
        method = "czt" if big and _uniform(energies) and len(energies) > 1 else "direct"
    if method == "czt":
        if not _uniform(energies) or len(energies) < 2:
            raise StructuralError("chirp-z evaluation needs a uniform energy grid")
        dt = times[1] - times[0]
        de = (energies[-1] - energies[0]) / (len(energies) - 1)
        return _chirp_z(coeff, dt, energies[0], de, len(energies)).real
    if method != "direct":
        raise ConfigurationError(f"unknown quadrature method {method!r}")
    out = np.empty(series.shape[:-1] + (len(energies),))
    chunk = max(1, 2_000_000 // len(times))
    for s in range(0, len(energies), chunk):
        e = energies[s:s + chunk]
        phase = np.exp(1j * np.outer(times, e))
        out[..., s:s + chunk] = (coeff @ phase).real
    return out


@dataclass
class BroadenedDos:
    """Broadened density of states on an energy grid.

    ``std_error`` is the standard error of the mean over sampled trajectories
    (``None`` for deterministic inputs).  ``evaluator`` re-evaluates the
    density at arbitrary energies with the same quadrature.
    """

    energies: np.ndarray
    density: np.ndarray
    eta: float
    sector: tuple | None
    sector_dim: int
    n_sites: int | None = None
    spectral_mass: float = float("nan")
    negative_mass: float = 0.0
    std_error: np.ndarray | None = None
    mass_std_error: float | None = None
    evaluator: Callable | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.energies = np.asarray(self.energies, float)
        self.density = np.asarray(self.density, float)
        if self.energies.shape != self.density.shape:
            raise StructuralError("energies and density must have equal shape")
        if np.isnan(self.spectral_mass):
            self.spectral_mass = float(np.trapezoid(self.density, self.energies))
            self.negative_mass = float(np.trapezoid(np.minimum(self.density, 0.0), self.energies))

    @property
    def T_lim(self) -> float:
        return self.eta ** -0.5

    def __call__(self, energies) -> np.ndarray:
        if self.evaluator is None:
            raise StructuralError("this density has no evaluator; use the stored grid")
        return self.evaluator(np.asarray(energies, float))


def dos_from_traces(series: TraceSeries, params: HsParameters, method: str = "auto",
                    energies=None) -> BroadenedDos:
    """Broadened density from a trace series by trapezoidal quadrature."""
    if len(series.times) != params.n_steps + 1 or not np.allclose(series.times, params.times, rtol=1e-12,
                                                                  atol=1e-12):
        raise StructuralError("series time grid does not match the parameters")
    grid = params.energies if energies is None else np.asarray(energies, float)
    eta = params.eta
    density = hs_quadrature(series.times, series.values, grid, eta, method)
    stderr = mass_se = None
    if series.samples is not None and series.n_samples > 1:
        per = hs_quadrature(series.times, series.samples, grid, eta, method) * series.sector_dim
        n = series.n_samples
        stderr = per.std(axis=0, ddof=1) / math.sqrt(n)
        masses = np.trapezoid(per, grid, axis=-1)
        mass_se = float(masses.std(ddof=1) / math.sqrt(n))

    times, values = series.times, series.values

    def evaluator(e):
        return hs_quadrature(times, values, e, eta, "direct")

    return BroadenedDos(grid, density, eta, series.sector, series.sector_dim, series.n_sites,
                        std_error=stderr, mass_std_error=mass_se, evaluator=evaluator)


@dataclass
class SpectralObservable:
    """Energy-resolved observable; ``values`` is NaN where ``mask`` is set."""

    energies: np.ndarray
    values: np.ndarray
    mask: np.ndarray
    name: str
    numerator: np.ndarray
    floor: float


def spectral_observable(series: TraceSeries, dos: BroadenedDos, params: HsParameters, name: str,
                        floor: float = DOS_FLOOR, method: str = "auto") -> SpectralObservable:
    """Ratio of the broadened ``Tr[Theta exp(-iHt)]`` transform to the density.

    Points where the density falls below ``floor * max(density)`` are masked.
    """
    if name not in series.observable_values:
        raise ConfigurationError(f"series has no observable {name!r}")
    num = hs_quadrature(series.times, series.observable_values[name], dos.energies, params.eta, method)
    mask = dos.density < floor * dos.density.max()
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.where(mask, np.nan, num / np.where(mask, 1.0, dos.density))
    return SpectralObservable(dos.energies, vals, mask, name, num, floor)


def spectral_weight_distribution(psi: MatrixProductState, spec: HamiltonianSpec, params: HsParameters,
                                 m: int, cutoff: float = DEFAULT_CUTOFF) -> BroadenedDos:
    """Energy distribution ``p(E)`` of a normalized state, broadened like the density.

    Built from the single trajectory ``<psi|psi(t)>`` without any sector
    prefactor, so it integrates to one.
    """
    gates = trotter_gates(spec, params.dt)
    rec = evolve_trajectory(psi, gates, params.n_steps, m, cutoff=cutoff)
    series = trace_series_from_record(rec, 1, psi.charge or None, spec.n_sites)
    return dos_from_traces(series, params)
