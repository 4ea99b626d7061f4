"""Reference results: exact diagonalization, free-fermion traces, error metrics.

Everything here is built independently of the tensor-network code path:
Hamiltonians are assembled from Kronecker products (Jordan-Wigner strings for
fermions) and the transverse-field Ising trace is obtained from the
single-particle spectrum of its Majorana form.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import CapacityError, ConfigurationError, StructuralError
from .hs import (
    BroadenedDos,
    HsParameters,
    TraceSeries,
    dos_from_traces,
    hs_quadrature,
    trace_series_sampling,
    tune_parameters,
)
from .models import HamiltonianSpec
from .thermo import ThermoCurve

__all__ = [
    "DEFAULT_ED_CAP",
    "embed_operator",
    "full_hamiltonian",
    "full_observable",
    "sector_basis",
    "sector_hamiltonian",
    "ExactSpectrum",
    "exact_diag",
    "exact_trace",
    "exact_trace_series",
    "ising_single_particle",
    "ising_characteristic_trace",
    "broadened_dos_exact",
    "exact_spectral_observable",
    "exact_free_energy",
    "exact_entropy",
    "exact_thermal_average",
    "ErrorReport",
    "error_metrics",
    "ResolutionEstimate",
    "resolution_threshold_estimate",
    "reference_dos",
    "SweepCell",
    "resolution_sweep",
    "plateau_onset",
]

DEFAULT_ED_CAP = 4096

_X = sp.csr_matrix(np.array([[0, 1], [1, 0]], dtype=complex))
_Y = sp.csr_matrix(np.array([[0, -1j], [1j, 0]], dtype=complex))
_Z = sp.csr_matrix(np.array([[1, 0], [0, -1]], dtype=complex))
_A = sp.csr_matrix(np.array([[0, 1], [0, 0]], dtype=complex))  # annihilates an occupied mode (|1> = index 1)


def embed_operator(op, first_site: int, n_sites: int, d: int) -> np.ndarray:
    """Dense ``1 (x) op (x) 1`` with ``op`` acting on consecutive sites from ``first_site``."""
    op = np.asarray(op)
    k = int(round(math.log(op.shape[0], d)))
    if d ** k != op.shape[0] or first_site + k > n_sites:
        raise StructuralError("operator does not fit on the chain")
    return np.kron(np.kron(np.eye(d ** first_site), op), np.eye(d ** (n_sites - first_site - k)))


def _site_op(op, j, n, d=2):
    return sp.kron(sp.kron(sp.identity(d ** j, format="csr"), op), sp.identity(d ** (n - j - 1), format="csr"),
                   format="csr")


def _fermion_modes(n_sites: int):
    """Annihilators of the 2L modes ordered (0 up, 0 dn, 1 up, ...) in the site basis |0>,|up>,|dn>,|updn>."""
    n_modes = 2 * n_sites
    ops = []
    for m in range(n_modes):
        factors = [_Z] * m + [_A] + [sp.identity(2, format="csr")] * (n_modes - m - 1)
        op = factors[0]
        for f in factors[1:]:
            op = sp.kron(op, f, format="csr")
        ops.append(op)
    # mode-occupation basis of one site is index 2 n_up + n_dn; ours is (0, up, dn, updn)
    local = np.array([0, 2, 1, 3])
    perm = np.zeros(4 ** n_sites, dtype=np.int64)
    for idx in range(4 ** n_sites):
        digits = np.base_repr(idx, 4).zfill(n_sites) if n_sites else ""
        code = 0
        for ch in digits:
            code = code * 4 + local[int(ch)]
        perm[idx] = code
    P = sp.csr_matrix((np.ones(len(perm)), (np.arange(len(perm)), perm)), shape=(len(perm),) * 2)
    return [P @ op @ P.T for op in ops]


def full_hamiltonian(spec: HamiltonianSpec) -> sp.csr_matrix:
    """Sparse Hamiltonian on the full ``d**L`` space."""
    L = spec.n_sites
    if spec.model == "ising":
        H = sp.csr_matrix((2 ** L, 2 ** L), dtype=complex)
        for j in range(L - 1):
            H = H - _site_op(_X, j, L) @ _site_op(_X, j + 1, L)
        for j in range(L):
            H = H + spec.h * _site_op(_Z, j, L)
        return H.tocsr()
    c = _fermion_modes(L)
    dim = 4 ** L
    H = sp.csr_matrix((dim, dim), dtype=complex)
    for j in range(L - 1):
        for s in range(2):
            a, b = c[2 * j + s], c[2 * (j + 1) + s]
            hop = a.getH() @ b
            H = H - spec.J * (hop + hop.getH())
    for j in range(L):
        H = H + spec.U * (c[2 * j].getH() @ c[2 * j]) @ (c[2 * j + 1].getH() @ c[2 * j + 1])
    return H.tocsr()


def full_observable(name: str, spec: HamiltonianSpec) -> sp.csr_matrix:
    L = spec.n_sites
    dim = spec.d ** L
    if name == "identity":
        return sp.identity(dim, dtype=complex, format="csr")
    if name == "hamiltonian":
        return full_hamiltonian(spec)
    if spec.model == "ising":
        if name == "zz":
            out = sp.csr_matrix((dim, dim), dtype=complex)
            for j in range(L - 1):
                out = out + _site_op(_Z, j, L) @ _site_op(_Z, j + 1, L)
            return (out / (L - 1)).tocsr()
        if name == "parity":
            out = sp.identity(dim, dtype=complex, format="csr")
            for j in range(L):
                out = out @ _site_op(_Z, j, L)
            return out
    else:
        c = _fermion_modes(L)
        n = [op.getH() @ op for op in c]
        if name == "double_occupancy":
            return (sum(n[2 * j] @ n[2 * j + 1] for j in range(L)) / L).tocsr()
        if name == "n_up":
            return sum(n[0::2]).tocsr()
        if name == "n_dn":
            return sum(n[1::2]).tocsr()
    raise ConfigurationError(f"no dense observable {name!r} for {spec.model}")


def sector_basis(spec: HamiltonianSpec) -> np.ndarray:
    """Indices of full-space basis states inside ``spec.sector`` (all states if ``None``)."""
    L, d = spec.n_sites, spec.d
    if spec.sector is None:
        return np.arange(d ** L)
    digits = np.indices((d,) * L).reshape(L, -1).T
    charges = np.array(spec.site_charges)[digits].sum(axis=1)
    sym = spec.model_symmetry
    charges = sym.reduce_array(charges)
    return np.flatnonzero(np.all(charges == np.asarray(spec.sector), axis=1))


def sector_hamiltonian(spec: HamiltonianSpec) -> sp.csr_matrix:
    idx = sector_basis(spec)
    return full_hamiltonian(spec)[idx][:, idx].tocsr()


@dataclass
class ExactSpectrum:
    """Eigenvalues (ascending) of the Hamiltonian in one sector.

    ``eigen_expectations`` maps observable names to ``<nu|Theta|nu>``.
    """

    energies: np.ndarray
    sector: tuple | None
    n_sites: int
    eigen_expectations: dict = field(default_factory=dict)
    vectors: np.ndarray | None = field(default=None, repr=False)
    basis: np.ndarray | None = field(default=None, repr=False)

    @property
    def sector_dim(self) -> int:
        return len(self.energies)

    def embedded_vector(self, nu: int, full_dim: int) -> np.ndarray:
        """Eigenvector ``nu`` as a full-space state vector."""
        if self.vectors is None:
            raise StructuralError("eigenvectors were not kept")
        out = np.zeros(full_dim, complex)
        out[self.basis] = self.vectors[:, nu]
        return out


def exact_diag(spec: HamiltonianSpec, observables=(), max_dim: int = DEFAULT_ED_CAP,
               keep_vectors: bool = False) -> ExactSpectrum:
    """Dense diagonalization of the sector-restricted Hamiltonian."""
    idx = sector_basis(spec)
    if len(idx) > max_dim:
        hint = (" use ising_characteristic_trace (free fermions) instead" if spec.model == "ising"
                else " no exact alternative exists for the interacting chain")
        raise CapacityError(f"sector dimension {len(idx)} exceeds the exact-diagonalization cap {max_dim};{hint}")
    H = full_hamiltonian(spec)[idx][:, idx].toarray()
    need_vectors = keep_vectors or bool(observables)
    if need_vectors:
        w, v = np.linalg.eigh(H)
    else:
        w, v = np.linalg.eigvalsh(H), None
    expectations = {}
    for name in observables:
        O = full_observable(name, spec)[idx][:, idx]
        expectations[name] = np.real(np.einsum("in,in->n", v.conj(), O @ v))
    return ExactSpectrum(w, spec.sector, spec.n_sites, expectations,
                         v if keep_vectors else None, idx if keep_vectors else None)


def exact_trace(spectrum: ExactSpectrum, times, observable: str | None = None) -> np.ndarray:
    """``sum_nu theta_nu exp(-i t E_nu)`` (``theta = 1`` without an observable)."""
    times = np.asarray(times, float)
    weights = np.ones(len(spectrum.energies)) if observable is None else spectrum.eigen_expectations[observable]
    out = np.empty(len(times), complex)
    chunk = max(1, 4_000_000 // max(1, len(spectrum.energies)))
    for s in range(0, len(times), chunk):
        out[s:s + chunk] = np.exp(-1j * np.outer(times[s:s + chunk], spectrum.energies)) @ weights
    return out


def exact_trace_series(spectrum: ExactSpectrum, params: HsParameters, observables=()) -> TraceSeries:
    t = params.times
    return TraceSeries(t, exact_trace(spectrum, t), spectrum.sector, spectrum.sector_dim,
                       observable_values={n: exact_trace(spectrum, t, n) for n in observables},
                       method="exact", n_sites=spectrum.n_sites)


# ---------------------------------------------------------------------------
# free-fermion Ising
# ---------------------------------------------------------------------------

def ising_single_particle(n_sites: int, h: float):
    """Mode energies ``eps_k >= 0``, ground energy and vacuum parity of the open chain.

    The chain maps to ``H = (i/4) sum_pq A_pq g_p g_q`` over 2L Majorana
    operators; a real Schur decomposition brings ``A`` to 2x2 blocks whose
    magnitudes are the mode energies.  The parity of the fermionic vacuum is
    the determinant of the orthogonal transformation once every block is
    oriented to have a nonnegative energy.
    """
    L = n_sites
    n = 2 * L
    A = np.zeros((n, n))
    for j in range(L):  # field term  -i h g_{2j} g_{2j+1}
        A[2 * j, 2 * j + 1] += -2 * h
        A[2 * j + 1, 2 * j] -= -2 * h
    for j in range(L - 1):  # coupling  +i g_{2j+1} g_{2j+2}
        A[2 * j + 1, 2 * j + 2] += 2.0
        A[2 * j + 2, 2 * j + 1] -= 2.0
    T, Zs = scipy.linalg.schur(A, output="real")
    W = Zs.T
    tol = 1e-12 * max(1.0, np.abs(A).max())
    pairs, singles = [], []
    i = 0
    while i < n:
        if i + 1 < n and abs(T[i + 1, i]) > tol:
            pairs.append((i, i + 1, T[i, i + 1]))
            i += 2
        else:
            singles.append(i)
            i += 1
    for a, b in zip(singles[0::2], singles[1::2]):
        pairs.append((a, b, 0.0))
    rows, eps = [], []
    for a, b, val in pairs:
        if val < 0:
            a, b = b, a
        rows += [a, b]
        eps.append(abs(val))
    Wp = W[rows]
    parity = float(np.sign(np.linalg.det(Wp)))
    eps = np.array(eps)
    return eps, -0.5 * eps.sum(), parity


def ising_characteristic_trace(n_sites: int, h: float, times, parity: str | None = "even") -> np.ndarray:
    """``Tr[exp(-i t H) P]`` for the open transverse-field Ising chain.

    ``P`` projects on even (``Z`` product ``+1``) or odd parity; ``None``
    gives the full trace.  Cost is ``O(L)`` per time point.
    """
    if n_sites < 1:
        raise ConfigurationError("n_sites must be >= 1")
    times = np.asarray(times, float)
    eps, e0, p0 = ising_single_particle(n_sites, h)
    phase = np.exp(-1j * np.outer(times, eps))
    ground = np.exp(-1j * e0 * times)
    plus = np.prod(1 + phase, axis=1)
    if parity is None:
        return ground * plus
    minus = np.prod(1 - phase, axis=1)
    sign = {"even": 1.0, "odd": -1.0}[parity]
    return 0.5 * ground * (plus + sign * p0 * minus)


# ---------------------------------------------------------------------------
# exact broadened quantities
# ---------------------------------------------------------------------------

def _gaussian_sum(levels, weights, energies, eta):
    energies = np.asarray(energies, float)
    out = np.zeros(len(energies))
    chunk = max(1, 4_000_000 // max(1, len(levels)))
    for s in range(0, len(energies), chunk):
        diff = energies[s:s + chunk, None] - levels[None, :]
        out[s:s + chunk] = np.exp(-eta * diff ** 2) @ weights
    return math.sqrt(eta / math.pi) * out


def broadened_dos_exact(source, eta: float, energies, params: HsParameters | None = None) -> BroadenedDos:
    """Exact broadened density from a spectrum (Gaussian sum) or an exact trace series (quadrature)."""
    energies = np.asarray(energies, float)
    if isinstance(source, ExactSpectrum):
        lv = np.asarray(source.energies)
        dens = _gaussian_sum(lv, np.ones(len(lv)), energies, eta)
        return BroadenedDos(energies, dens, eta, source.sector, source.sector_dim, source.n_sites,
                            evaluator=lambda e: _gaussian_sum(lv, np.ones(len(lv)), e, eta))
    if isinstance(source, TraceSeries):
        dens = hs_quadrature(source.times, source.values, energies, eta)
        times, values = source.times, source.values
        return BroadenedDos(energies, dens, eta, source.sector, source.sector_dim, source.n_sites,
                            evaluator=lambda e: hs_quadrature(times, values, e, eta, "direct"))
    raise StructuralError("source must be an ExactSpectrum or a TraceSeries")


def exact_spectral_observable(spectrum: ExactSpectrum, name: str, eta: float, energies) -> np.ndarray:
    """Gaussian-weighted microcanonical average of ``<nu|Theta|nu>``."""
    lv = np.asarray(spectrum.energies)
    theta = spectrum.eigen_expectations[name]
    energies = np.asarray(energies, float)
    # shift exponents by their per-energy maximum to stay finite far from the support
    diff2 = (energies[:, None] - lv[None, :]) ** 2
    x = -eta * diff2
    x = x - x.max(axis=1, keepdims=True)
    g = np.exp(x)
    return (g @ theta) / g.sum(axis=1)


def _log_partition(levels, T):
    from scipy.special import logsumexp

    return np.array([logsumexp(-levels / t) for t in np.atleast_1d(T)])


def exact_free_energy(spectrum: ExactSpectrum, temperatures) -> np.ndarray:
    T = np.asarray(temperatures, float)
    return -T * _log_partition(np.asarray(spectrum.energies), T)


def exact_thermal_average(spectrum: ExactSpectrum, temperatures, name: str | None = None) -> np.ndarray:
    """Canonical average of ``theta_nu`` (energy when ``name`` is ``None``)."""
    lv = np.asarray(spectrum.energies)
    theta = lv if name is None else spectrum.eigen_expectations[name]
    out = []
    for t in np.atleast_1d(np.asarray(temperatures, float)):
        x = -(lv - lv[0]) / t
        p = np.exp(x - x.max())
        out.append(np.sum(p * theta) / p.sum())
    return np.array(out)


def exact_entropy(spectrum: ExactSpectrum, temperatures) -> np.ndarray:
    T = np.asarray(temperatures, float)
    return (exact_thermal_average(spectrum, T) - exact_free_energy(spectrum, T)) / T


# ---------------------------------------------------------------------------
# error metrics
# ---------------------------------------------------------------------------

@dataclass
class ErrorReport:
    """Deviation measures between an approximate and a reference result.

    ``epsilon0``: integrated absolute density difference divided by the
    sector dimension.  ``epsilon_m``: integrated absolute free-energy
    difference per site over the valid temperatures.  ``epsilon_prime``:
    maximal absolute free-energy difference per site over the same range.
    Metrics not applicable to the compared objects are ``None``.
    """

    epsilon0: float | None = None
    epsilon_m: float | None = None
    epsilon_prime: float | None = None
    metadata: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        row = dict(self.metadata)
        row.update(epsilon0=self.epsilon0, epsilon_m=self.epsilon_m, epsilon_prime=self.epsilon_prime)
        return row


def error_metrics(approx, exact, metadata: dict | None = None) -> ErrorReport:
    meta = dict(metadata or {})
    if isinstance(approx, BroadenedDos) and isinstance(exact, BroadenedDos):
        E = approx.energies
        if exact.energies.shape == E.shape and np.allclose(exact.energies, E, rtol=0, atol=1e-12):
            ref = exact.density
        elif exact.evaluator is not None:
            ref = exact(E)
        else:
            raise StructuralError("density grids differ and the reference cannot be re-evaluated")
        dim = max(approx.sector_dim, exact.sector_dim)
        eps0 = float(np.trapezoid(np.abs(approx.density - ref), E) / dim)
        meta.setdefault("eta", approx.eta)
        meta.setdefault("L", approx.n_sites)
        return ErrorReport(epsilon0=eps0, metadata=meta)
    if isinstance(approx, ThermoCurve) and isinstance(exact, ThermoCurve):
        T = approx.temperatures
        if exact.temperatures.shape != T.shape or not np.allclose(exact.temperatures, T, rtol=1e-12):
            raise StructuralError("free-energy curves use different temperature grids")
        valid = ~(approx.below_threshold | exact.below_threshold)
        if valid.sum() < 2:
            raise StructuralError("fewer than two temperatures above the validity threshold")
        L = approx.n_sites or exact.n_sites or 1
        dF = np.abs(approx.free_energy - exact.free_energy)[valid]
        return ErrorReport(epsilon_m=float(np.trapezoid(dF, T[valid]) / L),
                           epsilon_prime=float(dF.max() / L), metadata=meta)
    raise StructuralError("error_metrics compares two BroadenedDos or two ThermoCurve objects")


# ---------------------------------------------------------------------------
# resolution threshold
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResolutionEstimate:
    """Typical level spacing: crude width-over-count estimate and RMS nearest spacing."""

    crude: float
    rms: float | None


def resolution_threshold_estimate(source) -> ResolutionEstimate:
    """Typical level spacing from a spectrum or from ``(width_bound, sector_dim)``."""
    if isinstance(source, ExactSpectrum):
        lv = np.sort(np.asarray(source.energies))
        if len(lv) < 2:
            raise ConfigurationError("need at least two levels")
        gaps = np.diff(lv)
        return ResolutionEstimate(float((lv[-1] - lv[0]) / (len(lv) - 1)), float(np.sqrt(np.mean(gaps ** 2))))
    width, dim = source
    if not width > 0 or not dim >= 1:
        raise ConfigurationError("width must be positive and dimension at least one")
    return ResolutionEstimate(float(width / dim), None)


def reference_dos(spec: HamiltonianSpec, params: HsParameters, max_dim: int = DEFAULT_ED_CAP) -> BroadenedDos:
    """Exact density on the parameter grid: dense diagonalization, or free fermions beyond the cap."""
    if spec.sector is not None and spec.model == "ising" and spec.sector_dim > max_dim:
        parity = "even" if spec.sector == (0,) else "odd"
        tr = ising_characteristic_trace(spec.n_sites, spec.h, params.times, parity)
        series = TraceSeries(params.times, tr, spec.sector, spec.sector_dim, method="free-fermion",
                             n_sites=spec.n_sites)
        return broadened_dos_exact(series, params.eta, params.energies)
    return broadened_dos_exact(exact_diag(spec, max_dim=max_dim), params.eta, params.energies)


@dataclass
class SweepCell:
    eta: float
    m: int
    n_samples: int
    epsilon0: float
    spectral_mass: float
    n_steps: int
    seconds: float


def _prefix(series: TraceSeries, n: int) -> TraceSeries:
    cut = slice(0, n + 1)
    return replace(series, times=series.times[cut], values=series.values[cut],
                   per_sample_spread=series.per_sample_spread[cut],
                   samples=None if series.samples is None else series.samples[:, cut],
                   observable_values={k: v[cut] for k, v in series.observable_values.items()},
                   observable_samples={k: v[:, cut] for k, v in series.observable_samples.items()})


def resolution_sweep(spec: HamiltonianSpec, eta_list, m_list, n_samples: int, seed: int = 0, chi: float = 1e-10,
                     batch_size: int = 250, threads: int = 1, reference=None) -> list:
    """Error ``epsilon0`` for every ``(eta, m)`` cell.

    For each ``m`` a single set of trajectories is run up to the longest time
    needed; smaller ``eta`` reuse prefixes of those series, which is exactly
    what separate runs with the same seeds would produce.  ``reference`` may
    supply a callable ``params -> BroadenedDos``; by default
    :func:`reference_dos` is used.
    """
    etas = sorted(float(e) for e in eta_list)
    if not etas or not list(m_list):
        raise ConfigurationError("eta_list and m_list must be nonempty")
    ref_fn = reference or (lambda p: reference_dos(spec, p))
    plist = {eta: tune_parameters(spec, eta, chi) for eta in etas}
    refs = {eta: ref_fn(p) for eta, p in plist.items()}
    longest = plist[etas[-1]]
    cells = []
    for m in m_list:
        t0 = time.perf_counter()
        series = trace_series_sampling(spec, longest, int(m), n_samples, seed=seed, batch_size=batch_size,
                                       threads=threads)
        elapsed = time.perf_counter() - t0
        for eta in etas:
            p = plist[eta]
            dos = dos_from_traces(_prefix(series, p.n_steps), p)
            rep = error_metrics(dos, refs[eta])
            cells.append(SweepCell(eta, int(m), n_samples, rep.epsilon0, dos.spectral_mass, p.n_steps, elapsed))
    return cells


def plateau_onset(etas, errors) -> float:
    """Broadening at which ``epsilon0(eta)`` enters its high-resolution plateau.

    The plateau level is the error at the largest ``eta`` of the sweep, which
    should lie well inside the regime of resolved levels.  A broadening
    belongs to the plateau once its error is closer to that level than to
    zero; the onset is the first crossing of half the level, interpolated
    linearly on log-log axes.  Returns the smallest ``eta`` if the first point
    already qualifies.
    """
    eta = np.asarray(etas, float)
    err = np.asarray(errors, float)
    order = np.argsort(eta)
    eta, err = eta[order], err[order]
    if len(eta) < 2:
        raise ConfigurationError("need at least two broadenings to locate a plateau")
    if not np.all(err > 0):
        raise ConfigurationError("errors must be positive")
    half = 0.5 * err[-1]
    above = np.flatnonzero(err >= half)
    i = int(above[0])
    if i == 0:
        return float(eta[0])
    x0, x1 = math.log(eta[i - 1]), math.log(eta[i])
    y0, y1 = math.log(err[i - 1]), math.log(err[i])
    return float(math.exp(x0 + (x1 - x0) * (math.log(half) - y0) / (y1 - y0)))
