import math

import numpy as np
import pytest

from tndos.errors import CapacityError, ConfigurationError, StructuralError
from tndos.hs import TraceSeries, dos_from_traces, tune_parameters
from tndos.models import HamiltonianSpec
from tndos.oracles import (
    ErrorReport,
    broadened_dos_exact,
    error_metrics,
    exact_diag,
    exact_entropy,
    exact_free_energy,
    exact_spectral_observable,
    exact_thermal_average,
    exact_trace,
    full_hamiltonian,
    ising_characteristic_trace,
    ising_single_particle,
    plateau_onset,
    reference_dos,
    resolution_sweep,
    resolution_threshold_estimate,
)
from tndos.thermo import ThermoCurve


class TestExactDiag:
    def test_sector_dimensions_and_ordering(self):
        ed = exact_diag(HamiltonianSpec.ising(6, 1.0, "odd"))
        assert ed.sector_dim == 32
        assert np.all(np.diff(ed.energies) >= 0)

    def test_sectors_partition_full_spectrum(self):
        full = exact_diag(HamiltonianSpec.ising(5, 0.6, None)).energies
        parts = np.sort(np.concatenate([exact_diag(HamiltonianSpec.ising(5, 0.6, s)).energies
                                        for s in ("even", "odd")]))
        assert np.max(np.abs(full - parts)) <= 1e-12

    def test_hubbard_half_filling_dimension(self):
        ed = exact_diag(HamiltonianSpec.hubbard(4, 1.0, 1.0, (2, 2)))
        assert ed.sector_dim == math.comb(4, 2) ** 2

    def test_capacity(self):
        with pytest.raises(CapacityError, match="free fermions"):
            exact_diag(HamiltonianSpec.ising(8), max_dim=64)
        with pytest.raises(CapacityError, match="no exact alternative"):
            exact_diag(HamiltonianSpec.hubbard(4, 1.0, 1.0, (2, 2)), max_dim=10)

    def test_eigen_expectations(self):
        ed = exact_diag(HamiltonianSpec.ising(4, 100.0), observables=("zz",), keep_vectors=True)
        # a strong field polarizes the ground state down, so neighbours are aligned
        assert ed.eigen_expectations["zz"][0] == pytest.approx(1.0, abs=1e-3)
        v = ed.embedded_vector(0, 16)
        H = full_hamiltonian(HamiltonianSpec.ising(4, 100.0, None)).toarray()
        assert np.linalg.norm(H @ v - ed.energies[0] * v) <= 1e-9


class TestFreeFermions:
    def test_two_site_modes(self):
        eps, e0, _ = ising_single_particle(2, 0.0)
        assert sorted(eps) == pytest.approx([0.0, 2.0], abs=1e-12)
        assert e0 == pytest.approx(-1.0)

    @pytest.mark.parametrize("L", range(2, 11))
    def test_trace_matches_dense(self, L):
        h = 0.7
        spec = HamiltonianSpec.ising(L, h)
        p = tune_parameters(spec, 10.0 * L ** 2)
        t = p.times
        for parity in ("even", "odd"):
            ed = exact_diag(HamiltonianSpec.ising(L, h, parity))
            dense = exact_trace(ed, t)
            ff = ising_characteristic_trace(L, h, t, parity)
            assert np.max(np.abs(ff - dense)) <= 1e-9 * ed.sector_dim
        full = exact_trace(exact_diag(HamiltonianSpec.ising(L, h, None)), t[:50])
        assert np.max(np.abs(ising_characteristic_trace(L, h, t[:50], None) - full)) <= 1e-9 * 2 ** L

    def test_ground_energy_matches_dense(self):
        eps, e0, _ = ising_single_particle(8, 1.3)
        ev = np.linalg.eigvalsh(full_hamiltonian(HamiltonianSpec.ising(8, 1.3, None)).toarray())
        assert ev[0] == pytest.approx(e0, abs=1e-10)
        assert ev[-1] == pytest.approx(-e0, abs=1e-10)

    def test_reference_dos_switches_route_beyond_cap(self):
        spec = HamiltonianSpec.ising(8, 1.0)
        p = tune_parameters(spec, 640.0)
        dense = reference_dos(spec, p)
        ff = reference_dos(spec, p, max_dim=64)
        assert np.max(np.abs(dense.density - ff.density)) <= 1e-8

    def test_invalid_length(self):
        with pytest.raises(ConfigurationError):
            ising_characteristic_trace(0, 1.0, [0.0])


class TestExactThermo:
    def test_two_level_free_energy(self):
        from tndos.oracles import ExactSpectrum

        spec = ExactSpectrum(np.array([-1.0, 1.0]), None, 1)
        T = np.array([0.5, 2.0])
        assert exact_free_energy(spec, T) == pytest.approx(-T * np.log(2 * np.cosh(1 / T)))
        assert exact_thermal_average(spec, T) == pytest.approx(-np.tanh(1 / T))
        assert np.all(exact_entropy(spec, T) >= 0)

    def test_spectral_observable_is_average_near_level(self):
        ed = exact_diag(HamiltonianSpec.ising(4, 100.0), observables=("zz",))
        vals = exact_spectral_observable(ed, "zz", 1e4, ed.energies[:1])
        assert vals[0] == pytest.approx(ed.eigen_expectations["zz"][0], abs=1e-8)


class TestMetrics:
    def test_density_error(self):
        spec = HamiltonianSpec.ising(4, 1.0)
        p = tune_parameters(spec, 50.0)
        ed = exact_diag(spec)
        ref = broadened_dos_exact(ed, p.eta, p.energies)
        shifted = broadened_dos_exact(ed, p.eta, p.energies + 0.01)
        shifted.energies = p.energies
        rep = error_metrics(ref, ref)
        assert rep.epsilon0 == 0
        assert error_metrics(shifted, ref).epsilon0 > 0
        assert set(rep.as_row()) >= {"epsilon0", "epsilon_m", "epsilon_prime", "eta"}

    def test_reference_is_re_evaluated_on_other_grid(self):
        spec = HamiltonianSpec.ising(4, 1.0)
        p = tune_parameters(spec, 50.0)
        ed = exact_diag(spec)
        ref = broadened_dos_exact(ed, p.eta, np.linspace(-9, 9, 101))
        approx = dos_from_traces(TraceSeries(p.times, exact_trace(ed, p.times), (0,), 8, n_sites=4), p)
        assert error_metrics(approx, ref).epsilon0 <= 1e-9

    def test_free_energy_errors_skip_threshold(self):
        T = np.array([0.1, 0.2, 1.0, 2.0])
        a = ThermoCurve(T, np.array([5.0, 5.0, 1.0, 2.0]), 0.1, n_sites=2)
        b = ThermoCurve(T, np.array([0.0, 0.0, 1.0, 1.0]), 0.1, n_sites=2)
        rep = error_metrics(a, b)
        assert rep.epsilon_prime == pytest.approx(0.5)
        assert rep.epsilon_m == pytest.approx(0.25)

    def test_incompatible_inputs(self):
        with pytest.raises(StructuralError):
            error_metrics(1.0, 2.0)
        assert ErrorReport().epsilon0 is None


class TestResolution:
    def test_spacing_estimates(self):
        ed = exact_diag(HamiltonianSpec.ising(4, 1.0))
        est = resolution_threshold_estimate(ed)
        assert est.crude == pytest.approx((ed.energies[-1] - ed.energies[0]) / 7)
        assert est.rms > 0
        assert resolution_threshold_estimate((14.0, 8)).crude == pytest.approx(1.75)

    def test_plateau_onset_on_synthetic_curve(self):
        eta = np.logspace(0, 4, 9)
        err = np.minimum(1e-3 * eta ** 0.5, 1e-2)
        # half the plateau level 1e-2 is reached at eta = 25
        assert plateau_onset(eta, err) == pytest.approx(25.0, rel=1e-12)

    def test_plateau_onset_edge_cases(self):
        assert plateau_onset([1.0, 10.0, 100.0], [0.6, 0.8, 1.0]) == 1.0
        with pytest.raises(ConfigurationError):
            plateau_onset([1.0], [1.0])
        with pytest.raises(ConfigurationError):
            plateau_onset([1.0, 2.0], [0.0, 1.0])

    def test_sweep_reuses_trajectories(self):
        spec = HamiltonianSpec.ising(4, 1.0)
        cells = resolution_sweep(spec, [2.0, 8.0], [4], 3, seed=0)
        assert [(c.eta, c.m) for c in cells] == [(2.0, 4), (8.0, 4)]
        assert all(c.epsilon0 >= 0 and c.seconds >= 0 for c in cells)
        assert cells[0].n_steps < cells[1].n_steps
