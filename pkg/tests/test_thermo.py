import math

import numpy as np
import pytest
from scipy.special import logsumexp

from tndos.errors import ConfigurationError, DegenerateInputError, MaskedWeightError, StructuralError
from tndos.hs import BroadenedDos, SpectralObservable
from tndos.models import HamiltonianSpec
from tndos.oracles import broadened_dos_exact, exact_diag, exact_entropy, exact_free_energy
from tndos.thermo import (
    ThermoCurve,
    default_temperature_grid,
    entropy,
    free_energy,
    lower_support_edge,
    thermal_average,
)


def gaussian_dos(levels, eta, lo=-6.0, hi=6.0, n=24001, n_sites=1):
    levels = np.asarray(levels, float)
    E = np.linspace(lo, hi, n)
    D = math.sqrt(eta / math.pi) * np.exp(-eta * (E[:, None] - levels[None, :]) ** 2).sum(axis=1)
    return BroadenedDos(E, D, eta, None, len(levels), n_sites)


class TestFreeEnergy:
    def test_single_level(self):
        eta, e0 = 100.0, -0.4
        dos = gaussian_dos([e0], eta)
        T = np.linspace(3 / math.sqrt(eta), 5.0, 40)
        F = free_energy(dos, T).free_energy
        assert np.max(np.abs(F - (e0 - 1 / (4 * eta * T)))) <= 1e-6

    def test_two_levels(self):
        eta, levels = 50.0, np.array([-1.0, 0.5])
        dos = gaussian_dos(levels, eta)
        T = np.linspace(0.5, 4.0, 30)
        exact = np.array([-t * logsumexp(-levels / t) for t in T]) - 1 / (4 * eta * T)
        assert np.max(np.abs(free_energy(dos, T).free_energy - exact)) <= 1e-6

    def test_high_temperature_counts_states(self):
        levels = np.linspace(-2, 2, 7)
        dos = gaussian_dos(levels, 20.0)
        T = np.array([1e4, 2e4, 4e4])
        F = free_energy(dos, T).free_energy
        assert np.all(np.abs(F / T + math.log(7)) <= 1e-3)

    def test_matches_spectrum_above_threshold(self):
        spec = HamiltonianSpec.ising(6, 1.0)
        ed = exact_diag(spec)
        eta = 400.0
        E = np.linspace(ed.energies[0] - 2, ed.energies[-1] + 2, 20001)
        dos = broadened_dos_exact(ed, eta, E)
        T = np.linspace(0.2, 10, 50)
        F = free_energy(dos, T).free_energy
        ref = exact_free_energy(ed, T) - 1 / (4 * eta * T)
        assert np.max(np.abs(F - ref)) <= 1e-6

    def test_zero_density_is_degenerate(self):
        dos = BroadenedDos(np.linspace(0, 1, 11), np.zeros(11), 10.0, None, 1)
        with pytest.raises(DegenerateInputError):
            free_energy(dos, [1.0])

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(ConfigurationError):
            free_energy(gaussian_dos([0.0], 10.0), [0.0, 1.0])

    def test_default_grid_starts_at_resolution_limit(self):
        dos = gaussian_dos([0.0], 25.0)
        T = default_temperature_grid(dos, 50)
        assert T[0] == pytest.approx(0.2) and T[-1] == pytest.approx(600.0) and len(T) == 50


class TestEntropy:
    def test_nonnegative_and_saturates(self):
        spec = HamiltonianSpec.ising(6, 1.0)
        ed = exact_diag(spec)
        E = np.linspace(ed.energies[0] - 2, ed.energies[-1] + 2, 20001)
        dos = broadened_dos_exact(ed, 400.0, E)
        T = np.logspace(np.log10(0.2), 3, 400)
        curve = entropy(free_energy(dos, T))
        # a nondegenerate ground state leaves only the broadening shift -1/(4 eta T^2) below zero
        corrected = curve.entropy + 1 / (4 * 400.0 * T ** 2)
        assert np.all(corrected[~curve.below_threshold] >= -1e-6)
        assert curve.entropy[-1] == pytest.approx(math.log(32), abs=1e-3)

    def test_matches_exact_entropy_away_from_threshold(self):
        spec = HamiltonianSpec.ising(6, 1.0)
        ed = exact_diag(spec)
        E = np.linspace(ed.energies[0] - 2, ed.energies[-1] + 2, 20001)
        eta = 2500.0
        dos = broadened_dos_exact(ed, eta, E)
        T = np.linspace(0.5, 5.0, 451)
        S = entropy(free_energy(dos, T)).entropy
        # the broadening adds -1/(4 eta T) to F, hence -1/(4 eta T^2) to S
        ref = exact_entropy(ed, T) - 1 / (4 * eta * T ** 2)
        assert np.max(np.abs(S - ref)[1:-1]) <= 1e-4

    def test_needs_three_points(self):
        curve = ThermoCurve(np.array([1.0, 2.0]), np.zeros(2), 0.1)
        with pytest.raises(ConfigurationError):
            entropy(curve)


class TestCurve:
    def test_threshold_flags(self):
        curve = ThermoCurve(np.array([0.1, 0.3, 0.31, 1.0]), np.zeros(4), 0.1)
        assert curve.below_threshold.tolist() == [True, True, False, False]

    def test_temperatures_must_increase(self):
        with pytest.raises(ConfigurationError):
            ThermoCurve(np.array([1.0, 0.5]), np.zeros(2), 0.1)

    def test_csv_layout(self, tmp_path):
        curve = entropy(free_energy(gaussian_dos([0.0, 1.0], 10.0, n_sites=2), [1.0, 2.0, 3.0]))
        curve.to_csv(tmp_path / "t.csv")
        rows = (tmp_path / "t.csv").read_text().splitlines()
        assert rows[0] == "T,F,F_per_site,S,S_per_site,below_threshold"
        F, F_site = map(float, rows[1].split(",")[1:3])
        assert F_site == pytest.approx(F / 2)


class TestSupportEdge:
    def test_clean_density_keeps_everything(self):
        assert lower_support_edge(gaussian_dos([0.0], 10.0)) == 0

    def test_noise_floor_cuts_tail(self):
        dos = gaussian_dos([0.0], 10.0, n=2001)
        noisy = dos.density.copy()
        noisy[:200] = 1e-4 * np.where(np.arange(200) % 2, 1, -1)
        edge = lower_support_edge(BroadenedDos(dos.energies, noisy, 10.0, None, 1))
        assert edge >= 200
        assert noisy[edge] > 1e-3

    def test_tail_noise_does_not_blow_up_low_temperatures(self):
        eta = 30.0
        dos = gaussian_dos([0.0], eta, n=4001)
        D = dos.density.copy()
        D[:300] += 1e-7 * np.where(np.arange(300) % 2, 1, -1)
        T = np.linspace(0.6, 2.0, 20)
        F = free_energy(BroadenedDos(dos.energies, D, eta, None, 1), T).free_energy
        assert np.max(np.abs(F + 1 / (4 * eta * T))) <= 1e-4

    def test_pure_noise_is_degenerate(self):
        D = 1e-3 * np.where(np.arange(50) % 2, 1, -1)
        with pytest.raises(DegenerateInputError):
            lower_support_edge(BroadenedDos(np.linspace(0, 1, 50), D, 1.0, None, 1))


class TestThermalAverage:
    @staticmethod
    def _observable(dos, values, floor=1e-6):
        mask = dos.density < floor * dos.density.max()
        return SpectralObservable(dos.energies, np.where(mask, np.nan, values), mask, "obs",
                                  values * dos.density, floor)

    def test_constant_observable(self):
        dos = gaussian_dos([-1.0, 0.0, 2.0], 20.0)
        obs = self._observable(dos, np.full(len(dos.energies), 0.25))
        avg = thermal_average(obs, dos, [0.5, 1.0, 5.0])
        assert np.allclose(avg.values, 0.25, atol=1e-12)
        assert np.all(avg.masked_weight <= 1e-4)

    def test_energy_observable_tracks_mean_energy(self):
        eta, levels = 400.0, np.array([-1.0, 1.0])
        dos = gaussian_dos(levels, eta)
        obs = self._observable(dos, dos.energies.copy())
        T = np.array([0.5, 1.0, 3.0])
        avg = thermal_average(obs, dos, T).values
        p = np.exp(-levels[None, :] / T[:, None])
        exact = (p @ levels) / p.sum(axis=1) - 1 / (2 * eta * T)
        assert np.max(np.abs(avg - exact)) <= 1e-6

    def test_masked_weight_raises(self):
        dos = gaussian_dos([-1.0, 1.0], 20.0)
        obs = self._observable(dos, np.ones(len(dos.energies)))
        obs.mask[dos.energies < 0] = True
        with pytest.raises(MaskedWeightError):
            thermal_average(obs, dos, [0.5])

    def test_grid_mismatch(self):
        dos = gaussian_dos([0.0], 20.0)
        other = gaussian_dos([0.0], 20.0, n=101)
        obs = self._observable(other, np.ones(101))
        with pytest.raises(StructuralError):
            thermal_average(obs, dos, [1.0])
