import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from tndos import DosEstimator
from tndos.errors import ConfigurationError
from tndos.estimator import make_spec
from tndos.oracles import exact_diag, exact_thermal_average


def test_parameters_follow_sklearn_conventions():
    est = DosEstimator(n_sites=6, m=8, observables=("zz",))
    params = est.get_params()
    assert params["n_sites"] == 6 and params["m"] == 8
    copy = clone(est).set_params(m=4)
    assert copy.m == 4 and est.m == 8


def test_unfitted_estimator_refuses_to_predict():
    with pytest.raises(NotFittedError):
        DosEstimator().predict([0.0])


def test_exact_and_free_fermion_pathways_agree():
    kw = dict(model="ising", n_sites=6, h=0.8, eta=100.0)
    exact = DosEstimator(pathway="exact", **kw).fit()
    ff = DosEstimator(pathway="free_fermion", **kw).fit()
    assert np.max(np.abs(exact.dos_.density - ff.dos_.density)) <= 1e-8
    E = exact.dos_.energies[::97]
    assert np.max(np.abs(exact.predict(E) - ff.predict(E[:, None]))) <= 1e-8
    assert exact.score(E, ff.predict(E)) == pytest.approx(0.0, abs=1e-9)


def test_sampling_fit_populates_attributes():
    est = DosEstimator(n_sites=4, m=8, n_samples=6, eta=10.0, seed=2, batch_size=3).fit()
    assert est.series_.seeds == tuple(range(2, 8))
    assert est.dos_.spectral_mass == pytest.approx(8.0, abs=1e-8)
    assert est.density_ is est.dos_
    ref = DosEstimator(n_sites=4, pathway="exact", eta=10.0).fit()
    assert est.score(ref.dos_.energies, ref.dos_.density) < 0


def test_default_eta_is_ten_l_squared():
    est = DosEstimator(n_sites=3, pathway="exact").fit()
    assert est.params_.eta == 90.0


def test_thermodynamics_from_fitted_density():
    est = DosEstimator(n_sites=6, pathway="exact", eta=600.0).fit()
    T = np.linspace(1.0, 20.0, 30)
    curve = est.thermodynamics(T)
    assert curve.entropy is not None and curve.entropy[-1] <= math.log(32)


def test_thermal_average_of_energy_like_observable():
    est = DosEstimator(n_sites=4, h=100.0, sector="full", pathway="exact", eta=160.0, observables=("zz",)).fit()
    T = np.array([20.0, 100.0, 400.0])
    ref = exact_thermal_average(exact_diag(make_spec("ising", 4, 100.0, sector="full"), ("zz",)), T, "zz")
    assert np.max(np.abs(est.thermal_average("zz", T).values - ref)) <= 1e-3


def test_observable_must_be_requested():
    est = DosEstimator(n_sites=4, pathway="exact", eta=10.0).fit()
    with pytest.raises(ConfigurationError):
        est.spectral_observable("zz")


@pytest.mark.parametrize("kwargs", [
    {"pathway": "magic"},
    {"model": "hubbard", "n_sites": 3},
    {"model": "ising", "sector": "half"},
    {"model": "hubbard", "n_sites": 2, "pathway": "free_fermion"},
])
def test_invalid_configurations(kwargs):
    with pytest.raises(ConfigurationError):
        DosEstimator(**kwargs).fit()


def test_make_spec_sectors():
    assert make_spec("ising", 4).sector == (0,)
    assert make_spec("ising", 4, sector="odd").sector == (1,)
    assert make_spec("ising", 4, sector="full").sector is None
    assert make_spec("hubbard", 4).sector == (2, 2)
    assert make_spec("hubbard", 4, sector=(3, 1)).sector == (3, 1)
