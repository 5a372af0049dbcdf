import numpy as np
import pytest

from cuspstats import dyson, singularity, tuning


def test_cached_cusp_solves_the_singular_system():
    t = tuning.cached_tuning()["cusp"]
    p = tuning.tuned_profile("cusp")
    pt = singularity.refine_singular_point(p, t["E0"], cusp=True)
    assert pt.E == pytest.approx(t["E0"], abs=1e-9)
    assert np.allclose(pt.m.real, t["m0"], atol=1e-7)


def test_family_shifts():
    base = tuning.tuned_profile("cusp").block_variances[0, 1]
    assert tuning.tuned_profile("gap").block_variances[0, 1] > base
    assert tuning.tuned_profile("minimum").block_variances[0, 1] < base
    with pytest.raises(ValueError):
        tuning.tuned_profile("plateau")


def test_minimum_density_positive():
    p = tuning.tuned_profile("minimum")
    E0 = tuning.tuned_E0("minimum")
    rho = dyson.rho_many(p, np.array([E0 - 1e-3, E0, E0 + 1e-3]))
    assert rho[1] > 0 and rho[1] <= rho[0] and rho[1] <= rho[2]
