import math

import numpy as np
import pytest

from cuspstats import dyson, singularity, tuning
from cuspstats.profile import build_flat
from cuspstats.singularity import SingularityReport, alpha_hat, fluctuation_scale


@pytest.fixture(scope="module")
def cusp_reports(cusp_profile):
    return singularity.classify(dyson.density_grid(cusp_profile, (-2, 2), 4001), cusp_profile)


def test_flat_two_edges():
    p = build_flat(1000)
    reps = singularity.classify(dyson.density_grid(p, (-3, 3), 6001), p)
    assert [(r.kind, r.s_hat) for r in reps] == [("left-edge", 1), ("right-edge", -1)]
    assert reps[0].E0 == pytest.approx(-2, abs=1e-9)
    assert reps[1].E0 == pytest.approx(2, abs=1e-9)
    assert all(math.isinf(r.Delta) for r in reps)
    assert reps[1].sigma < 0 < reps[0].sigma


def test_tuned_cusp_report(cusp_reports, cusp_E0):
    cusps = [r for r in cusp_reports if r.kind == "exact-cusp"]
    # the symmetric family carries a mirror cusp at -E0
    assert sorted(round(r.E0, 6) for r in cusps) == [round(-cusp_E0, 6), round(cusp_E0, 6)]
    r = singularity.find_report(cusps, cusp_E0)
    assert r.Delta < 1e-6 and r.rho0 == 0.0
    assert abs(r.sigma) <= 1e-3 and r.psi > 0
    assert 0.1 < r.psi + r.sigma**2 < 10


def test_gap_edges_match_bisection():
    p = tuning.tuned_profile("gap")
    E0 = tuning.tuned_E0("gap")
    reps = singularity.classify(dyson.density_grid(p, (0, 1), 2001), p)
    r = singularity.find_report(reps, E0)
    # the tuned point is the lower gap edge; its partner sits Delta above
    assert r.kind == "right-edge"
    hi = singularity.find_report(reps, E0 + r.Delta, tol=1e-8)
    assert hi.kind == "left-edge" and hi.Delta == r.Delta

    def edge(a, b, inside_left):
        for _ in range(60):
            c = 0.5 * (a + b)
            if (dyson.rho_many(p, np.array([c]))[0] > 1e-9) == inside_left:
                a = c
            else:
                b = c
        return 0.5 * (a + b)

    mid = E0 + 0.5 * r.Delta
    assert dyson.rho_many(p, np.array([mid]))[0] < 1e-9
    left = edge(mid - 0.01, mid, True)
    right = edge(mid, mid + 0.01, False)
    assert r.Delta == pytest.approx(right - left, abs=1e-6)
    sigma_cmp = abs(r.sigma) / min(1.0, r.Delta ** (1 / 3))
    assert 1 / 50 < sigma_cmp < 50
    assert abs(r.Delta / r.Delta_hat - 1) < 10 * abs(r.sigma)


def test_small_minimum_report():
    p = tuning.tuned_profile("minimum")
    reps = singularity.classify(dyson.density_grid(p, (0, 1), 2001), p)
    r = singularity.find_report(reps, tuning.tuned_E0("minimum"))
    assert r.kind == "nonzero-minimum" and r.rho0 > 0


def _report(kind, Delta, rho0=0.0, psi=1.0, Delta_hat=0.0):
    return SingularityReport(E0=0.0, kind=kind, Delta=Delta, s_hat=0, rho0=rho0, sigma=0.0,
                             psi=psi, Delta_hat=Delta_hat)


def test_fluctuation_scale_formulas():
    assert fluctuation_scale(_report("exact-cusp", 0.0), None, 10**6) == pytest.approx(10**-4.5)
    assert fluctuation_scale(_report("right-edge", 2.0), None, 10**6) == pytest.approx(1e-4)


def test_fluctuation_scale_constant_density():
    E = np.linspace(-1, 1, 2001)
    grid = dyson.DensityGrid(E, np.full_like(E, 0.2), np.zeros_like(E), [[-1, 1]])
    eta = fluctuation_scale(_report("nonzero-minimum", 0.0, rho0=0.2), grid, 1000)
    assert eta == pytest.approx(singularity.fluctuation_scale_min_density(0.2, 1000), rel=1e-9)
    assert eta == pytest.approx(1 / (2 * 1000 * 0.2), rel=1e-9)


def test_alpha_hat_arithmetic():
    assert alpha_hat(_report("exact-cusp", 0.0), 1e-3) == 0.0
    assert alpha_hat(_report("right-edge", 1e-3, Delta_hat=2e-3), 1e-3) == pytest.approx(1.0)
    assert alpha_hat(_report("right-edge", 1.0, Delta_hat=2e-3), 1e-3) == math.inf
    psi, eta0 = 2.0, 1e-3
    rho0 = (math.sqrt(27) * math.pi * eta0 / (2 * psi)) ** (1 / 3)
    assert alpha_hat(_report("nonzero-minimum", 0.0, rho0=rho0, psi=psi), eta0) == pytest.approx(-1.0)


def test_regime_mapping():
    assert singularity.regime_for(math.inf, -1) == ("edge", math.inf, -1)
    assert singularity.regime_for(-math.inf, 0)[0] == "bulk"
    assert singularity.regime_for(0.0, 0)[0] == "cusp"
    assert singularity.regime_for(0.5, 1) == ("gap", 0.5, 1)
    assert singularity.regime_for(-0.5, 0)[0] == "minimum"


def test_density_scaling_slopes(cusp_profile, cusp_E0):
    assert singularity.rho_scaling_slope(build_flat(100), 2.0, -1) == pytest.approx(0.5, abs=0.05)
    for d in (-1, 1):
        assert singularity.rho_scaling_slope(cusp_profile, cusp_E0, d) == pytest.approx(1 / 3, abs=0.05)
