import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cuspstats import dyson, stability
from cuspstats.profile import build_flat, build_two_block

TWO_BLOCK = build_two_block(1000, 0.3, 0.1, 1.2, 0.1)


def _pt(p, z):
    return stability.point_at(p, z)


def test_flat_beta_closed_form():
    # K = 1 reduced system: B = 1 - m(z) m(zeta)
    p = build_flat(100)
    for z, zeta in [(1j, 1j), (0.5 + 0.1j, -0.3 + 0.2j), (2.1 + 1e-3j, 1.9 - 1e-2j)]:
        st_ = stability.build_stability(p, _pt(p, z), _pt(p, zeta), check_branch=False)
        ref = 1 - dyson.m_semicircle(z) * dyson.m_semicircle(zeta)
        assert st_.beta == pytest.approx(ref, abs=1e-12)


def test_flat_spectator_flag():
    p = build_flat(100)
    st_ = stability.build_stability(p, _pt(p, 1j), _pt(p, 1j))
    assert st_.has_spectator


@settings(max_examples=20, deadline=None)
@given(x=st.floats(-2, 2), y=st.floats(0.01, 1), u=st.floats(-2, 2), v=st.floats(-1, 1))
def test_duality(x, y, u, v):
    if abs(v) < 1e-3:
        v = 0.1
    z, zeta = complex(x, y), complex(u, v)
    a = stability.build_stability(TWO_BLOCK, _pt(TWO_BLOCK, z), _pt(TWO_BLOCK, zeta),
                                  check_branch=False)
    b = stability.build_stability(TWO_BLOCK, _pt(TWO_BLOCK, zeta), _pt(TWO_BLOCK, z),
                                  check_branch=False)
    assert np.allclose(np.sort_complex(a.eigenvalues), np.sort_complex(b.eigenvalues), atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(x=st.floats(-2, 2), y=st.floats(0.01, 1))
def test_eigen_residual(x, y):
    z = complex(x, y)
    pt = _pt(TWO_BLOCK, z)
    st_ = stability.build_stability(TWO_BLOCK, pt, pt, check_branch=False)
    r = st_.right_vectors[:, st_.index]
    assert np.linalg.norm(st_.matrix @ r - st_.beta * r) < 1e-10 * (1 + np.linalg.norm(r))


@pytest.mark.parametrize("z", [0.3 + 0.2j, -1.1 + 0.05j, 0.0 + 1.0j])
def test_m_prime_by_finite_difference(z):
    h = 1e-5
    pt = _pt(TWO_BLOCK, z)
    fd = (dyson.solve_vde(TWO_BLOCK, z + h).m - dyson.solve_vde(TWO_BLOCK, z - h).m) / (2 * h)
    mp = stability.m_prime(TWO_BLOCK, pt)
    assert np.max(np.abs(mp - fd)) / np.max(np.abs(mp)) < 1e-6


def test_flat_sigma_at_edge():
    p = build_flat(100)
    pt = stability.point_at(p, 2.0)
    sigma, psi = stability.sigma_psi(p, pt)
    assert sigma == pytest.approx(-math.pi**3, rel=1e-6)


@pytest.mark.parametrize("E", [-1.0, 0.0, 0.5, 1.5])
def test_flat_psi_vanishes_in_bulk(E):
    p = build_flat(100)
    _, psi = stability.sigma_psi(p, stability.point_at(p, E))
    assert abs(psi) < 1e-12


@pytest.mark.parametrize("z", [0.3 + 0.2j, 0.364 + 1e-3j, 1.0 + 0.5j])
def test_one_minus_F_identity(z):
    lhs, rhs = stability.one_minus_F_identity(TWO_BLOCK, _pt(TWO_BLOCK, z))
    assert lhs == pytest.approx(rhs, rel=1e-8)


def test_beta_expansion_near_cusp(cusp_profile, cusp_E0):
    z = cusp_E0 + 1e-3j
    rep = stability.beta_expansion_check(cusp_profile, cusp_E0, z, z)
    assert rep["rel_error"] < 0.1


def test_beta_expansion_off_diagonal(cusp_profile, cusp_E0):
    rep = stability.beta_expansion_check(cusp_profile, cusp_E0, cusp_E0 + 1e-3 + 5e-4j,
                                         cusp_E0 - 5e-4 + 1e-3j)
    assert rep["rel_error"] < 0.1
    # the two-point form is a leading-order approximation as well
    assert rep["alternative_rel_error"] < 0.25


def test_beta_expansion_trivial_point(cusp_profile, cusp_E0):
    rep = stability.beta_expansion_check(cusp_profile, cusp_E0, cusp_E0, cusp_E0)
    assert abs(rep["beta"]) < 1e-6 and abs(rep["expansion_value"]) < 1e-6


def test_beta_conjugate_side(cusp_profile, cusp_E0):
    rep = stability.beta_conjugate_check(cusp_profile, cusp_E0 + 2e-3j, cusp_E0 + 1e-3 + 1e-3j)
    assert rep["rel_error"] < 0.1


def test_cubic_residual_at_cusp(cusp_profile, cusp_E0):
    base = stability.point_at(cusp_profile, cusp_E0)
    for w in (1e-3, -1e-3, 1e-4j):
        rep = stability.verify_cubic(cusp_profile, base, stability.point_at(cusp_profile, cusp_E0 + w))
        assert rep["abs_residual"] < 10 * rep["error_scale"]


def test_branch_consistency_near_singularity(cusp_profile, cusp_E0):
    for d in (1e-2, 1e-3, 1e-4):
        pt = _pt(cusp_profile, cusp_E0 + 1j * d)
        stability.build_stability(cusp_profile, pt, pt, check_branch=True)  # raises on mismatch
