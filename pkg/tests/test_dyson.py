import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cuspstats import dyson
from cuspstats.errors import DomainError
from cuspstats.profile import build_explicit, build_flat, build_two_block


def _iterate(V, w, z, n=20000):
    """Plain damped fixed-point iteration of -1/m = z + S m, a solver-independent oracle."""
    S = V * w[None, :]
    m = np.full(len(w), 1j)
    for _ in range(n):
        m = 0.5 * m + 0.5 * (-1.0 / (z + S @ m))
    return m


@settings(max_examples=50, deadline=None)
@given(x=st.floats(-4, 4), y=st.floats(1e-3, 5))
def test_semicircle_equation(x, y):
    z = complex(x, y)
    m = dyson.m_semicircle(z)
    assert abs(1 / m + z + m) < 1e-10 * (1 + abs(z))
    assert m.imag > 0


def test_semicircle_lower_half_plane():
    z = 0.3 - 0.2j
    assert dyson.m_semicircle(z) == pytest.approx(np.conj(dyson.m_semicircle(np.conj(z))))


@pytest.mark.parametrize("z", [1j, 0.5 + 1e-6j, -2.5 + 0.01j, 2.0 + 1e-4j, 3 - 1j])
def test_flat_matches_semicircle(z):
    p = build_flat(100)
    assert np.max(np.abs(dyson.solve_vde(p, z).m - dyson.m_semicircle(z))) < 1e-10


def test_flat_density_at_origin():
    p = build_flat(100)
    assert dyson.rho_many(p, np.array([0.0]))[0] == pytest.approx(1 / math.pi, abs=1e-8)


def test_flat_density_grid_and_support():
    p = build_flat(100)
    grid = dyson.density_grid(p, (-3, 3), 301)
    assert grid.rho_values[150] == pytest.approx(0.31831, abs=1e-5)
    assert len(grid.support_intervals) == 1
    a, b = grid.support_intervals[0]
    assert a == pytest.approx(-2, abs=1e-8) and b == pytest.approx(2, abs=1e-8)
    assert grid.mass_error < 1e-8
    sc = np.sqrt(np.maximum(4 - grid.energies**2, 0)) / (2 * np.pi)
    assert np.max(np.abs(grid.rho_values - sc)) < 1e-6


def test_two_block_against_plain_iteration():
    p = build_two_block(1000, 0.3, 0.1, 1.2, 0.1)
    w, V = p.reduced()
    for z in (0.3 + 0.5j, -1.0 + 0.2j, 0.0 + 2.0j):
        ref = _iterate(V, w, z)
        assert np.max(np.abs(dyson.solve_vde(p, z).m - ref)) < 1e-10


def test_explicit_equals_block_reduced():
    p = build_two_block(12, 0.25, 0.2, 1.0, 0.5)
    q = build_explicit(p.full_matrix())
    z = 0.4 + 0.3j
    mb = dyson.solve_vde(p, z).m[p.block_index()]
    me = dyson.solve_vde(q, z).m
    assert np.max(np.abs(mb - me)) < 1e-10


@settings(max_examples=25, deadline=None)
@given(x=st.floats(-3, 3), y=st.floats(1e-4, 2))
def test_two_block_solution_properties(x, y):
    p = build_two_block(1000, 0.3, 0.1, 1.2387, 0.1)
    pt = dyson.solve_vde(p, complex(x, y))
    S = p.reduced_operator()
    assert np.all(pt.m.imag > 0)
    assert np.max(np.abs(1 / pt.m + complex(x, y) + S @ pt.m)) < 1e-9
    conj = dyson.solve_vde(p, complex(x, -y))
    assert np.allclose(conj.m, np.conj(pt.m), atol=1e-12)


def test_real_argument_rejected():
    with pytest.raises(DomainError):
        dyson.solve_vde(build_flat(10), 0.5)


def test_boundary_value_inside_bulk():
    p = build_flat(10)
    pt = dyson.solve_boundary(p, 0.7)
    assert pt.m[0] == pytest.approx(dyson.m_semicircle(0.7 + 1e-300j), abs=1e-10)
    assert pt.polished


def test_two_block_mass(cusp_profile):
    grid = dyson.density_grid(cusp_profile, (-3, 3), 3001)
    # the interior cusp is located only to grid resolution
    assert grid.mass_error < 1e-5
    assert np.all(grid.rho_values >= 0)


def test_density_grid_validation():
    with pytest.raises(DomainError):
        dyson.density_grid(build_flat(10), (1, -1), 10)
