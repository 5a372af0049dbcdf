import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cuspstats import kernels as kn
from cuspstats.errors import DomainError, PrecisionError
from cuspstats.profile import builtin_test_functions, test_function

BUMP = test_function("bump")
G0 = math.exp(-1.0)
# frozen once from an independent substitution-based integrator at tol 1e-10
VAR_EDGE_BUMP = 0.03772670373030104
VAR_CUSP_BUMP = 0.06397317782070987
OPTS = kn.QuadOptions(tol=1e-10)


# ---------------------------------------------------------------- kernels

def test_kernel_values():
    assert kn.kernel_cusp(1.0, -1.0) == pytest.approx(6.0, abs=1e-15)
    assert kn.kernel_edge(4.0, 1.0) == pytest.approx(2.5, abs=1e-15)
    assert kn.kernel("bulk", 0.3, 7.0) == 2.0


@settings(max_examples=200, deadline=None)
@given(t=st.floats(-1e3, 1e3).filter(lambda t: abs(t) > 1e-6))
def test_diagonals_equal_two(t):
    a = abs(t)
    assert kn.kernel_edge(a, a) == pytest.approx(2.0, abs=1e-12)
    assert kn.kernel_cusp(t, t) == pytest.approx(2.0, abs=1e-12)
    assert kn.kernel_min(t, t) == pytest.approx(2.0, abs=1e-12)
    u = math.copysign(a + 1.0 + 1e-6, t)
    assert kn.kernel_gap(u, u) == pytest.approx(2.0, abs=1e-12)


def test_kernel_symmetry_random():
    rng = np.random.default_rng(5)
    x, y = rng.uniform(-20, 20, (2, 100000))
    assert np.array_equal(kn.kernel_cusp(x, y), kn.kernel_cusp(y, x))
    assert np.array_equal(kn.kernel_min(x, y), kn.kernel_min(y, x))
    ax, ay = np.abs(x) + 1e-3, np.abs(y) + 1e-3
    assert np.array_equal(kn.kernel_edge(ax, ay), kn.kernel_edge(ay, ax))
    gx, gy = np.sign(x) * (np.abs(x) + 1.001), np.sign(y) * (np.abs(y) + 1.001)
    assert np.array_equal(kn.kernel_gap(gx, gy), kn.kernel_gap(gy, gx))


@pytest.mark.parametrize("call", [lambda: kn.kernel_edge(-1.0, 1.0), lambda: kn.kernel_gap(0.5, 2.0),
                                  lambda: kn.kernel_cusp(0.0, 0.0), lambda: kn.kernel("hat", 1, 1)])
def test_kernel_domain_errors(call):
    with pytest.raises(DomainError):
        call()


def test_cusp_antiderivative():
    x, y, h = 0.7, -1.3, 1e-6
    dA = (kn.cusp_antiderivative(x, y + h) - kn.cusp_antiderivative(x, y - h)) / (2 * h)
    assert -dA == pytest.approx(kn.kernel_cusp(x, y) / (x - y) ** 2, rel=1e-6)


# ---------------------------------------------------------------- cubic branches

def test_cubic_branch_values():
    assert kn.cubic_k(1.0) == pytest.approx(1.0, abs=1e-14)
    assert kn.cubic_k(-1.0) == pytest.approx(-1.0, abs=1e-14)
    assert kn.cubic_q(0.0) == pytest.approx(1j * math.sqrt(3), abs=1e-14)
    rk, _ = kn.cubic_residuals(np.array([5.0]))
    assert rk[0] < 1e-12


def test_cubic_residuals_high_precision():
    pos = np.logspace(-6, 6, 25)
    lam = np.concatenate([-pos, pos])
    rk, rq = kn.cubic_residuals(lam, dps=50)
    assert rk.max() < 1e-12 and rq.max() < 1e-12


@settings(max_examples=100, deadline=None)
@given(lam=st.floats(-1e3, 1e3))
def test_cubic_residuals_float64(lam):
    rk, rq = kn.cubic_residuals(np.array([lam]))
    scale = 1 + abs(lam)
    assert rk[0] < 1e-12 * scale and rq[0] < 1e-12 * scale


# ---------------------------------------------------------------- shape functions

def test_shape_cusp_value():
    h = kn.shape_h(kn.ShapeFunctionSpec("cusp", psi=1.0, c_star=2.0), 1.0)
    # the four-digit reference value is rounded loosely
    assert h == pytest.approx(complex(0.7321, 1.2679), abs=1e-3)
    assert h == pytest.approx(math.pi ** (1 / 3) * np.exp(1j * math.pi / 3), abs=1e-14)


def test_shape_gap_far_edge_continuity():
    sigma, psi, dh = -0.4, 3.0, 2e-3
    spec = kn.ShapeFunctionSpec("small-gap", psi=psi, sigma=sigma, Delta_hat=dh)
    w = (1 - math.copysign(1, sigma)) * dh / 2
    # k(1) = 1 at the far edge: h = (|sigma|/3psi)(1 - sign sigma)
    assert kn.shape_h(spec, w) == pytest.approx(abs(sigma) / (3 * psi) * 2, abs=1e-14)


def test_shape_minimum_at_origin():
    spec = kn.ShapeFunctionSpec("small-minimum", psi=2.0, rho0=0.1)
    assert abs(kn.shape_h(spec, 0.0)) < 1e-15


@settings(max_examples=100, deadline=None)
@given(w=st.floats(-0.05, 0.05))
def test_shape_upper_half_plane(w):
    specs = [kn.ShapeFunctionSpec("cusp", psi=2.0),
             kn.ShapeFunctionSpec("simple-edge", sigma=-1.5),
             kn.ShapeFunctionSpec("simple-edge", sigma=0.7),
             kn.ShapeFunctionSpec("small-gap", psi=3.0, sigma=-0.4, Delta_hat=1e-3),
             kn.ShapeFunctionSpec("small-gap", psi=3.0, sigma=0.4, Delta_hat=1e-3),
             kn.ShapeFunctionSpec("small-minimum", psi=3.0, rho0=0.05)]
    for sp in specs:
        assert kn.shape_h(sp, w).imag >= -1e-12


def test_shape_spec_validation():
    with pytest.raises(DomainError):
        kn.ShapeFunctionSpec("cusp", psi=-1.0)
    with pytest.raises(DomainError):
        kn.ShapeFunctionSpec("simple-edge", sigma=0.0)
    with pytest.raises(DomainError):
        kn.ShapeFunctionSpec("small-gap", psi=1.0, sigma=1.0)
    with pytest.raises(DomainError):
        kn.shape_h(kn.ShapeFunctionSpec("cusp", psi=1.0), 0.5)


# ---------------------------------------------------------------- intermediate kernel

def test_intermediate_kernel_cusp_reduction():
    spec = kn.ShapeFunctionSpec("cusp", psi=1.0)
    w, wt = 1e-3, -2e-3
    lhs = kn.intermediate_kernel(spec, w, wt) * (w - wt) ** 2
    # w = x^3 turns K(w, w~) dw dw~ into K_cusp(x, y) / (x - y)^2 dx dy
    x, y = np.cbrt(w), np.cbrt(wt)
    rhs = kn.kernel_cusp(x, y) / (9 * x**2 * y**2 * (x - y) ** 2) * (w - wt) ** 2
    assert lhs == pytest.approx(rhs, rel=1e-8)


def test_intermediate_kernel_zero_in_gap():
    spec = kn.ShapeFunctionSpec("small-gap", psi=3.0, sigma=-0.4, Delta_hat=1e-3)
    # for sigma < 0 the gap occupies 0 < w < Delta_hat
    assert kn.intermediate_kernel(spec, 5e-4, -1e-3) == 0.0


@pytest.mark.parametrize("spec,w", [
    (kn.ShapeFunctionSpec("cusp", psi=1.0), 1e-3),
    (kn.ShapeFunctionSpec("small-gap", psi=3.0, sigma=-0.4, Delta_hat=1e-3), -2e-3),
    (kn.ShapeFunctionSpec("small-minimum", psi=3.0, rho0=0.05), 1e-4)])
def test_intermediate_kernel_diagonal_limit(spec, w):
    d = 1e-7 * abs(w)
    assert kn.intermediate_kernel(spec, w, w + d) * d**2 == pytest.approx(2.0, abs=1e-4)
    with pytest.raises(DomainError):
        kn.intermediate_kernel(spec, w, w)


# ---------------------------------------------------------------- functionals

def _bulk_oracle(g, n=400):
    """Bulk functional by tensor Gauss-Legendre with the outer region done in closed form."""
    x, wx = np.polynomial.legendre.leggauss(n)
    y, wy = np.polynomial.legendre.leggauss(n + 1)
    gx, gy = g.eval(x), g.eval(y)
    inner = np.sum(wx[:, None] * wy[None, :]
                   * ((gx[:, None] - gy[None, :]) / (x[:, None] - y[None, :])) ** 2)
    outer = 2 * np.sum(wy * gy**2 * (1 / (1 - y) + 1 / (1 + y)))
    return (inner + outer) / (2 * math.pi**2)


@pytest.mark.parametrize("name", builtin_test_functions())
def test_bulk_against_independent_integrator(name):
    g = test_function(name)
    v = kn.variance(kn.KernelSpec("bulk", -math.inf), g, OPTS).value
    assert v == pytest.approx(_bulk_oracle(g), rel=1e-6)


def test_frozen_edge_and_cusp_values():
    assert kn.variance(kn.KernelSpec("edge", math.inf, 1), BUMP, OPTS).value == pytest.approx(
        VAR_EDGE_BUMP, rel=1e-8)
    assert kn.variance(kn.KernelSpec("cusp", 0.0), BUMP, OPTS).value == pytest.approx(
        VAR_CUSP_BUMP, rel=1e-8)


def test_zero_function():
    z = test_function("zero")
    for spec in (kn.KernelSpec("edge", math.inf), kn.KernelSpec("cusp", 0.0),
                 kn.KernelSpec("gap", 1.0), kn.KernelSpec("minimum", -1.0)):
        assert kn.variance(spec, z).value == 0.0
    scan = kn.variance_continuity_scan(z, [1.0, 0.1], "gap")
    assert scan.values == [0.0, 0.0]


def test_bias_closed_forms():
    assert kn.bias(kn.KernelSpec("edge", math.inf), BUMP) == pytest.approx(G0 / 4)
    assert kn.bias(kn.KernelSpec("cusp", 0.0), BUMP) == pytest.approx(G0 / 3)
    assert kn.bias(kn.KernelSpec("bulk", -math.inf), BUMP) == 0.0


def test_gap_bias_limits():
    small = kn.bias(kn.KernelSpec("gap", 1e-5), BUMP)
    large = kn.bias(kn.KernelSpec("gap", 1e5), BUMP)
    assert small == pytest.approx(G0 / 3, abs=1e-4)
    assert large == pytest.approx(G0 / 4, abs=1e-4)


def test_gap_bias_integral_rate():
    alphas = np.logspace(-4, -1, 7)
    dev = [abs(kn.gap_bias_integral(BUMP, a) - G0 / 6) for a in alphas]
    slope = np.polyfit(np.log(alphas), np.log(dev), 1)[0]
    assert slope == pytest.approx(2 / 3, abs=0.15)


@pytest.mark.parametrize("name", builtin_test_functions())
@pytest.mark.parametrize("s", [1, -1])
def test_edge_norm_identity(name, s):
    g = test_function(name)
    v = kn.variance(kn.KernelSpec("edge", math.inf, s), g, OPTS).value
    u = lambda x: g.eval(s * np.asarray(x) ** 2)
    du = lambda x: 2 * s * np.asarray(x) * g.eval_d1(s * np.asarray(x) ** 2)
    h = kn.h_half_seminorm_sq(u, (-1, 1), OPTS, du=du).value
    assert v == pytest.approx(h / (4 * math.pi**2), rel=1e-5)


def test_seminorm_translation_invariance():
    a = kn.h_half_seminorm_sq(BUMP.eval, (-1, 1), OPTS, du=BUMP.eval_d1).value
    b = kn.h_half_seminorm_sq(lambda x: BUMP.eval(np.asarray(x) - 0.37), (-0.63, 1.37), OPTS,
                              du=lambda x: BUMP.eval_d1(np.asarray(x) - 0.37)).value
    assert a == pytest.approx(b, rel=1e-8)
    assert a == pytest.approx(2 * math.pi**2 * _bulk_oracle(BUMP), rel=1e-6)


def test_seminorm_zero():
    assert kn.h_half_seminorm_sq(lambda x: 0 * np.asarray(x), (-1, 1)).value == 0.0


@pytest.mark.parametrize("spec", [kn.KernelSpec("gap", 0.3, 1), kn.KernelSpec("gap", 3.0, -1),
                                  kn.KernelSpec("minimum", -0.5), kn.KernelSpec("minimum", -20.0)])
def test_variance_nonnegative(spec):
    for name in builtin_test_functions():
        assert kn.variance(spec, test_function(name), kn.QuadOptions(tol=1e-8)).value >= 0


def test_continuity_toward_limits():
    o = kn.QuadOptions(tol=1e-8)
    assert kn.variance_continuity_scan(BUMP, [1.0, 0.1, 0.01], "gap", quad_opts=o).strictly_decreasing
    assert kn.variance_continuity_scan(BUMP, [10.0, 100.0, 1000.0], "gap",
                                       quad_opts=o).strictly_decreasing
    assert kn.variance_continuity_scan(BUMP, [-10.0, -100.0, -1000.0], "minimum",
                                       quad_opts=o).strictly_decreasing
    assert kn.variance_continuity_scan(BUMP, [-1.0, -0.1, -0.01], "minimum",
                                       quad_opts=o).strictly_decreasing


def test_precision_error_carries_partial_value():
    with pytest.raises(PrecisionError) as exc:
        kn.variance(kn.KernelSpec("cusp", 0.0), BUMP, kn.QuadOptions(tol=1e-16, max_panels=40))
    assert exc.value.value is not None


def test_spec_validation():
    for args in [("gap", 0.0), ("minimum", 1.0), ("cusp", 1.0), ("edge", 1.0, 1), ("torus",),
                 ("edge", math.inf, 0)]:
        with pytest.raises(DomainError):
            kn.KernelSpec(*args)
