"""Universal shape functions and kernels, and the limiting variance and bias functionals.

Every variance is written as (1/4 pi^2) * iint (phi(u) - phi(v))^2 / (u - v)^2 W(u, v),
where phi is the test function composed with the regime's change of variables
and W collects the kernel and Jacobian; W is smooth across the diagonal and
equals 2 there.  The integral splits into a compact box S x S, on which phi can
be nonzero, and a one-dimensional tail 2 int_S phi^2 T, with T the kernel mass
outside S (closed form where available).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import DomainError, PrecisionError
from .profile import TestFunction
from .quadrature import QuadOptions, QuadResult, adaptive_2d

REGIMES = ("edge", "cusp", "gap", "minimum", "bulk")
SHAPE_CASES = ("cusp", "simple-edge", "small-gap", "small-minimum")
C_STAR = 0.05
_E13 = cmath.exp(1j * math.pi / 3)
_E23 = cmath.exp(2j * math.pi / 3)
# below this separation the difference quotient is replaced by the derivative at the midpoint
DIAG_EPS = 1e-5


@dataclass(frozen=True)
class KernelSpec:
    regime: str
    alpha: float = math.nan
    s: int = 1

    def __post_init__(self):
        r, a = self.regime, self.alpha
        if r not in REGIMES:
            raise DomainError(f"unknown regime {r!r}")
        if r in ("edge", "gap") and self.s not in (1, -1):
            raise DomainError("orientation s must be +1 or -1")
        if r == "gap" and not (0 < a < math.inf):
            raise DomainError("gap regime needs 0 < alpha < inf")
        if r == "minimum" and not (-math.inf < a < 0):
            raise DomainError("minimum regime needs -inf < alpha < 0")
        if r == "cusp" and not (a == 0 or math.isnan(a)):
            raise DomainError("cusp regime has alpha = 0")
        if r == "edge" and not (a == math.inf or math.isnan(a)):
            raise DomainError("edge regime has alpha = +inf")
        if r == "bulk" and not (a == -math.inf or math.isnan(a)):
            raise DomainError("bulk regime has alpha = -inf")

    @classmethod
    def from_alpha(cls, alpha: float, s: int = 1) -> "KernelSpec":
        if alpha == math.inf:
            return cls("edge", math.inf, s)
        if alpha == -math.inf:
            return cls("bulk", -math.inf, 1)
        if alpha == 0:
            return cls("cusp", 0.0, 1)
        if alpha > 0:
            return cls("gap", alpha, s)
        return cls("minimum", alpha, 1)


@dataclass(frozen=True)
class ShapeFunctionSpec:
    case: str
    psi: float = math.nan
    sigma: float = math.nan
    Delta_hat: float = math.nan
    rho0: float = math.nan
    c_star: float = C_STAR

    def __post_init__(self):
        c = self.case
        if c not in SHAPE_CASES:
            raise DomainError(f"unknown shape case {c!r}")
        if c in ("cusp", "small-minimum", "small-gap") and not self.psi > 0:
            raise DomainError(f"{c} needs psi > 0")
        if c in ("simple-edge", "small-gap") and not (np.isfinite(self.sigma) and self.sigma != 0):
            raise DomainError(f"{c} needs sigma != 0")
        if c == "small-gap" and not self.Delta_hat > 0:
            raise DomainError("small-gap needs Delta_hat > 0")
        if c == "small-minimum" and not self.rho0 > 0:
            raise DomainError("small-minimum needs rho0 > 0")
        if c == "cusp" and np.isfinite(self.sigma) and self.sigma != 0:
            raise DomainError("cusp shape needs sigma = 0")


# ---------------------------------------------------------------- cubic branches

def _cbrt_pos(x, mp):
    return mpmath.cbrt(x) if mp else x ** (1.0 / 3.0)


def _k_scalar(lam, mp=False):
    """Branch of k^3 - 3k + 2 lam = 0 with Im k > 0 off [-1, 1]."""
    if mp:
        lam = mpmath.mpf(lam)
        e1, e2 = mpmath.expjpi(mpmath.mpf(1) / 3), mpmath.expjpi(-mpmath.mpf(1) / 3)
        sqrt, acos, cos, pi = mpmath.sqrt, mpmath.acos, mpmath.cos, mpmath.pi
    else:
        lam = float(lam)
        e1, e2 = _E13, _E13.conjugate()
        sqrt, acos, cos, pi = math.sqrt, math.acos, math.cos, math.pi
    if lam >= 1:
        r = sqrt(lam * lam - 1)
        big = lam + r
        # lam - r computed as 1/(lam + r) to avoid cancellation
        return e1 * _cbrt_pos(big, mp) + e2 * _cbrt_pos(1 / big, mp)
    if lam <= -1:
        r = sqrt(lam * lam - 1)
        small = 1 / (-lam + r)  # = -lam - r
        return -e1 * _cbrt_pos(small, mp) - e2 * _cbrt_pos(-lam + r, mp)
    # |lam| < 1: principal cube roots of e^{+-i theta}
    theta = acos(lam)
    return (2 * cos((pi + theta) / 3)) + (mpmath.mpc(0) if mp else 0j)


def _q_scalar(lam, mp=False):
    """Branch of q^3 + 3q + 2 lam = 0 with q(0) = i sqrt(3)."""
    if mp:
        lam = mpmath.mpf(lam)
        e1, e2 = mpmath.expjpi(mpmath.mpf(1) / 3), mpmath.expjpi(mpmath.mpf(2) / 3)
        sqrt = mpmath.sqrt
    else:
        lam = float(lam)
        e1, e2 = _E13, _E23
        sqrt = math.sqrt
    r = sqrt(1 + lam * lam)
    if lam >= 0:
        plus = r + lam
        minus = 1 / plus
    else:
        minus = r - lam
        plus = 1 / minus
    return e1 * _cbrt_pos(plus, mp) + e2 * _cbrt_pos(minus, mp)


def _vectorize(fn, lam, dps):
    mp = dps is not None
    if mp:
        with mpmath.workdps(dps):
            if np.ndim(lam) == 0:
                return fn(lam, True)
            return [fn(x, True) for x in np.ravel(lam)]
    if np.ndim(lam) == 0:
        return complex(fn(lam))
    arr = np.asarray(lam, dtype=float)
    return np.array([fn(x) for x in arr.ravel()], dtype=complex).reshape(arr.shape)


def cubic_k(lam, dps: int | None = None):
    """k(lam) solving k^3 - 3k + 2 lam = 0 (float64, or mpmath at dps digits)."""
    return _vectorize(_k_scalar, lam, dps)


def cubic_q(lam, dps: int | None = None):
    """q(lam) solving q^3 + 3q + 2 lam = 0 (float64, or mpmath at dps digits)."""
    return _vectorize(_q_scalar, lam, dps)


def cubic_residuals(lam, dps: int | None = None):
    """Absolute residuals of both cubics at lam."""
    k, q = cubic_k(lam, dps), cubic_q(lam, dps)
    if dps is not None:
        with mpmath.workdps(dps):
            ks = k if isinstance(k, list) else [k]
            qs = q if isinstance(q, list) else [q]
            lams = np.ravel(lam)
            rk = [abs(a**3 - 3 * a + 2 * mpmath.mpf(l)) for a, l in zip(ks, lams)]
            rq = [abs(a**3 + 3 * a + 2 * mpmath.mpf(l)) for a, l in zip(qs, lams)]
            return np.array([float(x) for x in rk]), np.array([float(x) for x in rq])
    lam = np.asarray(lam, dtype=float)
    return np.abs(k**3 - 3 * k + 2 * lam), np.abs(q**3 + 3 * q + 2 * lam)


# ---------------------------------------------------------------- shape functions

def shape_h(spec: ShapeFunctionSpec, w: float) -> complex:
    """Explicit approximation h(w) of the unstable coefficient xi(E0, E0 + w)."""
    w = float(w)
    if abs(w) > spec.c_star:
        raise DomainError(f"|w| = {abs(w)} exceeds the validity radius {spec.c_star}")
    if spec.case == "cusp":
        amp = (math.pi / spec.psi) ** (1.0 / 3.0) * abs(w) ** (1.0 / 3.0)
        return amp * (_E13 if w >= 0 else _E23)
    if spec.case == "simple-edge":
        sg = math.copysign(1.0, spec.sigma)
        amp = math.sqrt(math.pi / abs(spec.sigma)) * math.sqrt(abs(w))
        if w == 0:
            return 0j
        return amp * (1j if math.copysign(1.0, w) == sg else complex(-sg))
    if spec.case == "small-gap":
        sg = math.copysign(1.0, spec.sigma)
        k = _k_scalar(sg + 2.0 * w / spec.Delta_hat)
        return abs(spec.sigma) / (3.0 * spec.psi) * (k - sg)
    r0 = spec.rho0
    q = _q_scalar(math.sqrt(27.0) * math.pi * w / (2.0 * spec.psi * r0**3))
    return r0 / math.sqrt(3.0) * (q - 1j * math.sqrt(3.0))


# ---------------------------------------------------------------- universal kernels

def _check(cond, msg):
    if not np.all(cond):
        raise DomainError(msg)


def _ordered(x, y):
    """(min, max) of the arguments, so that every kernel is exactly symmetric in floating point."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    return np.minimum(x, y), np.maximum(x, y)


def kernel_edge(x, y):
    x, y = _ordered(x, y)
    _check((x > 0) & (y > 0), "K_edge needs x, y > 0")
    return (x + y) / np.sqrt(x * y)


def kernel_cusp(x, y):
    x, y = _ordered(x, y)
    _check((x != 0) | (y != 0), "K_cusp is undefined at the origin")
    num = x**4 + y**4 + 2.0 * x * y * (x * x + y * y)
    return 3.0 * np.sign(x * y) * num / (x * x + x * y + y * y) ** 2


def _gap_numerator(x, y):
    """K_gap * sqrt(x^2 - 1) sqrt(y^2 - 1)."""
    a = (x * y - 1.0) * (3.0 * (4 * x * x - 1) * (4 * y * y - 1) + 8.0 * (x * x - y * y) ** 2)
    b = 2.0 * x * y * (x - y) ** 2 * (8.0 * x * y + 1.0)
    return 6.0 * (a + b) / (4 * x * x + 4 * x * y + 4 * y * y - 3.0) ** 2


def kernel_gap(x, y):
    x, y = _ordered(x, y)
    _check((np.abs(x) > 1) & (np.abs(y) > 1), "K_gap needs |x|, |y| > 1")
    return _gap_numerator(x, y) / (np.sqrt(x * x - 1.0) * np.sqrt(y * y - 1.0))


def kernel_min(x, y):
    x, y = _ordered(x, y)
    a = (x * y + 1.0) * (3.0 * (4 * x * x + 1) * (4 * y * y + 1) + 8.0 * (x * x - y * y) ** 2)
    b = 2.0 * x * y * (x - y) ** 2 * (8.0 * x * y - 1.0)
    den = np.sqrt(x * x + 1.0) * np.sqrt(y * y + 1.0) * (4 * x * x + 4 * x * y + 4 * y * y + 3.0) ** 2
    return 6.0 * (a + b) / den


def kernel(regime: str, x, y):
    fn = {"edge": kernel_edge, "cusp": kernel_cusp, "gap": kernel_gap,
          "minimum": kernel_min, "min": kernel_min}.get(regime)
    if fn is None:
        if regime == "bulk":
            return 2.0 * np.ones(np.broadcast(np.asarray(x), np.asarray(y)).shape)
        raise DomainError(f"unknown regime {regime!r}")
    return fn(x, y)


def cusp_antiderivative(x, y):
    """A(x, y) with -dA/dy = K_cusp(x, y)/(x - y)^2; continuous in y with A(x, 0) = 0."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    return 3.0 * np.sign(x * y) * (y * y + x * y) / (y**3 - x**3)


# ---------------------------------------------------------------- regime integrands

def _cbrt(x):
    return np.cbrt(x)


def _p_gap(x):
    return 4 * x**3 - 3 * x - 1.0


def _p_min(x):
    return 4 * x**3 + 3 * x


@dataclass
class _Problem:
    """phi, phi', the smooth weight W and the box / tail data of one regime."""

    phi: object
    dphi: object
    weight: object
    boxes: list
    tail: object  # callable u -> X'(u) * T(X(u)) (kernel mass outside the box)
    tail_breaks: list = field(default_factory=list)
    support: tuple | None = None  # where phi can be nonzero; defaults to the box hull


def _grid_boxes(breaks):
    """Tensor panels from axis breakpoints, so narrow features start on their own panels."""
    br = sorted(set(float(b) for b in breaks))
    iv = list(zip(br[:-1], br[1:]))
    return [(x0, x1, y0, y1) for (x0, x1) in iv for (y0, y1) in iv]


def _support_radius(g: TestFunction) -> float:
    a, b = g.support
    return max(abs(a), abs(b))


def _problem(spec: KernelSpec, g: TestFunction) -> _Problem:
    a, b = map(float, g.support)
    gf, g1 = g.eval, g.eval_d1
    r = spec.regime
    if r == "bulk":
        return _Problem(gf, g1, lambda u, v: np.full(np.shape(u), 2.0), [(a, b, a, b)],
                        lambda x: 2.0 * (1.0 / (x - a) + 1.0 / (b - x)))
    if r == "edge":
        s = spec.s
        lo, hi = (a, b) if s > 0 else (-b, -a)
        if hi <= 0:
            return None
        U = math.sqrt(hi)

        def weight(u, v):
            # K_edge(u^2, v^2) * 4uv / (u + v)^2 ; (u - v)/(u^2 - v^2) = 1/(u + v)
            return kernel_edge(u * u, v * v) * 4.0 * u * v / (u + v) ** 2

        return _Problem(lambda u: gf(s * u * u), lambda u: 2.0 * s * u * g1(s * u * u),
                        weight, _grid_boxes([0.0, math.sqrt(max(lo, 0.0)), U]),
                        lambda u: 2.0 * (1.0 / (U - u) + 1.0 / (U + u)))
    if r == "cusp":
        c, d = min(_cbrt(a), 0.0), max(_cbrt(b), 0.0)
        boxes = _grid_boxes([c, _cbrt(a), 0.0, _cbrt(b), d])

        def weight(u, v):
            return np.where((u == 0) & (v == 0), 0.0, kernel_cusp(u, v))

        return _Problem(lambda u: gf(u**3), lambda u: 3.0 * u * u * g1(u**3), weight, boxes,
                        lambda u: cusp_antiderivative(u, d) - cusp_antiderivative(u, c),
                        [0.0])
    if r == "gap":
        s, al = spec.s, spec.alpha
        M = _support_radius(g) / al
        # |p(x)| >= M for |x| >= X (p(-x) <= -2 for x >= 1, p increasing on x >= 1)
        X = 1.0 if M <= 0 else brentq(lambda x: _p_gap(x) - M, 1.0, 2.0 + M)
        X = max(X, brentq(lambda x: -_p_gap(-x) - M, 1.0, 2.0 + M) if M > 2 else 1.0)
        Us = math.acosh(X) if X > 1 else 1e-3
        # the box reaches past the support so the tail kernel stays smooth where phi != 0
        U = Us + 1.0

        def xmap(u):
            return np.sign(u) * np.cosh(u)

        def phi(u):
            return gf(s * al * _p_gap(xmap(u)))

        def dphi(u):
            x = xmap(u)
            return g1(s * al * _p_gap(x)) * s * al * (12 * x * x - 3.0) * np.sinh(np.abs(u))

        def weight(u, v):
            x, y = xmap(u), xmap(v)
            same = np.sign(u) == np.sign(v)
            h = 0.5 * (u - v)
            m = 0.5 * (u + v)
            # same branch: (u - v)/(cosh u - cosh v) = h / (sinh m sinh h)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio_same = np.where(np.abs(h) > 0, h / (np.sinh(m) * np.sinh(h)), 1.0 / np.sinh(m))
                ratio = np.where(same, np.sign(u) * ratio_same, (u - v) / (x - y))
            return ratio**2 * _gap_numerator(x, y)

        def tail(u):
            x = float(xmap(u))

            def integrand(t):
                y = math.cosh(t)
                return (_gap_numerator(x, y) / (x - y) ** 2
                        + _gap_numerator(x, -y) / (x + y) ** 2)

            # the two branches cancel to leading order; the sum decays like e^{-2t}
            val, _ = quad(integrand, U, U + 40.0, epsabs=1e-13, epsrel=1e-11, limit=200)
            return val

        return _Problem(phi, dphi, weight, _grid_boxes([-U, -Us, 0.0, Us, U]),
                        np.vectorize(tail, otypes=[float]), [0.0], (-Us, Us))
    if r == "minimum":
        al = spec.alpha
        M = _support_radius(g) / abs(al)
        Xs = brentq(lambda x: _p_min(x) - M, 0.0, 1.0 + M)
        X = 2.0 * Xs + 1.0

        def tail(x):
            f = lambda y: kernel_min(x, y) / (x - y) ** 2
            v1, _ = quad(f, -np.inf, -X, epsabs=1e-13, epsrel=1e-11, limit=200)
            v2, _ = quad(f, X, np.inf, epsabs=1e-13, epsrel=1e-11, limit=200)
            return v1 + v2

        return _Problem(lambda x: gf(al * _p_min(x)),
                        lambda x: g1(al * _p_min(x)) * al * (12 * x * x + 3.0),
                        kernel_min, _grid_boxes([-X, -Xs, Xs, X]),
                        np.vectorize(tail, otypes=[float]),
                        [], (-Xs, Xs))
    raise DomainError(f"unknown regime {r!r}")


def _dq_squared(phi, dphi, u, v, scale=1.0):
    """((phi(u) - phi(v))/(u - v))^2 with the derivative limit near the diagonal.

    scale is the length over which phi varies; the cut balances cancellation
    (eps scale / d) against truncation ((d / scale)^2).
    """
    d = u - v
    near = np.abs(d) < DIAG_EPS * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        q = (phi(u) - phi(v)) / d
    if np.any(near):
        q = np.where(near, dphi(0.5 * (u + v)), q)
    return q * q


def _tail_integral(prob: _Problem, tol: float):
    total, err = 0.0, 0.0
    if prob.support is not None:
        lo, hi = prob.support
    else:
        lo = min(b[0] for b in prob.boxes)
        hi = max(b[1] for b in prob.boxes)
    cuts = sorted({lo, hi, *[c for c in prob.tail_breaks if lo < c < hi]})
    for p0, p1 in zip(cuts[:-1], cuts[1:]):
        f = lambda u: float(prob.phi(np.array([u]))[0] ** 2 * prob.tail(np.array([u]))[0])
        val, e = quad(f, p0, p1, epsabs=tol / 10.0, epsrel=1e-12, limit=400)
        total += val
        err += e
    return 2.0 * total, 2.0 * err


def variance(spec: KernelSpec, g: TestFunction, quad_opts: QuadOptions | None = None) -> QuadResult:
    """Limiting variance Var_alpha(g) with an a posteriori error estimate."""
    opts = quad_opts or QuadOptions()
    if g.is_zero:
        return QuadResult(0.0, 0.0, 0)
    prob = _problem(spec, g)
    if prob is None:
        return QuadResult(0.0, 0.0, 0)
    scale = 1.0 / (4.0 * math.pi**2)
    inner_tol = opts.tol / scale
    lo, hi = prob.support if prob.support is not None else (
        min(b[0] for b in prob.boxes), max(b[1] for b in prob.boxes))
    width = hi - lo
    f = lambda u, v: _dq_squared(prob.phi, prob.dphi, u, v, width) * prob.weight(u, v)
    box = adaptive_2d(f, prob.boxes, QuadOptions(0.8 * inner_tol, opts.max_panels,
                                                 opts.min_width))
    tail, tail_err = _tail_integral(prob, 0.2 * inner_tol)
    value = scale * (box.value + tail)
    err = scale * (box.error_estimate + tail_err)
    if err > opts.tol:
        raise PrecisionError(f"variance error {err:.3e} above tolerance", value=value, error=err)
    if value < 0:
        if value < -err:
            raise PrecisionError("negative variance beyond the error estimate",
                                 value=value, error=err)
        value = 0.0
    return QuadResult(value, err, box.panels)


def bias(spec: KernelSpec, g: TestFunction, quad_opts: QuadOptions | None = None) -> float:
    """Limiting bias Bias_alpha(g)."""
    opts = quad_opts or QuadOptions()
    g0 = float(g.eval(np.array([0.0]))[0])
    r = spec.regime
    if r == "edge":
        return g0 / 4.0
    if r == "cusp":
        return g0 / 3.0
    if r == "bulk":
        return 0.0
    if r == "gap":
        s, al = spec.s, spec.alpha
        ga = lambda x: float(g.eval(np.array([s * al * _p_gap(x)]))[0])
        return (ga(1.0) + ga(-1.0)) / 4.0 - gap_bias_integral(g, al, s, opts.tol)
    al = spec.alpha
    M = _support_radius(g) / abs(al)
    X = brentq(lambda x: _p_min(x) - M, 0.0, 1.0 + M)
    f = lambda x: float(g.eval(np.array([al * _p_min(x)]))[0]) / ((4 * x * x + 1) * math.sqrt(x * x + 1))
    val, err = quad(f, -X, X, epsabs=opts.tol, epsrel=1e-12, limit=400)
    if err > opts.tol:
        raise PrecisionError("bias quadrature error above tolerance", value=val, error=err)
    return math.sqrt(3.0) / (2.0 * math.pi) * val


def gap_bias_integral(g: TestFunction, alpha: float, s: int = 1, tol: float = 1e-10) -> float:
    """(sqrt 3 / 2 pi) int_{|x|>1} g_alpha(x) / ((4x^2 - 1) sqrt(x^2 - 1)) dx via x = +-cosh u."""
    M = _support_radius(g) / alpha
    X = brentq(lambda x: _p_gap(x) - M, 1.0, 2.0 + M)
    if M > 2:
        X = max(X, brentq(lambda x: -_p_gap(-x) - M, 1.0, 2.0 + M))
    U = math.acosh(X)
    total = 0.0
    for sign in (1.0, -1.0):
        f = lambda u: float(g.eval(np.array([s * alpha * _p_gap(sign * math.cosh(u))]))[0]) / (
            4.0 * math.cosh(u) ** 2 - 1.0)
        val, err = quad(f, 0.0, U, epsabs=tol / 4, epsrel=1e-12, limit=400)
        if err > tol / 2:
            raise PrecisionError("gap bias quadrature error above tolerance", value=val, error=err)
        total += val
    return math.sqrt(3.0) / (2.0 * math.pi) * total


# ---------------------------------------------------------------- seminorm

def h_half_seminorm_sq(u, domain, quad_opts: QuadOptions | None = None, du=None) -> QuadResult:
    """iint (u(x) - u(y))^2/(x - y)^2 dx dy for u supported in domain = (a, b)."""
    opts = quad_opts or QuadOptions()
    a, b = map(float, domain)
    if not b > a:
        raise DomainError("seminorm domain needs a < b")
    fn = lambda x: np.asarray(u(x), dtype=float)
    if du is None:
        def dfn(x):
            h = DIAG_EPS * (b - a)
            return (fn(x + h) - fn(x - h)) / (2 * h)
    else:
        dfn = lambda x: np.asarray(du(x), dtype=float)
    prob = _Problem(fn, dfn, None, [(a, b, a, b)], lambda x: 1.0 / (x - a) + 1.0 / (b - x))
    f = lambda x, y: _dq_squared(fn, dfn, x, y, b - a)
    box = adaptive_2d(f, prob.boxes, QuadOptions(0.8 * opts.tol, opts.max_panels, opts.min_width))
    tail, tail_err = _tail_integral(prob, 0.2 * opts.tol)
    err = box.error_estimate + tail_err
    if err > opts.tol:
        raise PrecisionError("seminorm error above tolerance", value=box.value + tail, error=err)
    return QuadResult(box.value + tail, err, box.panels)


# ---------------------------------------------------------------- intermediate kernel

def _singular_term(sigma, psi, h, ht):
    num = ((sigma + psi * (h + ht)) ** 2 + 2 * psi**2 * h * ht) * (h - ht) ** 2
    den = (2 * sigma * h + 3 * psi * h * h) * (2 * sigma * ht + 3 * psi * ht * ht)
    return num / den


def _min_term(q, qt):
    return (q * q + 4 * q * qt + qt * qt - 3) * (q - qt) ** 2 / ((q * q + 1) * (qt * qt + 1))


def intermediate_kernel(spec: ShapeFunctionSpec, w: float, w_tilde: float) -> float:
    """Kernel in the energy variables w = E - E0 built from the shape function h.

    Returns 0 when either energy lies outside the support (h real there).
    """
    w, wt = float(w), float(w_tilde)
    if w == wt:
        raise DomainError("diagonal: use the limit (w - w~)^2 K -> 2")
    if spec.case == "small-minimum":
        lam = math.sqrt(27.0) * math.pi / (2.0 * spec.psi * spec.rho0**3)
        q, qt = _q_scalar(lam * w), _q_scalar(lam * wt)
        val = _min_term(q, qt) - _min_term(q.conjugate(), qt)
        # the 2/9 prefactor makes (w - w~)^2 K -> 2 on the diagonal, as for the gap case
        return (2.0 / 9.0) * val.real / (w - wt) ** 2
    h, ht = shape_h(spec, w), shape_h(spec, wt)
    if abs(h.imag) < 1e-15 or abs(ht.imag) < 1e-15:
        return 0.0
    sigma = 0.0 if spec.case == "cusp" else spec.sigma
    psi = spec.psi if spec.case != "simple-edge" else (0.0 if math.isnan(spec.psi) else spec.psi)
    val = _singular_term(sigma, psi, h, ht) - _singular_term(sigma, psi, h.conjugate(), ht)
    return 2.0 * val.real / (w - wt) ** 2


# ---------------------------------------------------------------- continuity

@dataclass
class ContinuityScan:
    regime: str
    alphas: list
    values: list
    errors: list
    limit_value: float
    limit_regime: str
    deviations: list

    @property
    def strictly_decreasing(self) -> bool:
        d = self.deviations
        return all(d[i + 1] < d[i] for i in range(len(d) - 1))

    def to_rows(self):
        return [{"alpha": a, "value": v, "error": e, "deviation": d}
                for a, v, e, d in zip(self.alphas, self.values, self.errors, self.deviations)]


def variance_continuity_scan(g: TestFunction, alphas, regime: str, s: int = 1,
                             quad_opts: QuadOptions | None = None,
                             limit: str | None = None) -> ContinuityScan:
    """Var_alpha(g) along alphas and deviations from the limiting functional.

    The limit is the cusp functional when alphas decrease in modulus toward 0,
    the edge (gap side) or bulk (minimum side) functional when they grow.
    """
    alphas = [float(a) for a in alphas]
    if limit is None:
        toward_zero = abs(alphas[-1]) < abs(alphas[0])
        if toward_zero:
            limit = "cusp"
        else:
            limit = "edge" if regime == "gap" else "bulk"
    lim_spec = {"cusp": KernelSpec("cusp", 0.0), "edge": KernelSpec("edge", math.inf, s),
                "bulk": KernelSpec("bulk", -math.inf)}[limit]
    lim = variance(lim_spec, g, quad_opts)
    vals, errs = [], []
    for a in alphas:
        sp = KernelSpec(regime, a, s if regime == "gap" else 1)
        r = variance(sp, g, quad_opts)
        vals.append(r.value)
        errs.append(r.error_estimate)
    dev = [abs(v - lim.value) for v in vals]
    return ContinuityScan(regime, alphas, vals, errs, lim.value, limit, dev)
