"""Solver for the vector Dyson equation -1/m = z + S m and the self-consistent density.

All computations run in the block-reduced dimension K: for a block-constant
profile the solution is constant on blocks, and the reduced operator
``S_red = V diag(w)`` acts on block values.  Averages ``<x>`` are
``sum_a w_a x_a``, which equals the normalized trace N^{-1} sum_j x_j.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .errors import ConvergenceError, DomainError
from .profile import VarianceProfile

DEFAULT_TOL = 1e-12
RHO_FLOOR = 1e-8


@dataclass
class SpectralPoint:
    """Solution of the Dyson equation at one spectral parameter."""

    z: complex
    m: np.ndarray
    residual: float
    weights: np.ndarray
    eta_used: float = np.nan
    polished: bool = False

    @property
    def rho(self) -> float:
        return float(np.dot(self.weights, self.m.imag) / np.pi)

    @property
    def mean_m(self) -> complex:
        return complex(np.dot(self.weights, self.m))

    @property
    def E(self) -> float:
        return float(np.real(self.z))


@dataclass
class DensityGrid:
    energies: np.ndarray
    rho_values: np.ndarray
    eta_used: np.ndarray
    support_intervals: list
    m_values: np.ndarray = field(repr=False, default=None)
    mass_error: float = np.nan

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["energy", "rho", "eta_used"])
            for e, r, h in zip(self.energies, self.rho_values, self.eta_used):
                wr.writerow([repr(float(e)), repr(float(r)), repr(float(h))])

    def interpolate(self, E) -> np.ndarray:
        return np.interp(E, self.energies, self.rho_values, left=0.0, right=0.0)


def m_semicircle(z):
    """Stieltjes transform of the semicircle law, branch with Im m Im z > 0."""
    z = np.asarray(z, dtype=complex)
    s = np.sqrt(z - 2.0) * np.sqrt(z + 2.0)
    m = (-z + s) / 2.0
    # the product of principal roots gives the branch behaving like z at infinity,
    # except on the lower half-plane where we mirror the upper solution
    lower = z.imag < 0
    if np.any(lower):
        m = np.where(lower, np.conj((-np.conj(z) + np.sqrt(np.conj(z) - 2.0)
                                     * np.sqrt(np.conj(z) + 2.0)) / 2.0), m)
    return m


# ---------------------------------------------------------------------------
# batched kernels
# ---------------------------------------------------------------------------

def _residual(S, z, m):
    return 1.0 / m + z[:, None] + m @ S.T


def _fixed_point(S, z, m, tol=1e-3, max_iter=10000):
    """Damped iteration m <- (1-t) m + t (-1/(z + S m)) until the residual is below tol."""
    theta = np.ones(len(z))
    r = np.max(np.abs(_residual(S, z, m)), axis=1)
    for _ in range(max_iter):
        act = r >= tol
        if not act.any():
            break
        ma = m[act]
        za = z[act]
        new = -1.0 / (za[:, None] + ma @ S.T)
        th = theta[act][:, None]
        cand = (1.0 - th) * ma + th * new
        rc = np.max(np.abs(_residual(S, za, cand)), axis=1)
        better = rc < r[act]
        ia = np.flatnonzero(act)
        m[ia[better]] = cand[better]
        r[ia[better]] = rc[better]
        theta[ia[better]] = np.minimum(1.0, theta[ia[better]] * 1.5)
        theta[ia[~better]] *= 0.5
        if np.any(theta < 1e-12):
            break
    return m, r


def _newton(S, z, m, tol, max_iter=200, strict_sign=True):
    """Newton iteration with damping by the natural monotonicity test.

    A step of length t is accepted when the simplified Newton correction at
    the candidate, J^{-1} F(m + t d), is shorter than (1 - t/4)|d|.  Near a
    cusp the residual itself can grow for one step before quadratic
    convergence sets in, so a residual-decrease test would stall there.
    Im m is kept on the side of Im z.
    """
    P, K = m.shape
    eye = np.eye(K)
    res = _residual(S, z, m)
    r = np.max(np.abs(res), axis=1)
    active = np.ones(P, dtype=bool)
    upper = z.imag > 0
    for _ in range(max_iter):
        ia = np.flatnonzero(active)
        if ia.size == 0:
            break
        ma, za, ra = m[ia], z[ia], res[ia]
        J = S[None, :, :] - eye[None, :, :] / (ma * ma)[:, :, None]
        try:
            d = np.linalg.solve(J, -ra[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            J = J + 1e-300 * eye[None, :, :]
            d = np.stack([np.linalg.lstsq(J[k], -ra[k], rcond=None)[0] for k in range(len(ia))])
        dn = np.max(np.abs(d), axis=1)
        t = np.ones(len(ia))
        accepted = np.zeros(len(ia), dtype=bool)
        new_m = ma.copy()
        new_r = r[ia].copy()
        new_res = ra.copy()
        for _h in range(40):
            todo = np.flatnonzero(~accepted)
            if todo.size == 0:
                break
            cand = ma[todo] + t[todo, None] * d[todo]
            cres = _residual(S, za[todo], cand)
            cr = np.max(np.abs(cres), axis=1)
            with np.errstate(all="ignore"):
                dbar = np.linalg.solve(J[todo], -cres[:, :, None])[:, :, 0]
            dbn = np.max(np.abs(dbar), axis=1)
            up = upper[ia][todo]
            if strict_sign:
                sign_ok = np.where(up, np.all(cand.imag > 0, axis=1), True)
            else:
                sign_ok = np.where(up, np.all(cand.imag > -1e-300, axis=1), True)
            mono = (dbn <= (1.0 - t[todo] / 4.0) * dn[todo]) | (cr <= r[ia][todo]) | (cr < tol)
            ok = sign_ok & np.isfinite(cr) & mono
            idx = todo[ok]
            new_m[idx] = cand[ok]
            new_r[idx] = cr[ok]
            new_res[idx] = cres[ok]
            accepted[idx] = True
            t[todo[~ok]] *= 0.5
        st = np.max(np.abs(new_m - ma), axis=1)
        m[ia] = new_m
        r[ia] = new_r
        res[ia] = new_res
        scale = 1.0 + np.max(np.abs(new_m), axis=1)
        done = (new_r < tol) & ((st <= 1e-14 * scale) | (new_r < 1e-3 * tol))
        stalled = ~accepted | (st == 0.0)
        active[ia[done | stalled]] = False
    return m, r


def _initial_guess(S, z):
    """Semicircle start scaled to the mean row sum of S."""
    scale = float(np.sqrt(max(np.max(S.sum(axis=1)), 1e-300)))
    m0 = m_semicircle(z / scale) / scale
    big = np.abs(z) > 10 * scale
    m0 = np.where(big, -1.0 / z, m0)
    return np.repeat(m0[:, None], S.shape[0], axis=1).astype(complex)


def _eta_top(S):
    return max(2.0, 2.0 * float(np.sqrt(np.max(np.abs(S).sum(axis=1)))))


def _solve_upper(S, z, tol, m_init=None, max_iter=100000):
    """Solve for a batch of z with Im z > 0 using continuation in the height."""
    z = np.asarray(z, dtype=complex)
    P, K = len(z), S.shape[0]
    m = np.empty((P, K), dtype=complex)
    r = np.full(P, np.inf)
    todo = np.ones(P, dtype=bool)
    if m_init is not None:
        m_try, r_try = _newton(S, z, np.array(m_init, dtype=complex, copy=True), tol)
        ok = (r_try < tol) & np.all(m_try.imag > 0, axis=1)
        m[ok], r[ok] = m_try[ok], r_try[ok]
        todo = ~ok
    if not todo.any():
        return m, r
    zt = z[todo]
    x, eta = zt.real, zt.imag
    top = max(_eta_top(S), float(eta.max()))
    z0 = x + 1j * top
    mt = _initial_guess(S, z0)
    mt, _ = _fixed_point(S, z0, mt, tol=1e-3, max_iter=max_iter)
    mt, _ = _newton(S, z0, mt, tol)
    h = top
    while h > eta.min():
        h *= 0.5
        zk = x + 1j * np.maximum(h, eta)
        sel = h * 2 > eta  # points still moving
        if sel.any():
            mt[sel], _ = _newton(S, zk[sel], mt[sel], tol)
    mt, rt = _newton(S, zt, mt, tol)
    m[todo], r[todo] = mt, rt
    return m, r


def solve_many(profile: VarianceProfile, z, tol: float = DEFAULT_TOL, m_init=None,
               check: bool = True):
    """Solve the Dyson equation at an array of non-real spectral parameters.

    Returns ``(m, residual)`` with ``m`` of shape (len(z), K).  Parameters in
    the lower half-plane get the conjugate of the upper solution.
    """
    S = profile.reduced_operator()
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if np.any(z.imag == 0):
        raise DomainError("solve_many needs Im z != 0; use solve_boundary for real E")
    lower = z.imag < 0
    zu = np.where(lower, np.conj(z), z)
    mi = None
    if m_init is not None:
        mi = np.where(lower[:, None], np.conj(m_init), m_init)
    m, r = _solve_upper(S, zu, tol, mi)
    if check:
        bad = ~(r < tol)
        if np.any(np.isnan(r)):
            raise ConvergenceError("Dyson solver produced NaN", residual=np.nan)
        if bad.any():
            raise ConvergenceError(
                f"Dyson solver did not converge at {bad.sum()} points "
                f"(worst residual {np.max(r[bad]):.3e})", residual=float(np.max(r[bad])))
    m = np.where(lower[:, None], np.conj(m), m)
    return m, r


def solve_vde(profile: VarianceProfile, z: complex, tol: float = DEFAULT_TOL,
              max_iter: int = 100000, m_init=None) -> SpectralPoint:
    """Solve the vector Dyson equation at a single non-real z."""
    z = complex(z)
    if z.imag == 0:
        raise DomainError("solve_vde needs Im z != 0; use solve_boundary for real E")
    mi = None if m_init is None else np.asarray(m_init, dtype=complex)[None, :]
    m, r = solve_many(profile, np.array([z]), tol=tol, m_init=mi)
    w, _ = profile.reduced()
    return SpectralPoint(z=z, m=m[0], residual=float(r[0]), weights=w,
                         eta_used=abs(z.imag))


# ---------------------------------------------------------------------------
# boundary values
# ---------------------------------------------------------------------------

def boundary_many(profile: VarianceProfile, E, tol: float = DEFAULT_TOL,
                  eta0: float = 0.5, eta_min: float = 1e-9, polish: bool = True):
    """Boundary values m(E + i0) for an array of energies.

    Continuation along eta_k = eta0 2^-k down to eta_min, Richardson
    extrapolation over the last three heights, then an optional Newton
    polish on the real axis started from the extrapolated value.

    Returns ``(m, residual, eta_used, polished)``.
    """
    S = profile.reduced_operator()
    E = np.atleast_1d(np.asarray(E, dtype=float))
    P, K = len(E), S.shape[0]
    levels = [eta0]
    while levels[-1] > eta_min:
        levels.append(levels[-1] / 2)
    mt, _ = _solve_upper(S, E + 1j * eta0, tol)
    hist = [mt.copy()]
    for h in levels[1:]:
        mt, rt = _newton(S, E + 1j * h, mt, tol)
        hist.append(mt.copy())
    h = levels[-1]
    if np.any(~(rt < tol)):
        raise ConvergenceError("continuation toward the real axis stalled",
                               residual=float(np.nanmax(rt)), eta=h)
    m4, m2, m1 = hist[-3], hist[-2], hist[-1]
    m_ext = (8.0 * m1 - 6.0 * m2 + m4) / 3.0
    m_ext = m_ext.real + 1j * np.maximum(m_ext.imag, 0.0)
    eta_used = np.full(P, h)
    polished = np.zeros(P, dtype=bool)
    zr = E.astype(complex)
    if polish:
        mp, rp = _newton(S, zr, m_ext.copy(), tol, max_iter=400, strict_sign=False)
        close = np.max(np.abs(mp - m_ext), axis=1) <= 1e-3 * (1 + np.max(np.abs(m_ext), axis=1))
        ok = (rp < tol) & close & np.all(mp.imag >= -1e-13, axis=1)
        m_ext[ok] = mp[ok].real + 1j * np.maximum(mp[ok].imag, 0.0)
        eta_used[ok] = 0.0
        polished = ok
    res = np.max(np.abs(_residual(S, zr, m_ext)), axis=1)
    return m_ext, res, eta_used, polished


def solve_boundary(profile: VarianceProfile, E: float, tol: float = DEFAULT_TOL,
                   eta0: float = 0.5, eta_min: float = 1e-9) -> SpectralPoint:
    """The limit m(E + i0) at a real energy."""
    m, r, h, pol = boundary_many(profile, np.array([float(E)]), tol, eta0, eta_min)
    w, _ = profile.reduced()
    return SpectralPoint(z=complex(E), m=m[0], residual=float(r[0]), weights=w,
                         eta_used=float(h[0]), polished=bool(pol[0]))


def rho_many(profile: VarianceProfile, E, **kw) -> np.ndarray:
    w, _ = profile.reduced()
    m = boundary_many(profile, E, **kw)[0]
    return m.imag @ w / np.pi


# ---------------------------------------------------------------------------
# density grid and support
# ---------------------------------------------------------------------------

def _refine_crossing(profile, a, b, inside_left, floor, tol_E):
    """Bisection for the point where rho crosses the floor inside [a, b]."""
    while b - a > tol_E:
        c = 0.5 * (a + b)
        rc = rho_many(profile, np.array([c]))[0]
        if (rc > floor) == inside_left:
            a = c
        else:
            b = c
    return 0.5 * (a + b)


def support_intervals_from(profile, E, rho, floor=RHO_FLOOR, tol_E=1e-10):
    inside = rho > floor
    out = []
    n = len(E)
    i = 0
    while i < n:
        if not inside[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and inside[j + 1]:
            j += 1
        left = E[i] if i == 0 else _refine_crossing(profile, E[i - 1], E[i], False, floor, tol_E)
        right = E[j] if j == n - 1 else _refine_crossing(profile, E[j], E[j + 1], True, floor, tol_E)
        out.append([float(left), float(right)])
        i = j + 1
    return out


def density_grid(profile: VarianceProfile, E_range, n_points: int,
                 tol: float = DEFAULT_TOL, rho_floor: float = RHO_FLOOR,
                 refine: bool = True) -> DensityGrid:
    """Density on a uniform grid together with its support intervals."""
    a, b = map(float, E_range)
    if not a < b or n_points < 2:
        raise DomainError("density_grid needs a < b and n_points >= 2")
    E = np.linspace(a, b, int(n_points))
    w, _ = profile.reduced()
    m, r, h, _ = boundary_many(profile, E, tol)
    rho = np.maximum(m.imag @ w / np.pi, 0.0)
    failed = ~(r < max(tol, 1e-8))
    if failed.mean() > 0.01:
        raise ConvergenceError(f"{failed.sum()} of {len(E)} grid points failed")
    sup = support_intervals_from(profile, E, rho, rho_floor) if refine else []
    # split at small interior minima, where rho can have a cube-root cusp
    i = np.flatnonzero((rho[1:-1] <= rho[:-2]) & (rho[1:-1] < rho[2:]) & (rho[1:-1] < 0.1)) + 1
    mass = support_mass(profile, sup, breaks=E[i]) if sup else trapezoid(rho, E)
    return DensityGrid(E, rho, h, sup, m, abs(mass - 1.0))


def support_mass(profile: VarianceProfile, intervals, n: int = 96, breaks=()) -> float:
    """Total mass of rho over the support intervals, split at the given breaks.

    Uses E = (a+b)/2 - (b-a)/2 cos(theta), which turns the square-root
    behaviour at the endpoints into a smooth integrand.
    """
    x, wq = np.polynomial.legendre.leggauss(n)
    theta = 0.5 * np.pi * (x + 1.0)
    total = 0.0
    pieces = []
    for a, b in intervals:
        cut = [float(c) for c in breaks if a < c < b]
        pts = [a, *sorted(cut), b]
        pieces += list(zip(pts[:-1], pts[1:]))
    for a, b in pieces:
        E = 0.5 * (a + b) - 0.5 * (b - a) * np.cos(theta)
        jac = 0.5 * (b - a) * np.sin(theta) * 0.5 * np.pi
        total += float(np.sum(wq * jac * rho_many(profile, E)))
    return total


def rho_floor_default() -> float:
    return RHO_FLOOR
