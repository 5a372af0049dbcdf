"""Classification of spectral edges, cusps and small local minima of the density."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, asdict, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import golden, least_squares

from . import dyson
from .dyson import DensityGrid
from .errors import DomainError
from .profile import VarianceProfile
from .stability import perron_data, sigma_psi, delta_hat

RHO_STAR = 0.1
DELTA_STAR = 0.05
# a minimum below this density is reported as an exact cusp: its regime
# parameter -2 psi rho0^3/(sqrt(27) pi eta0) is below 1e-5 for every eta0 >= 1e-3,
# and rho0 itself cannot be resolved much further since m(E0) is a triple root
RHO_CUSP = 1e-3
EPS0 = 0.05


@dataclass
class SingularityReport:
    E0: float
    kind: str  # left-edge | right-edge | exact-cusp | nonzero-minimum
    Delta: float  # math.inf marks an outermost edge
    s_hat: int
    rho0: float
    sigma: float
    psi: float
    Delta_hat: float
    eta_f: float = float("nan")
    alpha_hat: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    @property
    def Delta0(self) -> float:
        return min(self.Delta, 1.0)

    @property
    def is_singular(self) -> bool:
        return self.kind != "nonzero-minimum"

    def to_json(self) -> dict:
        d = asdict(self)
        for k, v in list(d.items()):
            if isinstance(v, float) and math.isinf(v):
                d[k] = "inf" if v > 0 else "-inf"
        return d


def _local_quantities(profile, E0, point=None):
    pt = dyson.solve_boundary(profile, E0) if point is None else point
    pd = perron_data(profile, pt)
    sigma, psi = sigma_psi(profile, pt, pd)
    return pt, sigma, psi


def _singular_equations(profile, with_sigma):
    w, V = profile.reduced()
    S = V * w[None, :]

    def eqs(x):
        E, m = x[0], x[1:]
        res = 1.0 / m + E + S @ m
        a = np.sqrt(w) * np.abs(m)
        lam, U = np.linalg.eigh(a[:, None] * V * a[None, :])
        out = [*res, 1.0 - lam[-1]]
        if with_sigma:
            v = np.abs(U[:, -1]) / np.sqrt(w)
            f = np.pi * v / np.sum(w * np.abs(m) * v)
            out.append(np.sum(w * np.sign(m) * f**3))
        return np.array(out)

    return eqs


def refine_singular_point(profile: VarianceProfile, E_guess: float, m_guess=None,
                          cusp: bool = False):
    """Solve for a point where m is real and ||F|| = 1 (with sigma = 0 at a cusp).

    On the real axis at a singular point the Dyson solution is a double (edge)
    or triple (cusp) root, so direct evaluation only resolves m to eps^(1/2) or
    eps^(1/3).  The augmented system is well conditioned instead.
    Returns a SpectralPoint on the real axis.
    """
    if m_guess is None:
        m_guess = dyson.solve_boundary(profile, E_guess).m
    x0 = np.concatenate([[E_guess], np.real(m_guess)])
    eqs = _singular_equations(profile, cusp)
    sol = least_squares(eqs, x0, xtol=1e-15, ftol=1e-15, gtol=1e-15)
    E0, m = float(sol.x[0]), sol.x[1:].astype(complex)
    w, _ = profile.reduced()
    res = float(np.max(np.abs(eqs(sol.x))))
    if abs(E0 - E_guess) > 1e-4 or not np.isfinite(res) or res > 1e-10:
        raise DomainError(f"singular point refinement failed near E={E_guess}")
    return dyson.SpectralPoint(z=complex(E0), m=m, residual=res, weights=w,
                               eta_used=0.0, polished=True)


def _refine_minimum(profile, a, c, b):
    """Golden-section search for the minimum of rho bracketed by a < c < b.

    The tolerance is relative to |E| at machine precision; near a cusp
    rho ~ |E - E0|^(1/3), so a loose x-tolerance leaves a visible residue.
    """
    fun = lambda e: dyson.rho_many(profile, np.array([e]))[0]
    x = golden(fun, brack=(a, c, b), tol=1e-15, maxiter=400)
    return float(x), float(fun(x))


def classify(grid: DensityGrid, profile: VarianceProfile, rho_star: float = RHO_STAR,
             rho_cusp: float = RHO_CUSP, N: int | None = None) -> list[SingularityReport]:
    """Reports for every support endpoint and every interior minimum with rho <= rho_star."""
    E = grid.energies
    if len(E) > 1 and np.max(np.diff(E)) > 1e-3:
        warnings.warn("grid coarser than 1e-3: narrow gaps or minima may be missed")
    N = profile.N if N is None else N
    sup = grid.support_intervals
    reports = []
    for k, (a, b) in enumerate(sup):
        gap_left = a - sup[k - 1][1] if k > 0 else math.inf
        gap_right = sup[k + 1][0] - b if k + 1 < len(sup) else math.inf
        if a > E[0]:
            reports.append(_edge_report(profile, a, "left-edge", +1, gap_left))
        if b < E[-1]:
            reports.append(_edge_report(profile, b, "right-edge", -1, gap_right))
        inside = np.flatnonzero((E > a) & (E < b))
        rho = grid.rho_values
        for i in inside:
            if i == 0 or i == len(E) - 1:
                continue
            if rho[i] <= rho[i - 1] and rho[i] < rho[i + 1] and rho[i] <= rho_star:
                E0, r0 = _refine_minimum(profile, E[i - 1], E[i], E[i + 1])
                if r0 < rho_cusp:
                    hidden = _hidden_gap(profile, E0, E[i + 1] - E[i - 1])
                    if hidden is not None:
                        lo, hi = hidden
                        reports.append(_edge_report(profile, lo, "right-edge", -1, hi - lo))
                        reports.append(_edge_report(profile, hi, "left-edge", +1, hi - lo))
                        continue
                reports.append(_minimum_report(profile, E0, r0, rho_cusp))
    reports.sort(key=lambda r: r.E0)
    for r in reports:
        r.eta_f = fluctuation_scale(r, grid, N)
    return reports


def _hidden_gap(profile, E0, width, n=801):
    """Gap narrower than the grid spacing around a near-zero minimum, if any.

    Returns (lower edge, upper edge) or None when the minimum is a cusp or
    the gap is below the local resolution width/n.
    """
    try:
        refine_singular_point(profile, E0, cusp=True)
        return None
    except DomainError:
        pass
    E = np.linspace(E0 - width, E0 + width, n)
    rho = dyson.rho_many(profile, E)
    sup = dyson.support_intervals_from(profile, E, rho)
    if len(sup) != 2:
        return None
    return sup[0][1], sup[1][0]


def _edge_report(profile, E0, kind, s_hat, Delta):
    diag = {"E0_bisection": float(E0)}
    try:
        pt = refine_singular_point(profile, E0)
        if abs(pt.E - E0) < 1e-8:
            E0 = pt.E
        else:
            pt = None
    except DomainError:
        pt = None
    pt, sigma, psi = _local_quantities(profile, E0, pt)
    diag["refined"] = pt.polished and pt.eta_used == 0.0
    return SingularityReport(E0=float(E0), kind=kind, Delta=float(Delta), s_hat=s_hat,
                             rho0=0.0, sigma=sigma, psi=psi,
                             Delta_hat=delta_hat(sigma, psi), diagnostics=diag)


def _minimum_report(profile, E0, r0, rho_cusp):
    if r0 < rho_cusp:
        diag = {"E0_golden": E0, "rho_at_golden": r0}
        try:
            pt = refine_singular_point(profile, E0, cusp=True)
            E0 = pt.E
        except DomainError:
            pt = None
        pt, sigma, psi = _local_quantities(profile, E0, pt)
        diag["Delta_hat_raw"] = delta_hat(sigma, psi)
        return SingularityReport(E0=E0, kind="exact-cusp", Delta=0.0, s_hat=0, rho0=0.0,
                                 sigma=sigma, psi=psi, Delta_hat=0.0, diagnostics=diag)
    pt, sigma, psi = _local_quantities(profile, E0)
    return SingularityReport(E0=E0, kind="nonzero-minimum", Delta=0.0, s_hat=0, rho0=r0,
                             sigma=sigma, psi=psi, Delta_hat=delta_hat(sigma, psi))


def fluctuation_scale(report: SingularityReport, grid: DensityGrid | None, N: int) -> float:
    """eta_f: spacing scale at E0 (explicit at singular points, implicit at minima)."""
    if N < 2:
        raise DomainError("N must be at least 2")
    if report.rho0 == 0.0:
        return max(N ** -0.75, N ** (-2.0 / 3.0) * min(report.Delta ** (1.0 / 9.0), 1.0))
    if grid is None:
        raise DomainError("an implicit fluctuation scale needs a density grid")
    E, rho = grid.energies, grid.rho_values
    span = min(report.E0 - E[0], E[-1] - report.E0)

    def mass(eta):
        x = np.linspace(report.E0 - eta, report.E0 + eta, 401)
        return trapezoid(grid.interpolate(x), x)

    target = 1.0 / N
    if mass(span) < target:
        raise DomainError("grid too coarse or narrow to bracket the fluctuation scale")
    lo = 0.0
    hi = span
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mass(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def fluctuation_scale_min_density(rho0: float, N: int) -> float:
    """eta_f for a locally constant density rho0: 1/(2 N rho0)."""
    return 1.0 / (2.0 * N * rho0)


def alpha_hat(report: SingularityReport, eta0: float, Delta_star: float = DELTA_STAR,
              N: int | None = None, eps0: float = EPS0) -> float:
    """Regime parameter: Delta_hat/(2 eta0) at small gaps, +inf at isolated edges,
    -2 psi rho0^3 / (sqrt(27) pi eta0) at a nonzero minimum."""
    if N is not None and np.isfinite(report.eta_f):
        lo, hi = N**eps0 * report.eta_f, N**-eps0
        if not lo <= eta0 <= hi:
            warnings.warn(f"eta0={eta0:.3e} outside the mesoscopic window [{lo:.3e}, {hi:.3e}]")
    if report.kind == "nonzero-minimum":
        return -2.0 * report.psi * report.rho0**3 / (math.sqrt(27.0) * math.pi * eta0)
    if report.kind == "exact-cusp":
        return 0.0
    if report.Delta >= Delta_star:
        return math.inf
    return report.Delta_hat / (2.0 * eta0)


def regime_for(alpha: float, s_hat: int, cusp_tol: float = 1e-8):
    """Map alpha to (regime, alpha, s) for the limiting variance functionals."""
    if math.isinf(alpha) and alpha > 0:
        return "edge", alpha, (s_hat if s_hat != 0 else 1)
    if math.isinf(alpha):
        return "bulk", alpha, 1
    if abs(alpha) <= cusp_tol:
        return "cusp", 0.0, 1
    if alpha > 0:
        return "gap", alpha, s_hat
    return "minimum", alpha, 1


def find_report(reports, E0: float, tol: float = 1e-3) -> SingularityReport:
    best = min(reports, key=lambda r: abs(r.E0 - E0), default=None)
    if best is None or abs(best.E0 - E0) > tol:
        raise DomainError(f"no classified singularity within {tol} of E0={E0}")
    return best


def rho_scaling_slope(profile: VarianceProfile, E0: float, direction: int,
                      deltas=None) -> float:
    """Log-log slope of rho(E0 + direction*delta) over delta."""
    d = np.logspace(-5, -2, 13) if deltas is None else np.asarray(deltas)
    rho = dyson.rho_many(profile, E0 + direction * d)
    return float(np.polyfit(np.log(d), np.log(rho), 1)[0])
