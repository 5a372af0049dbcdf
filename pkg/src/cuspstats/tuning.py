"""Tuning the two-block family to an exact cusp, a small gap or a small minimum.

The family fixes the block fraction and the diagonal variances and varies the
off-diagonal coupling v12.  Increasing v12 opens a symmetric pair of gaps;
the critical coupling where they close is an exact cusp.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy.optimize import fsolve

from . import dyson
from .profile import build_two_block, VarianceProfile

FAMILY = {"fraction": 0.3, "v11": 0.1, "v22": 0.1}
SEARCH_WINDOW = (0.1, 1.0)  # energies where the positive-side gap opens


def family_profile(v12: float, N: int = 1000) -> VarianceProfile:
    return build_two_block(N, FAMILY["fraction"], FAMILY["v11"], v12, FAMILY["v22"])


def _min_rho(v12: float, n: int = 1201):
    p = family_profile(v12)
    E = np.linspace(*SEARCH_WINDOW, n)
    rho = dyson.rho_many(p, E)
    k = int(np.argmin(rho))
    return float(rho[k]), float(E[k])


def bracket_critical_coupling(lo: float = 1.0, hi: float = 2.0, tol: float = 1e-6,
                              floor: float = 1e-8):
    """Bisection on the existence of a gap (min rho below the floor)."""
    has_gap = lambda v: _min_rho(v)[0] < floor
    if has_gap(lo) or not has_gap(hi):
        raise ValueError("critical coupling not bracketed")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if has_gap(mid):
            hi = mid
        else:
            lo = mid
    return lo, hi


def _cusp_equations(x):
    E, m1, m2, v12 = x
    p = family_profile(v12)
    w, V = p.reduced()
    S = V * w[None, :]
    m = np.array([m1, m2])
    res = 1.0 / m + E + S @ m
    A = np.sqrt(w) * np.abs(m)
    Fs = A[:, None] * V * A[None, :]
    lam, U = np.linalg.eigh(Fs)
    v = np.abs(U[:, -1]) / np.sqrt(w)
    f = np.pi * v / np.sum(w * np.abs(m) * v)
    sigma = np.sum(w * np.sign(m) * f**3)
    return [res[0], res[1], 1.0 - lam[-1], sigma]


@dataclass
class CuspTuning:
    v12_star: float
    E0: float
    m0: list
    tolerance: float
    equation_residual: float
    family: dict


def tune_cusp(tol: float = 1e-6) -> CuspTuning:
    """Locate the critical coupling and the cusp energy to machine precision."""
    lo, hi = bracket_critical_coupling(tol=tol)
    v0 = 0.5 * (lo + hi)
    _, E0 = _min_rho(v0, n=4001)
    pt = dyson.solve_boundary(family_profile(v0), E0)
    x0 = [E0, pt.m[0].real, pt.m[1].real, v0]
    x, info, ier, msg = fsolve(_cusp_equations, x0, full_output=True, xtol=1e-15)
    resid = float(np.max(np.abs(_cusp_equations(x))))
    return CuspTuning(float(x[3]), float(x[0]), [float(x[1]), float(x[2])],
                      tol, resid, dict(FAMILY))


@lru_cache(maxsize=1)
def cached_tuning() -> dict:
    """Tuned parameters shipped with the package (regenerate with tune_cusp)."""
    text = resources.files("cuspstats").joinpath("data/tuned.json").read_text()
    return json.loads(text)


def tuned_profile(which: str = "cusp", N: int = 1000) -> VarianceProfile:
    """Profile at the critical coupling, or shifted to a small gap / small minimum."""
    t = cached_tuning()
    v = t["cusp"]["v12_star"]
    if which == "cusp":
        pass
    elif which == "gap":
        v = v + t["gap"]["dv12"]
    elif which == "minimum":
        v = v + t["minimum"]["dv12"]
    else:
        raise ValueError(f"unknown tuning {which!r}")
    p = family_profile(v, N)
    return p


def tuned_E0(which: str = "cusp") -> float:
    return float(cached_tuning()[which]["E0"])


def write_tuning(path, cusp: CuspTuning, gap: dict, minimum: dict) -> None:
    with open(path, "w") as fh:
        json.dump({"cusp": asdict(cusp), "gap": gap, "minimum": minimum}, fh, indent=2)
