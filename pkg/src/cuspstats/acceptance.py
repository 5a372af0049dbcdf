"""Acceptance suite: one function per criterion, each returning a CriterionResult.

The quick suite computes criteria 1-8 live and reads criteria 9-11 from cached
Monte Carlo runs (summary.json plus manifest.json under results_dir/<name>/).
The full suite runs the Monte Carlo experiments first.
"""

from __future__ import annotations

import json
import math
import os
import time
import warnings
from dataclasses import dataclass, field, asdict
from datetime import datetime

import numpy as np

from . import dyson, finite_n, kernels, singularity, stability, tuning
from .errors import CuspStatsError
from .profile import EntryDistribution, build_flat, test_function, builtin_test_functions

# the C bound of the shape-function criterion (measured maximum is below 0.8)
SHAPE_CONSTANT = 2.0
CUBIC_DPS = 50

MC_RUNS = {
    "goe_edge": {"profile": {"kind": "flat", "N": 2000},
                 "dist": {"family": "gaussian", "beta": 1},
                 "E0": 2.0, "eta0": 0.05, "g": "bump", "samples": 2000, "seed": 9001},
    "gue_edge": {"profile": {"kind": "flat", "N": 2000},
                 "dist": {"family": "gaussian", "beta": 2},
                 "E0": 2.0, "eta0": 0.05, "g": "bump", "samples": 2000, "seed": 9002},
    "cusp_gaussian": {"profile": {"kind": "two-block", "N": 4000, "fraction": 0.3,
                                  "v": [0.1, 1.238708570478719, 0.1]},
                      "dist": {"family": "gaussian", "beta": 1},
                      "E0": 0.36424834206723794, "gamma": 0.5, "g": "bump",
                      "samples": 1000, "seed": 9003},
    "cusp_rademacher": {"profile": {"kind": "two-block", "N": 4000, "fraction": 0.3,
                                    "v": [0.1, 1.238708570478719, 0.1]},
                        "dist": {"family": "rademacher", "beta": 1},
                        "E0": 0.36424834206723794, "gamma": 0.5, "g": "bump",
                        "samples": 1000, "seed": 9004},
}


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    runtime: float
    runtime_limit: float
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"criterion {self.number:2d} {flag}  {self.name}  "
                f"({self.runtime:.1f} s, limit {self.runtime_limit:.0f} s)")


def _finish(number, name, limit, t0, ok, details, runtime=None):
    rt = time.perf_counter() - t0 if runtime is None else runtime
    details = dict(details, statistics_passed=bool(ok), runtime_passed=bool(rt < limit))
    return CriterionResult(number, name, bool(ok) and rt < limit, rt, limit, details)


# ---------------------------------------------------------------- 1-4

def criterion_1() -> CriterionResult:
    t0 = time.perf_counter()
    prof = build_flat(1000)
    x = np.linspace(-3.0, 3.0, 20)
    mag = np.logspace(-6, 0, 10)
    err = 0.0
    for i, e in enumerate(x):
        for j, h in enumerate(mag):
            z = complex(e, h if (i + j) % 2 == 0 else -h)
            m = dyson.solve_vde(prof, z).m
            err = max(err, float(np.max(np.abs(m - dyson.m_semicircle(z)))))
    rho0 = float(dyson.rho_many(prof, np.array([0.0]))[0])
    ok = err < 1e-10 and abs(rho0 - 1 / math.pi) < 1e-8
    return _finish(1, "semicircle oracle", 10, t0, ok,
                   {"points": 200, "max_error": err, "rho0": rho0,
                    "rho0_error": abs(rho0 - 1 / math.pi)})


def criterion_2() -> CriterionResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    t = rng.uniform(-50.0, 50.0, 1000)
    dev = {
        "edge": kernels.kernel_edge(np.abs(t) + 1e-3, np.abs(t) + 1e-3),
        "cusp": kernels.kernel_cusp(t, t),
        "gap": kernels.kernel_gap(np.sign(t) * (np.abs(t) + 1.0 + 1e-3),
                                  np.sign(t) * (np.abs(t) + 1.0 + 1e-3)),
        "minimum": kernels.kernel_min(t, t),
    }
    dev = {k: float(np.max(np.abs(np.asarray(v) - 2.0))) for k, v in dev.items()}
    ok = all(v < 1e-12 for v in dev.values())
    return _finish(2, "diagonal kernel normalization", 1, t0, ok,
                   {"points_per_kernel": 1000, "max_deviation": dev})


def criterion_3() -> CriterionResult:
    t0 = time.perf_counter()
    pos = np.logspace(-6, 6, 61)
    lam = np.concatenate([-pos[::-1], [0.0], pos])
    rk, rq = kernels.cubic_residuals(lam, dps=CUBIC_DPS)
    fk, fq = kernels.cubic_residuals(lam)
    scale = 1.0 + np.abs(lam)
    ok = float(rk.max()) < 1e-12 and float(rq.max()) < 1e-12
    return _finish(3, "cubic branch residuals", 1, t0, ok,
                   {"points": len(lam), "dps": CUBIC_DPS, "max_residual_k": float(rk.max()),
                    "max_residual_q": float(rq.max()),
                    "float64_max_relative_k": float(np.max(fk / scale)),
                    "float64_max_relative_q": float(np.max(fq / scale))})


def criterion_4(tol: float = 1e-10) -> CriterionResult:
    t0 = time.perf_counter()
    opts = kernels.QuadOptions(tol=tol)
    rows = []
    for name in builtin_test_functions():
        g = test_function(name)
        for s in (1, -1):
            v = kernels.variance(kernels.KernelSpec("edge", math.inf, s), g, opts).value
            u = lambda x, g=g, s=s: g.eval(s * np.asarray(x) ** 2)
            du = lambda x, g=g, s=s: 2 * s * np.asarray(x) * g.eval_d1(s * np.asarray(x) ** 2)
            r = np.sqrt(max(abs(a) for a in g.support))
            h = kernels.h_half_seminorm_sq(u, (-r, r), opts, du=du).value / (4 * math.pi**2)
            rows.append({"g": name, "s": s, "variance": v, "seminorm_side": h,
                         "rel_diff": abs(v - h) / abs(h)})
    ok = all(r["rel_diff"] < 1e-5 for r in rows)
    return _finish(4, "edge norm identity", 60, t0, ok, {"rows": rows})


# ---------------------------------------------------------------- 5-7

def criterion_5(tol: float = 1e-8) -> CriterionResult:
    t0 = time.perf_counter()
    g = test_function("bump")
    opts = kernels.QuadOptions(tol=tol)
    to_cusp = kernels.variance_continuity_scan(g, [1.0, 0.1, 0.01], "gap", quad_opts=opts)
    to_edge = kernels.variance_continuity_scan(g, [10.0, 100.0, 1000.0], "gap", quad_opts=opts)
    g0 = float(g.eval(np.array([0.0]))[0])
    alphas = np.logspace(-4, -1, 7)
    dev = np.array([abs(kernels.gap_bias_integral(g, a) - g0 / 6) for a in alphas])
    slope = float(np.polyfit(np.log(alphas), np.log(dev), 1)[0])
    ok = (to_cusp.strictly_decreasing and to_edge.strictly_decreasing
          and abs(slope - 2.0 / 3.0) <= 0.15)
    return _finish(5, "kernel continuity", 300, t0, ok,
                   {"toward_cusp": to_cusp.to_rows(), "cusp_value": to_cusp.limit_value,
                    "toward_edge": to_edge.to_rows(), "edge_value": to_edge.limit_value,
                    "bias_alphas": alphas.tolist(), "bias_deviations": dev.tolist(),
                    "bias_exponent": slope})


def _beta_slope(profile, E0, s_hat, deltas):
    b = []
    for d in deltas:
        p = dyson.solve_vde(profile, complex(E0 - s_hat * d, d))
        b.append(abs(stability.build_stability(profile, p, p, check_branch=False).beta))
    return float(np.polyfit(np.log(deltas), np.log(b), 1)[0])


def criterion_6() -> CriterionResult:
    t0 = time.perf_counter()
    d = np.logspace(-5, -2, 13)
    flat = build_flat(1000)
    cusp = tuning.tuned_profile("cusp")
    Ec = tuning.tuned_E0("cusp")
    s_edge = -1  # right edge of the semicircle: support lies to the left
    slopes = {
        "rho_edge": singularity.rho_scaling_slope(flat, 2.0, s_edge, d),
        "rho_cusp_left": singularity.rho_scaling_slope(cusp, Ec, -1, d),
        "rho_cusp_right": singularity.rho_scaling_slope(cusp, Ec, 1, d),
        "beta_edge": _beta_slope(flat, 2.0, s_edge, d),
        "beta_cusp": _beta_slope(cusp, Ec, 0, d),
    }
    target = {"rho_edge": 0.5, "rho_cusp_left": 1 / 3, "rho_cusp_right": 1 / 3,
              "beta_edge": 0.5, "beta_cusp": 2 / 3}
    ok = all(abs(slopes[k] - target[k]) <= 0.05 for k in slopes)
    return _finish(6, "scaling exponents", 120, t0, ok, {"slopes": slopes, "targets": target})


def _shape_ratios(which: str):
    prof = tuning.tuned_profile(which)
    E0 = tuning.tuned_E0(which)
    base = dyson.solve_boundary(prof, E0)
    pd = stability.perron_data(prof, base)
    sigma, psi = stability.sigma_psi(prof, base, pd)
    if which == "cusp":
        spec = kernels.ShapeFunctionSpec("cusp", psi=psi)
        Delta0 = 0.0
    else:
        spec = kernels.ShapeFunctionSpec("small-gap", psi=psi, sigma=sigma,
                                         Delta_hat=stability.delta_hat(sigma, psi))
        Delta0 = min(tuning.cached_tuning()["gap"]["Delta"], 1.0)
    st0 = stability.build_stability(prof, base, base, check_branch=False)
    rows = []
    for w in (1e-2, -1e-2, 1e-3, -1e-3, 1e-4, -1e-4):
        x = stability.xi(prof, base, dyson.solve_boundary(prof, E0 + w), st0)
        h = kernels.shape_h(spec, w)
        lin = abs(w) * Delta0 ** (-1 / 3) if Delta0 > 0 else math.inf
        rows.append({"w": w, "xi": [x.real, x.imag], "h": [h.real, h.imag],
                     "ratio": abs(x - h) / min(lin, abs(w) ** (2 / 3))})
    return rows


def criterion_7() -> CriterionResult:
    t0 = time.perf_counter()
    rows = {"cusp": _shape_ratios("cusp"), "gap": _shape_ratios("gap")}
    worst = max(r["ratio"] for v in rows.values() for r in v)
    ok = worst <= SHAPE_CONSTANT
    return _finish(7, "shape-function approximation", 120, t0, ok,
                   {"constant": SHAPE_CONSTANT, "max_ratio": worst, "rows": rows})


# ---------------------------------------------------------------- 8

def criterion_8() -> CriterionResult:
    t0 = time.perf_counter()
    g = test_function("bump")
    etas = [10 ** -1.5, 1e-2, 10 ** -2.5]
    cases = {
        "flat": (build_flat(2000), 2.0, kernels.KernelSpec("edge", math.inf, -1), 0.1),
        "cusp": (tuning.tuned_profile("cusp", N=4000), tuning.tuned_E0("cusp"),
                 kernels.KernelSpec("cusp", 0.0), 0.15),
    }
    details, ok = {}, True
    dist = EntryDistribution("gaussian", 1)
    for name, (prof, E0, spec, bound) in cases.items():
        limit = kernels.variance(spec, g, kernels.QuadOptions(tol=1e-10)).value
        rows = []
        for eta0 in etas:
            stf = finite_n.ScaledTestFunction(g, E0, eta0)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                r = finite_n.finite_variance(prof, stf, dist)
            rows.append({"eta0": eta0, "V": r.value, "error_estimate": r.error_estimate,
                         "evaluations": r.evaluations, "rel_dev": abs(r.value / limit - 1)})
        dev = [r["rel_dev"] for r in rows]
        case_ok = all(dev[i + 1] < dev[i] for i in range(len(dev) - 1)) and dev[-1] < bound
        ok = ok and case_ok
        details[name] = {"limit": limit, "bound": bound, "rows": rows, "passed": case_ok}
    return _finish(8, "finite-N variance consistency", 1800, t0, ok, details)


# ---------------------------------------------------------------- 9-11

def _load_run(results_dir, name):
    """(summary, wall seconds) of a cached run, or None when missing."""
    path = os.path.join(results_dir, name, "summary.json")
    if not os.path.exists(path):
        return None
    with open(path) as fh:
        summary = json.load(fh)
    wall = math.nan
    man = os.path.join(results_dir, name, "manifest.json")
    if os.path.exists(man):
        with open(man) as fh:
            m = json.load(fh)
        fmt = "%Y-%m-%dT%H:%M:%S%z"
        try:
            wall = (datetime.strptime(m["finished"], fmt)
                    - datetime.strptime(m["started"], fmt)).total_seconds()
        except (KeyError, ValueError):
            pass
    return summary, wall


def _missing(number, name, limit, names):
    return CriterionResult(number, name, False, math.nan, limit,
                           {"missing_runs": names, "statistics_passed": False,
                            "runtime_passed": False})


def _within(x, target, rel, se, k=3.0):
    return abs(x - target) <= max(rel * abs(target), k * se)


def criterion_9(results_dir) -> CriterionResult:
    name, limit = "Monte Carlo CLT at the edge", 1200
    goe, gue = _load_run(results_dir, "goe_edge"), _load_run(results_dir, "gue_edge")
    missing = [n for n, r in (("goe_edge", goe), ("gue_edge", gue)) if r is None]
    if missing:
        return _missing(9, name, limit, missing)
    (a, ta), (b, tb) = goe, gue
    var_lim = a["theory"]["var_limit"]
    bias_lim = a["theory"]["bias_limit"]
    ratio = b["variance"] / a["variance"]
    checks = {
        "goe_variance": _within(a["variance"], var_lim, 0.15, a["se"]["variance"]),
        "goe_mean": _within(a["mean"], bias_lim, 0.15, a["se"]["mean"]),
        "gue_variance_ratio": abs(ratio - 0.5) <= 0.1,
        "gue_mean_zero": abs(b["mean"]) <= 3 * b["se"]["mean"],
    }
    d = {"checks": checks, "goe": _brief(a), "gue": _brief(b), "variance_ratio": ratio,
         "var_limit": var_lim, "bias_limit": bias_lim, "wall_seconds": [ta, tb]}
    return _finish(9, name, limit, 0, all(checks.values()), d, runtime=ta + tb)


def _brief(s):
    return {k: s[k] for k in ("mean", "variance", "se", "z_scores", "gaussian_fit",
                              "samples", "N", "E0", "eta0")}


def criterion_10(results_dir) -> CriterionResult:
    name, limit = "Monte Carlo CLT at the cusp", 3600
    run = _load_run(results_dir, "cusp_gaussian")
    if run is None:
        return _missing(10, name, limit, ["cusp_gaussian"])
    s, wall = run
    var_lim = s["theory"]["var_limit"]
    bias_lim = s["theory"]["bias_limit"]
    fit = s["gaussian_fit"]
    checks = {
        "samples_at_least_1000": s["samples"] >= 1000,
        "eta0_is_N^-1/2": abs(s["eta0"] - s["N"] ** -0.5) < 1e-12,
        "variance": abs(s["variance"] - var_lim) <= 0.2 * var_lim,
        "mean": _within(s["mean"], bias_lim, 0.2, s["se"]["mean"]),
        "ks": fit["ks_statistic"] < fit["critical_1pct"],
    }
    d = {"checks": checks, "run": _brief(s), "var_limit": var_lim, "bias_limit": bias_lim,
         "regime": s["theory"]["regime"], "wall_seconds": wall}
    return _finish(10, name, limit, 0, all(checks.values()), d, runtime=wall)


def criterion_11(results_dir) -> CriterionResult:
    name, limit = "universality probe", 3600
    ga, ra = _load_run(results_dir, "cusp_gaussian"), _load_run(results_dir, "cusp_rademacher")
    missing = [n for n, r in (("cusp_gaussian", ga), ("cusp_rademacher", ra)) if r is None]
    if missing:
        return _missing(11, name, limit, missing)
    (a, _), (b, wall) = ga, ra
    checks = {}
    for key in ("mean", "variance"):
        diff = abs(a[key] - b[key])
        # each estimate inside the other's 3-SE band
        checks[key] = diff <= 3 * min(a["se"][key], b["se"][key])
    d = {"checks": checks, "gaussian": _brief(a), "rademacher": _brief(b),
         "wall_seconds": wall}
    return _finish(11, name, limit, 0, all(checks.values()), d, runtime=wall)


# ---------------------------------------------------------------- driver

def run_monte_carlo(results_dir, names=None, workers=None, progress=None) -> dict:
    """Run the Monte Carlo experiments into results_dir/<name>/ with manifests."""
    from . import montecarlo as mc
    from .cli import RunManifest, config_hash, _now
    from . import __version__
    out = {}
    for name in names or MC_RUNS:
        cfg_json = dict(MC_RUNS[name], workers=mc._worker_count(workers))
        cfg = mc.ExperimentConfig.from_json(cfg_json)
        d = os.path.join(results_dir, name)
        os.makedirs(d, exist_ok=True)
        man = RunManifest("mc", config_hash(MC_RUNS[name]), cfg.seed, __version__, _now())
        res = mc.run_experiment(cfg, progress=progress)
        paths = mc.write_outputs(res, d)
        man.finished = _now()
        man.outputs = sorted(os.path.basename(p) for p in paths.values())
        man.write(d)
        out[name] = d
    return out


def default_results_dir() -> str:
    return os.environ.get("CUSPSTATS_RESULTS", os.path.join(os.getcwd(), "results"))


def run_suite(suite: str = "quick", results_dir=None, tol=None, only=None) -> dict:
    """Evaluate the criteria; returns {"passed", "criteria": [...]} (JSON-ready)."""
    if suite not in ("quick", "full"):
        raise ValueError(f"unknown suite {suite!r}")
    results_dir = results_dir or default_results_dir()
    if suite == "full":
        run_monte_carlo(results_dir)
    live = {1: criterion_1, 2: criterion_2, 3: criterion_3,
            4: lambda: criterion_4(tol or 1e-10), 5: lambda: criterion_5(tol or 1e-8),
            6: criterion_6, 7: criterion_7, 8: criterion_8,
            9: lambda: criterion_9(results_dir), 10: lambda: criterion_10(results_dir),
            11: lambda: criterion_11(results_dir)}
    out = []
    for k in sorted(live):
        if only is not None and k not in only:
            continue
        try:
            r = live[k]()
        except CuspStatsError as exc:
            r = CriterionResult(k, f"criterion {k}", False, math.nan, math.nan,
                                {"error": f"{type(exc).__name__}: {exc}"})
        out.append(r)
    return {"suite": suite, "results_dir": results_dir,
            "passed": all(r.passed for r in out),
            "criteria": [asdict(r) for r in out]}
