"""Monte Carlo sampling of Wigner-type matrices and mesoscopic linear statistics."""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import integrate, stats

from . import dyson, kernels, singularity
from .errors import ConvergenceError, DomainError
from .profile import (EntryDistribution, TestFunction, VarianceProfile, profile_from_json,
                      test_function)

EPS0 = 0.05
# default eta0 = N^-gamma: mid-window between eta_f and N^-eps0
DEFAULT_GAMMA = {"edge": 4.0 / 9.0, "cusp": 0.5}


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _standard_entries(rng: np.random.Generator, family: str, shape):
    if family == "gaussian":
        return rng.standard_normal(shape)
    return rng.integers(0, 2, size=shape, dtype=np.int8) * 2.0 - 1.0


def sample_matrix(profile: VarianceProfile, dist: EntryDistribution,
                  rng: np.random.Generator, S_full: np.ndarray | None = None) -> np.ndarray:
    """Hermitian matrix with independent entries (up to symmetry) and E|H_jk|^2 = S_jk.

    In the complex class the off-diagonal variance is split equally between
    independent real and imaginary parts, so E H_jk^2 = 0; the diagonal is real.
    """
    S = profile.full_matrix() if S_full is None else S_full
    N = S.shape[0]
    sd = np.sqrt(S)
    A = _standard_entries(rng, dist.family, (N, N))
    if dist.beta == 1:
        H = np.triu(A * sd)
        return H + np.triu(H, 1).T
    B = _standard_entries(rng, dist.family, (N, N))
    U = np.triu((A + 1j * B) * (sd / math.sqrt(2.0)), 1)
    return U + U.conj().T + np.diag(A.diagonal() * sd.diagonal()).astype(complex)


def eigenvalues(H: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.eigvalsh(H)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"eigensolver failed: {exc}") from exc


def linear_statistic(H, g: TestFunction, E0: float, eta0: float, centering: float,
                     evals: np.ndarray | None = None) -> float:
    """sum_j g((lambda_j - E0)/eta0) - centering from a full eigendecomposition."""
    lam = eigenvalues(H) if evals is None else evals
    return float(math.fsum(g.eval((lam - E0) / eta0)) - centering)


# ---------------------------------------------------------------------------
# centering
# ---------------------------------------------------------------------------

@dataclass
class Centering:
    value: float  # N int g((x - E0)/eta0) rho(x) dx
    integral: float
    grid: dyson.DensityGrid
    grid_value: float  # the same integral by trapezoid on the grid
    quad_error: float


def centering(profile: VarianceProfile, g: TestFunction, E0: float, eta0: float,
              resolution: float = 1.0 / 50.0) -> Centering:
    """N int g((x-E0)/eta0) rho(x) dx.

    The value comes from adaptive quadrature of the boundary density, split at
    E0 and at support endpoints inside the window (rho has square- or
    cube-root points there).  A density grid with spacing resolution*eta0
    is kept for diagnostics and as a check on the quadrature.
    """
    a, b = g.support
    lo, hi = E0 + a * eta0, E0 + b * eta0
    n = int(math.ceil((hi - lo) / (resolution * eta0))) + 1
    n += (n + 1) % 2  # odd count keeps E0 on the grid for symmetric supports
    grid = dyson.density_grid(profile, (lo, hi), n)
    gv = g.eval((grid.energies - E0) / eta0)
    grid_value = float(integrate.trapezoid(gv * grid.rho_values, grid.energies))
    breaks = {lo, hi, E0}
    for s0, s1 in grid.support_intervals:
        for e in (s0, s1):
            if lo < e < hi:
                breaks.add(float(e))
    breaks = sorted(breaks)
    rho = lambda x: float(dyson.rho_many(profile, np.array([x]))[0])
    total, err = 0.0, 0.0
    for x0, x1 in zip(breaks[:-1], breaks[1:]):
        v, e = integrate.quad(lambda x: float(g.eval(np.array([(x - E0) / eta0]))[0]) * rho(x),
                              x0, x1, epsabs=1e-13, epsrel=1e-11, limit=200)
        total += v
        err += e
    return Centering(profile.N * total, total, grid, grid_value, err)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def _moments(x: np.ndarray) -> np.ndarray:
    """mean, unbiased variance, skewness, excess kurtosis along the last axis."""
    n = x.shape[-1]
    mean = x.mean(axis=-1)
    d = x - mean[..., None]
    m2 = (d**2).mean(axis=-1)
    m3 = (d**3).mean(axis=-1)
    m4 = (d**4).mean(axis=-1)
    var = m2 * n / (n - 1)
    return np.stack([mean, var, m3 / m2**1.5, m4 / m2**2 - 3.0], axis=-1)


def jackknife_moments(x) -> tuple[np.ndarray, np.ndarray]:
    """Moments of the full sample and their delete-1 jackknife standard errors."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 3:
        raise DomainError("at least three samples are needed")
    full = _moments(x)
    loo = np.empty((n, 4))
    idx = np.arange(n)
    for start in range(0, n, 256):
        rows = idx[start:start + 256]
        mask = np.ones((len(rows), n), dtype=bool)
        mask[np.arange(len(rows)), rows] = False
        sub = np.broadcast_to(x, (len(rows), n))[mask].reshape(len(rows), n - 1)
        loo[rows] = _moments(sub)
    se = np.sqrt((n - 1) / n * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    return full, se


def ks_standardized(x) -> tuple[float, float, float]:
    """KS statistic of (x - mean)/sd against N(0,1), its p-value and the 1% critical value."""
    x = np.asarray(x, dtype=float)
    z = (x - x.mean()) / x.std(ddof=1)
    res = stats.kstest(z, "norm")
    return float(res.statistic), float(res.pvalue), float(stats.kstwo.ppf(0.99, len(x)))


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    profile: VarianceProfile
    dist: EntryDistribution = field(default_factory=EntryDistribution)
    E0: float | str = "auto"
    eta0: float | None = None  # explicit value, else N^-gamma
    gamma: float | None = None
    g: str = "bump"
    samples: int = 100
    seed: int = 0
    workers: int = 1
    hist_bins: int = 40

    def __post_init__(self):
        if self.samples < 3:
            raise DomainError("at least three samples are needed")
        if self.workers < 1:
            raise DomainError("workers must be positive")
        if self.eta0 is not None and self.gamma is not None:
            raise DomainError("give either eta0 or gamma, not both")
        if self.eta0 is not None and not self.eta0 > 0:
            raise DomainError("eta0 must be positive")

    def to_json(self) -> dict:
        return {"profile": self.profile.to_json(),
                "dist": {"family": self.dist.family, "beta": self.dist.beta},
                "E0": self.E0, "eta0": self.eta0, "gamma": self.gamma, "g": self.g,
                "samples": self.samples, "seed": self.seed, "workers": self.workers,
                "hist_bins": self.hist_bins}

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        obj = dict(obj)
        prof = profile_from_json(obj.pop("profile"))
        d = obj.pop("dist", {})
        dist = EntryDistribution(d.get("family", "gaussian"), int(d.get("beta", 1)))
        known = {"E0", "eta0", "gamma", "g", "samples", "seed", "workers", "hist_bins"}
        unknown = set(obj) - known
        if unknown:
            raise DomainError(f"unknown experiment keys {sorted(unknown)}")
        return cls(prof, dist, **obj)


@dataclass
class ExperimentResult:
    per_sample: list
    mean: float
    variance: float
    skewness: float
    excess_kurtosis: float
    se: dict
    theory: dict
    z_scores: dict
    gaussian_fit: dict
    E0: float
    eta0: float
    N: int
    centering: float
    global_law: dict
    config: dict

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("per_sample")
        d["samples"] = len(self.per_sample)
        return d


def _select_E0(reports, E0):
    if E0 != "auto":
        return singularity.find_report(reports, float(E0))
    cusps = [r for r in reports if r.kind == "exact-cusp"]
    if cusps:
        return cusps[0]
    edges = [r for r in reports if r.kind in ("left-edge", "right-edge")]
    if not edges:
        raise DomainError("no singular point to pick automatically")
    # smallest adjacent gap first, then the rightmost point
    return min(edges, key=lambda r: (r.Delta, -r.E0))


def theory_block(report, g: TestFunction, eta0: float, beta: int, N: int,
                 tol: float = 1e-8) -> dict:
    """Predicted mean (2/beta - 1) Bias and variance Var/beta at alpha_hat."""
    alpha = singularity.alpha_hat(report, eta0, N=N)
    regime, a, s = singularity.regime_for(alpha, report.s_hat)
    spec = kernels.KernelSpec(regime, a, s)
    opts = kernels.QuadOptions(tol=tol)
    var = kernels.variance(spec, g, opts).value
    bias = kernels.bias(spec, g, opts)
    return {"regime": regime, "alpha_hat": alpha, "s": s, "var_limit": var,
            "bias_limit": bias, "var_pred": var / beta,
            "bias_pred": (2.0 / beta - 1.0) * bias, "report_E0": report.E0,
            "kind": report.kind}


def _substream(seed: int, i: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, i])))


def _sample_chunk(args):
    prof_json, family, beta, g_id, E0, eta0, cen, seed, indices, edges = args
    profile = profile_from_json(prof_json)
    dist = EntryDistribution(family, beta)
    g = test_function(g_id)
    S = profile.full_matrix()
    out = []
    hist = np.zeros(len(edges) + 1, dtype=np.int64)
    for i in indices:
        H = sample_matrix(profile, dist, _substream(seed, i), S)
        try:
            lam = eigenvalues(H)
        except ConvergenceError as exc:
            raise ConvergenceError(f"sample {i}: {exc}") from exc
        out.append(linear_statistic(None, g, E0, eta0, cen, evals=lam))
        hist += np.bincount(np.searchsorted(edges, lam), minlength=len(edges) + 1)
    return out, hist


def _worker_count(requested: int | None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("CUSPSTATS_WORKERS")
    return max(1, int(env)) if env else 1


def _global_law(profile, edges, counts, samples):
    """Sup-distance between the empirical eigenvalue CDF and the integrated density on edges."""
    F_emp = np.cumsum(counts)[:-1] / (samples * profile.N)
    rho = dyson.rho_many(profile, np.linspace(edges[0], edges[-1], 20 * (len(edges) - 1) + 1))
    x = np.linspace(edges[0], edges[-1], len(rho))
    F_rho = integrate.cumulative_trapezoid(rho, x, initial=0.0)[::20]
    return {"edges": edges.tolist(), "F_empirical": F_emp.tolist(), "F_density": F_rho.tolist(),
            "sup_distance": float(np.max(np.abs(F_emp - F_rho)))}


def run_experiment(config: ExperimentConfig, progress=None) -> ExperimentResult:
    profile, dist = config.profile, config.dist
    N = profile.N
    g = test_function(config.g)
    if g.is_zero:
        raise DomainError("the zero test function has a degenerate statistic")
    # classification on a grid covering the spectrum
    S = profile.reduced_operator()
    R = 2.0 * math.sqrt(float(np.max(S.sum(axis=1)))) + 0.5
    grid = dyson.density_grid(profile, (-R, R), int(2 * R / 5e-4) + 1)
    reports = singularity.classify(grid, profile, N=N)
    rep = _select_E0(reports, config.E0)
    E0 = rep.E0
    if config.eta0 is not None:
        eta0 = float(config.eta0)
    else:
        gamma = config.gamma if config.gamma is not None else DEFAULT_GAMMA[
            "cusp" if rep.kind == "exact-cusp" else "edge"]
        eta0 = N ** -gamma
    lo_w, hi_w = N**EPS0 * rep.eta_f, N**-EPS0
    if not lo_w <= eta0 <= hi_w:
        warnings.warn(f"eta0={eta0:.3e} outside the mesoscopic window [{lo_w:.3e}, {hi_w:.3e}]")
    theory = theory_block(rep, g, eta0, dist.beta, N)
    cen = centering(profile, g, E0, eta0)
    # coarse grid for the global-law check, spanning the support
    sup = grid.support_intervals
    edges = np.linspace(sup[0][0] - 0.05, sup[-1][1] + 0.05, config.hist_bins + 1)
    workers = _worker_count(config.workers)
    n_chunks = max(workers * 4, math.ceil(config.samples / 25))
    chunks = np.array_split(np.arange(config.samples), n_chunks)
    args = [(profile.to_json(), dist.family, dist.beta, g.id, E0, eta0, cen.value,
             config.seed, c.tolist(), edges) for c in chunks if len(c)]
    values, hist = [], np.zeros(len(edges) + 1, dtype=np.int64)
    if workers == 1:
        results = map(_sample_chunk, args)
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        results = pool.map(_sample_chunk, args)
    for k, (vals, h) in enumerate(results):  # order-fixed merge
        values.extend(vals)
        hist += h
        if progress is not None:
            progress(len(values), config.samples)
    if workers > 1:
        pool.shutdown()
    x = np.array(values)
    if np.any(np.abs(x + cen.value) > N * g.sup_norms[0]):
        raise DomainError("eigenvalue sum exceeds N sup|g|")
    mom, se = jackknife_moments(x)
    ks, pval, crit = ks_standardized(x)
    z = {"mean": float((mom[0] - theory["bias_pred"]) / se[0]),
         "variance": float((mom[1] - theory["var_pred"]) / se[1])}
    return ExperimentResult(
        per_sample=[float(v) for v in x], mean=float(mom[0]), variance=float(mom[1]),
        skewness=float(mom[2]), excess_kurtosis=float(mom[3]),
        se={"mean": float(se[0]), "variance": float(se[1]), "skewness": float(se[2]),
            "excess_kurtosis": float(se[3])},
        theory=theory, z_scores=z,
        gaussian_fit={"ks_statistic": ks, "p_value": pval, "critical_1pct": crit},
        E0=E0, eta0=eta0, N=N, centering=cen.value,
        global_law=_global_law(profile, edges, hist, len(x))
        | {"centering_grid_value": N * cen.grid_value},
        config=config.to_json())


def write_outputs(result: ExperimentResult, out_dir) -> dict:
    """per_sample.csv, summary.json and plotdata.csv in out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, k) for k in ("per_sample.csv", "summary.json",
                                                   "plotdata.csv")}
    with open(paths["per_sample.csv"], "w") as fh:
        fh.writelines(f"{v!r}\n" for v in result.per_sample)
    with open(paths["summary.json"], "w") as fh:
        json.dump(_clean(result.summary()), fh, indent=2)
    x = np.asarray(result.per_sample)
    z = np.sort((x - x.mean()) / x.std(ddof=1))
    ecdf = np.arange(1, len(z) + 1) / len(z)
    with open(paths["plotdata.csv"], "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["standardized", "empirical_cdf", "gaussian_cdf"])
        for a, b, c in zip(z, ecdf, stats.norm.cdf(z)):
            wr.writerow([repr(float(a)), repr(float(b)), repr(float(c))])
    return paths


def _clean(o):
    """JSON-safe copy: infinities become strings, numpy scalars become Python numbers."""
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (np.floating, np.integer)):
        o = o.item()
    if isinstance(o, float) and math.isinf(o):
        return "inf" if o > 0 else "-inf"
    return o


def load_summary(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
