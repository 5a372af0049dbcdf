"""Command-line interface: cuspstats <command> [options].

Exit codes: 0 success, 1 domain error, 2 precision/convergence error, 3 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, asdict, field

import numpy as np

from . import __version__
from .errors import CuspStatsError

EXIT_OK, EXIT_DOMAIN, EXIT_PRECISION, EXIT_USAGE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int | None
    tool_version: str
    started: str
    finished: str = ""
    outputs: list = field(default_factory=list)

    def write(self, out_dir) -> str:
        path = os.path.join(out_dir, "manifest.json")
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2)
        return path


def config_hash(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _clean(o):
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (np.floating, np.integer)):
        o = o.item()
    if isinstance(o, float) and math.isinf(o):
        return "inf" if o > 0 else "-inf"
    return o


def _emit(obj, out):
    """Print JSON, or write it to a file when --out names a path."""
    text = json.dumps(_clean(obj), indent=2)
    if out in (None, "json", "-"):
        print(text)
    else:
        os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
        with open(out, "w") as fh:
            fh.write(text + "\n")


def _profile(arg):
    from .profile import profile_from_json
    from . import tuning
    if arg in ("cusp-tuned", "gap-tuned", "minimum-tuned"):
        return tuning.tuned_profile(arg.split("-")[0])
    if arg.startswith("flat:"):
        from .profile import build_flat
        return build_flat(int(arg.split(":", 1)[1]))
    return profile_from_json(arg)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_density(a):
    from . import dyson
    prof = _profile(a.profile)
    grid = dyson.density_grid(prof, tuple(a.range), a.points)
    if a.out in (None, "-"):
        print("energy,rho,eta_used")
        for e, r, h in zip(grid.energies, grid.rho_values, grid.eta_used):
            print(f"{float(e)!r},{float(r)!r},{float(h)!r}")
    else:
        grid.to_csv(a.out)
    return EXIT_OK


def cmd_classify(a):
    from . import dyson, singularity
    prof = _profile(a.profile)
    grid = dyson.density_grid(prof, tuple(a.range), a.points)
    reports = singularity.classify(grid, prof)
    out = []
    for r in reports:
        d = r.to_json()
        if a.eta0 is not None:
            d["alpha_hat"] = singularity.alpha_hat(r, a.eta0, N=prof.N)
        out.append(d)
    _emit({"support": grid.support_intervals, "reports": out}, a.out)
    return EXIT_OK


def _tol(a) -> float:
    return 1e-8 if a.tol is None else a.tol


def _spec(a):
    from . import kernels
    alpha = math.nan if a.alpha is None else a.alpha
    return kernels.KernelSpec(a.regime, alpha, a.s)


def cmd_kernel(a):
    """Kernel value in its own variables (the regime parameter only selects the kernel)."""
    from . import kernels
    spec = _spec(a)
    v = float(kernels.kernel(spec.regime, *a.eval))
    print(int(v) if v.is_integer() and abs(v) < 1e15 else repr(v))
    return EXIT_OK


def cmd_variance(a):
    from . import kernels, profile
    g = profile.test_function(a.g)
    r = kernels.variance(_spec(a), g, kernels.QuadOptions(tol=_tol(a)))
    _emit(r.to_json(), a.out)
    return EXIT_OK


def cmd_bias(a):
    from . import kernels, profile
    g = profile.test_function(a.g)
    v = kernels.bias(_spec(a), g, kernels.QuadOptions(tol=_tol(a)))
    _emit({"value": v}, a.out)
    return EXIT_OK


def cmd_finite_variance(a):
    from . import dyson, finite_n, singularity, profile as pr
    prof = _profile(a.profile)
    if a.E0 == "auto":
        S = prof.reduced_operator()
        R = 2.0 * math.sqrt(float(np.max(S.sum(axis=1)))) + 0.5
        grid = dyson.density_grid(prof, (-R, R), int(2 * R / 5e-4) + 1)
        from .montecarlo import _select_E0
        E0 = _select_E0(singularity.classify(grid, prof), "auto").E0
    else:
        E0 = float(a.E0)
    g = pr.test_function(a.g)
    stf = finite_n.ScaledTestFunction(g, E0, a.eta0, c1=a.c1, chi=a.chi)
    dist = pr.EntryDistribution(a.entries, a.beta)
    opts = finite_n.FiniteNOptions(max_evaluations=a.max_evaluations)
    r = finite_n.finite_variance(prof, stf, dist, opts, tol=a.tol)
    _emit(dict(r.to_json(), E0=E0, eta0=a.eta0), a.out)
    return EXIT_OK


def cmd_mc(a):
    from . import montecarlo as mc
    with open(a.config) as fh:
        cfg_json = json.load(fh)
    if a.seed is not None:
        cfg_json["seed"] = a.seed
    if a.workers is not None:
        cfg_json["workers"] = a.workers
    elif "workers" not in cfg_json:
        cfg_json["workers"] = mc._worker_count(None)
    cfg = mc.ExperimentConfig.from_json(cfg_json)
    out = a.out or "results"
    os.makedirs(out, exist_ok=True)
    man = RunManifest("mc", config_hash({k: v for k, v in cfg_json.items() if k != "workers"}),
                      cfg.seed, __version__, _now())

    def progress(done, total):
        if not a.quiet:
            print(f"{done}/{total} samples", file=sys.stderr, flush=True)

    res = mc.run_experiment(cfg, progress=progress)
    paths = mc.write_outputs(res, out)
    man.finished = _now()
    man.outputs = sorted(os.path.basename(p) for p in paths.values())
    man.write(out)
    print(json.dumps(mc._clean({k: v for k, v in res.summary().items()
                                if k not in ("global_law", "config")}), indent=2))
    return EXIT_OK


def cmd_verify(a):
    from . import acceptance
    report = acceptance.run_suite(a.suite, results_dir=a.results, tol=a.tol)
    _emit(report, a.out)
    return EXIT_OK if report["passed"] else EXIT_DOMAIN


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    glob = _Parser(add_help=False)
    glob.add_argument("--seed", type=int, default=None)
    glob.add_argument("--workers", type=int, default=None,
                      help="worker processes (overrides CUSPSTATS_WORKERS)")
    glob.add_argument("--tol", type=float, default=None,
                      help="absolute tolerance (default 1e-8 for limit functionals)")
    glob.add_argument("--out", default=None)

    p = _Parser(prog="cuspstats", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[glob], help=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = add("density", cmd_density, "self-consistent density on a grid (CSV)")
    sp.add_argument("--profile", required=True,
                    help="profile JSON file or text, flat:N, or cusp-tuned/gap-tuned/minimum-tuned")
    sp.add_argument("--range", nargs=2, type=float, default=[-3.0, 3.0])
    sp.add_argument("--points", type=int, default=601)

    sp = add("classify", cmd_classify, "edges, cusps and small minima (JSON)")
    sp.add_argument("--profile", required=True)
    sp.add_argument("--range", nargs=2, type=float, default=[-3.0, 3.0])
    sp.add_argument("--points", type=int, default=6001)
    sp.add_argument("--eta0", type=float, default=None)

    def regime_args(sp):
        sp.add_argument("--regime", required=True,
                        choices=["edge", "cusp", "gap", "minimum", "min", "bulk"])
        sp.add_argument("--alpha", type=float, default=None)
        sp.add_argument("--s", type=int, default=1, choices=[-1, 1])

    sp = add("kernel", cmd_kernel, "evaluate a universal kernel")
    regime_args(sp)
    sp.add_argument("--eval", nargs=2, type=float, required=True, metavar=("X", "Y"))

    sp = add("variance", cmd_variance, "limiting variance functional")
    regime_args(sp)
    sp.add_argument("--g", default="bump")

    sp = add("bias", cmd_bias, "limiting bias functional")
    regime_args(sp)
    sp.add_argument("--g", default="bump")

    sp = add("finite-variance", cmd_finite_variance, "finite-N variance V(f)")
    sp.add_argument("--profile", required=True)
    sp.add_argument("--E0", default="auto")
    sp.add_argument("--eta0", type=float, required=True)
    sp.add_argument("--g", default="bump")
    sp.add_argument("--entries", default="gaussian", choices=["gaussian", "rademacher"])
    sp.add_argument("--beta", type=int, default=1, choices=[1, 2])
    sp.add_argument("--c1", type=float, default=0.25)
    sp.add_argument("--chi", default="smooth", choices=["smooth", "poly"])
    sp.add_argument("--max-evaluations", type=int, default=4_000_000)

    sp = add("mc", cmd_mc, "Monte Carlo experiment")
    sp.add_argument("--config", required=True)
    sp.add_argument("--quiet", action="store_true")

    sp = add("verify", cmd_verify, "acceptance suite (JSON pass/fail)")
    sp.add_argument("--suite", default="quick", choices=["quick", "full"])
    sp.add_argument("--results", default=None,
                    help="directory holding cached Monte Carlo runs")
    return p


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
        if a.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        if a.workers is not None:
            os.environ["CUSPSTATS_WORKERS"] = str(a.workers)
        if getattr(a, "regime", None) == "min":
            a.regime = "minimum"
        return a.func(a)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if not exc.code else EXIT_USAGE
    except CuspStatsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
