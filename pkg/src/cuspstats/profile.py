"""Variance profiles, entry distributions and compactly supported test functions."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError


# ---------------------------------------------------------------------------
# variance profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VarianceProfile:
    """Variance matrix S of a Wigner-type matrix.

    Block profiles store per-entry variances multiplied by N, so that
    ``S_jk = block_variances[a, b] / N`` for j in block a and k in block b.
    Explicit profiles store the full matrix in ``entries``.
    """

    kind: str
    N: int
    c_inf: float
    C_sup: float
    block_fractions: Optional[np.ndarray] = None
    block_variances: Optional[np.ndarray] = None
    entries: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def block_sizes(self) -> np.ndarray:
        if self.kind == "explicit":
            return np.ones(self.N, dtype=int)
        fr = np.asarray(self.block_fractions, dtype=float)
        sizes = [int(round(f * self.N)) for f in fr[:-1]]
        sizes.append(self.N - sum(sizes))
        return np.array(sizes, dtype=int)

    def reduced(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (weights, V) of the block-reduced system.

        The reduced operator acting on block-constant vectors is
        ``V @ diag(weights)``; ``weights`` are the block fractions n_a/N.
        """
        if self.kind == "explicit":
            w = np.full(self.N, 1.0 / self.N)
            return w, np.asarray(self.entries, dtype=float) * self.N
        w = self.block_sizes / self.N
        return w, np.asarray(self.block_variances, dtype=float)

    def reduced_operator(self) -> np.ndarray:
        w, V = self.reduced()
        return V * w[None, :]

    @property
    def n_blocks(self) -> int:
        return len(self.reduced()[0])

    def block_index(self) -> np.ndarray:
        """Block label of every row index 0..N-1."""
        return np.repeat(np.arange(self.n_blocks), self.block_sizes)

    def full_matrix(self) -> np.ndarray:
        """Dense N x N variance matrix."""
        if self.kind == "explicit":
            return np.asarray(self.entries, dtype=float)
        idx = self.block_index()
        V = np.asarray(self.block_variances, dtype=float)
        return V[np.ix_(idx, idx)] / self.N

    def with_N(self, N: int) -> "VarianceProfile":
        if self.kind == "flat":
            return build_flat(N)
        if self.kind == "two-block":
            V = self.block_variances
            return build_two_block(N, float(self.block_fractions[0]),
                                   V[0, 0], V[0, 1], V[1, 1])
        raise DomainError("explicit profiles have a fixed dimension")

    def to_json(self) -> dict:
        if self.kind == "flat":
            return {"kind": "flat", "N": self.N}
        if self.kind == "two-block":
            V = self.block_variances
            return {"kind": "two-block", "N": self.N,
                    "fraction": float(self.block_fractions[0]),
                    "v": [float(V[0, 0]), float(V[0, 1]), float(V[1, 1])]}
        return {"kind": "explicit", "N": self.N,
                "entries": np.asarray(self.entries).tolist()}


def build_flat(N: int) -> VarianceProfile:
    """Standard Wigner profile S_jk = 1/N."""
    if int(N) != N or N < 2:
        raise DomainError(f"invalid dimension N={N}; need N >= 2")
    return VarianceProfile(kind="flat", N=int(N), c_inf=1.0, C_sup=1.0,
                           block_fractions=np.array([1.0]),
                           block_variances=np.array([[1.0]]))


def build_two_block(N: int, fraction: float, v11: float, v12: float,
                    v22: float) -> VarianceProfile:
    """Two-block profile with block sizes round(fraction*N) and N - round(fraction*N)."""
    if int(N) != N or N < 2:
        raise DomainError(f"invalid dimension N={N}")
    if not 0.0 < fraction < 1.0:
        raise DomainError(f"fraction must lie in (0,1), got {fraction}")
    v = np.array([v11, v12, v22], dtype=float)
    if np.any(~np.isfinite(v)) or np.any(v <= 0):
        raise DomainError(f"block variances must be positive, got {v.tolist()}")
    n1 = int(round(fraction * N))
    if n1 < 1 or n1 > N - 1:
        raise DomainError("both blocks must be nonempty")
    V = np.array([[v11, v12], [v12, v22]], dtype=float)
    return VarianceProfile(kind="two-block", N=int(N), c_inf=float(v.min()),
                           C_sup=float(v.max()),
                           block_fractions=np.array([fraction, 1.0 - fraction]),
                           block_variances=V)


def build_explicit(S: np.ndarray) -> VarianceProfile:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DomainError("variance matrix must be square")
    if not np.array_equal(S, S.T):
        raise DomainError("variance matrix must be symmetric")
    if np.any(S <= 0):
        raise DomainError("variance matrix must have positive entries")
    N = S.shape[0]
    return VarianceProfile(kind="explicit", N=N, c_inf=float(N * S.min()),
                           C_sup=float(N * S.max()), entries=S.copy())


def profile_from_json(obj: dict | str) -> VarianceProfile:
    """Build a profile from its JSON description (dict, JSON text or file path)."""
    if isinstance(obj, str):
        try:
            obj = json.loads(obj)
        except json.JSONDecodeError:
            with open(obj) as fh:
                obj = json.load(fh)
    kind = obj.get("kind")
    if kind == "flat":
        return build_flat(int(obj["N"]))
    if kind == "two-block":
        v = obj["v"]
        return build_two_block(int(obj["N"]), float(obj["fraction"]), *map(float, v))
    if kind == "explicit":
        if "csv" in obj:
            return build_explicit(np.loadtxt(obj["csv"], delimiter=",", ndmin=2))
        return build_explicit(np.array(obj["entries"], dtype=float))
    raise DomainError(f"unknown profile kind {kind!r}")


# ---------------------------------------------------------------------------
# entry distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EntryDistribution:
    family: str = "gaussian"  # gaussian | rademacher
    beta: int = 1  # 1 real symmetric, 2 complex hermitian

    def __post_init__(self):
        if self.family not in ("gaussian", "rademacher"):
            raise DomainError(f"unknown entry family {self.family!r}")
        if self.beta not in (1, 2):
            raise DomainError(f"symmetry class must be 1 or 2, got {self.beta}")

    def fourth_cumulant(self, s: np.ndarray | float, diagonal: bool = False):
        """c4(Re h) + c4(Im h) for an entry h of variance s."""
        s = np.asarray(s, dtype=float)
        if self.family == "gaussian":
            return np.zeros_like(s)
        if self.beta == 1 or diagonal:
            return -2.0 * s**2
        # real and imaginary parts are +-sqrt(s/2) each
        return 2.0 * (-2.0 * (s / 2.0) ** 2)


def fourth_cumulant_matrix(profile: VarianceProfile,
                           dist: EntryDistribution) -> np.ndarray:
    """N x N matrix C4_jk = c4(Re H_jk) + c4(Im H_jk)."""
    S = profile.full_matrix()
    C = dist.fourth_cumulant(S)
    if dist.beta == 2:
        np.fill_diagonal(C, dist.fourth_cumulant(np.diag(S), diagonal=True))
    return C


def reduced_fourth_cumulant(profile: VarianceProfile,
                            dist: EntryDistribution) -> np.ndarray:
    """Block values of N^2 * C4, the form used by the reduced kernel."""
    w, V = profile.reduced()
    N = profile.N
    C = dist.fourth_cumulant(V / N) * N**2
    if dist.beta == 2 and profile.kind == "explicit":
        np.fill_diagonal(C, dist.fourth_cumulant(np.diag(V) / N, diagonal=True) * N**2)
    # for block profiles the diagonal entries are a vanishing fraction of a block
    return C


# ---------------------------------------------------------------------------
# test functions
# ---------------------------------------------------------------------------

def _bump(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    out[inside] = np.exp(-1.0 / (1.0 - xi * xi))
    return out


def _bump_d1(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    q = 1.0 - xi * xi
    out[inside] = np.exp(-1.0 / q) * (-2.0 * xi / q**2)
    return out


def _bump_d2(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    q = 1.0 - xi * xi
    out[inside] = np.exp(-1.0 / q) * (6.0 * xi**4 - 2.0) / q**4
    return out


@dataclass(frozen=True)
class TestFunction:
    """A C^2 function with compact support [a, b] and its first two derivatives."""

    __test__ = False  # keep pytest from collecting this class

    id: str
    support: tuple[float, float]
    eval: Callable[[np.ndarray], np.ndarray]
    eval_d1: Callable[[np.ndarray], np.ndarray]
    eval_d2: Callable[[np.ndarray], np.ndarray]
    sup_norms: tuple[float, float, float] = (np.nan, np.nan, np.nan)

    def __call__(self, x):
        return self.eval(x)

    @property
    def is_zero(self) -> bool:
        return self.id == "zero"


def _with_sup_norms(tf: TestFunction, n: int = 200001) -> TestFunction:
    a, b = tf.support
    x = np.linspace(a, b, n)
    norms = tuple(float(np.max(np.abs(fn(x)))) for fn in (tf.eval, tf.eval_d1, tf.eval_d2))
    # grid maxima underestimate the true sup by O(h^2); pad slightly
    norms = tuple(v * (1.0 + 1e-6) for v in norms)
    return TestFunction(tf.id, tf.support, tf.eval, tf.eval_d1, tf.eval_d2, norms)


def _make_builtins() -> dict[str, TestFunction]:
    fns = {}
    fns["bump"] = TestFunction("bump", (-1.0, 1.0), _bump, _bump_d1, _bump_d2)
    fns["odd_bump"] = TestFunction(
        "odd_bump", (-1.0, 1.0),
        lambda x: np.asarray(x, float) * _bump(x),
        lambda x: _bump(x) + np.asarray(x, float) * _bump_d1(x),
        lambda x: 2.0 * _bump_d1(x) + np.asarray(x, float) * _bump_d2(x))
    # asymmetric member: bump(x)(1 + x/2)
    fns["skew_bump"] = TestFunction(
        "skew_bump", (-1.0, 1.0),
        lambda x: _bump(x) * (1.0 + 0.5 * np.asarray(x, float)),
        lambda x: _bump_d1(x) * (1.0 + 0.5 * np.asarray(x, float)) + 0.5 * _bump(x),
        lambda x: _bump_d2(x) * (1.0 + 0.5 * np.asarray(x, float)) + _bump_d1(x))
    zero = lambda x: np.zeros_like(np.asarray(x, dtype=float))
    fns["zero"] = TestFunction("zero", (-1.0, 1.0), zero, zero, zero, (0.0, 0.0, 0.0))
    return {k: (_with_sup_norms(v) if k != "zero" else v) for k, v in fns.items()}


_BUILTINS: Optional[dict[str, TestFunction]] = None


def test_function(name: str) -> TestFunction:
    """Look up a built-in test function: bump, odd_bump, skew_bump or zero."""
    global _BUILTINS
    if _BUILTINS is None:
        _BUILTINS = _make_builtins()
    try:
        return _BUILTINS[name]
    except KeyError:
        raise DomainError(f"unknown test function {name!r}; "
                          f"choose from {sorted(_BUILTINS)}") from None


test_function.__test__ = False


def builtin_test_functions() -> list[str]:
    return ["bump", "odd_bump", "skew_bump"]
