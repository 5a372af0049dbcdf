"""Finite-N variance V(f) as a double contour integral of the two-point kernel.

V(f) = pi^-2 int int dbar f~(zeta) dbar f~(z) K(z, zeta) d^2z d^2zeta over
|Im z|, |Im zeta| > eta_cut, with the quasi-analytic extension
f~(x + i eta) = chi(eta) (f(x) + i eta f'(x)) of the scaled test function
f(x) = g((x - E0)/eta0).

The kernel is
    K = (2/beta) T1 + (1 - 2/beta) T2 + T3/2
    T1 = d_zeta Tr[(m'/m) (1 - S m m~)^-1]   (= d_z d_zeta (-log det(1 - S m m~)))
    T2 = Tr[S m' m~']
    T3 = d_z d_zeta <m m~, C4 m m~>
All traces reduce exactly to the block dimension.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, asdict

import numpy as np

from . import dyson
from .errors import DomainError, PrecisionError
from .profile import EntryDistribution, TestFunction, VarianceProfile, reduced_fourth_cumulant
from .quadrature import QuadOptions, adaptive_2d

CHI_PROFILES = ("smooth", "poly")
COND_MAX = 1e12


# ---------------------------------------------------------------------------
# cutoff and scaled test function
# ---------------------------------------------------------------------------

def _smooth_step(u):
    """C^infinity step: 0 for u <= 0, 1 for u >= 1; returns value and derivative."""
    u = np.asarray(u, dtype=float)
    a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
    b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    da = np.where(u > 0, a / np.where(u > 0, u, 1.0) ** 2, 0.0)
    db = np.where(u < 1, -b / np.where(u < 1, 1.0 - u, 1.0) ** 2, 0.0)
    s = a + b
    return a / s, (da * s - a * (da + db)) / s**2


def chi(eta, c1: float, profile: str = "smooth"):
    """Even cutoff equal to 1 on [-c1/2, c1/2] and 0 outside [-c1, c1].

    Returns (chi(eta), chi'(eta)).
    """
    eta = np.asarray(eta, dtype=float)
    t = np.abs(eta) / c1
    u = np.clip(2.0 * t - 1.0, 0.0, 1.0)  # 0 at |eta| = c1/2, 1 at |eta| = c1
    if profile == "smooth":
        s, ds = _smooth_step(u)
    elif profile == "poly":
        s = u**3 * (10.0 - 15.0 * u + 6.0 * u**2)
        ds = 30.0 * u**2 * (1.0 - u) ** 2
    else:
        raise DomainError(f"unknown cutoff profile {profile!r}; choose from {CHI_PROFILES}")
    inside = (t > 0.5) & (t < 1.0)
    val = 1.0 - s
    dval = np.where(inside, -ds * 2.0 / c1 * np.sign(eta), 0.0)
    return val, dval


@dataclass(frozen=True)
class ScaledTestFunction:
    g: TestFunction
    E0: float
    eta0: float
    c1: float = 0.25
    chi: str = "smooth"

    def __post_init__(self):
        if not self.eta0 > 0:
            raise DomainError("eta0 must be positive")
        if not self.c1 > 0:
            raise DomainError("c1 must be positive")
        if self.chi not in CHI_PROFILES:
            raise DomainError(f"unknown cutoff profile {self.chi!r}")

    @property
    def support(self) -> tuple[float, float]:
        a, b = self.g.support
        return self.E0 + self.eta0 * a, self.E0 + self.eta0 * b

    def _u(self, x):
        return (np.asarray(x, dtype=float) - self.E0) / self.eta0

    def f(self, x):
        return self.g.eval(self._u(x))

    def f1(self, x):
        return self.g.eval_d1(self._u(x)) / self.eta0

    def f2(self, x):
        return self.g.eval_d2(self._u(x)) / self.eta0**2

    def extension(self, z):
        """f~(x + i eta) = chi(eta)(f(x) + i eta f'(x))."""
        z = np.asarray(z, dtype=complex)
        x, eta = z.real, z.imag
        c, _ = chi(eta, self.c1, self.chi)
        return c * (self.f(x) + 1j * eta * self.f1(x))


def qa_dbar(stf: ScaledTestFunction, z):
    """dbar f~(x + i eta) = (i/2)[eta chi f'' + chi' (f + i eta f')]."""
    z = np.asarray(z, dtype=complex)
    x, eta = z.real, z.imag
    c, dc = chi(eta, stf.c1, stf.chi)
    out = 0.5j * (eta * c * stf.f2(x) + dc * (stf.f(x) + 1j * eta * stf.f1(x)))
    return out if out.ndim else complex(out)


# ---------------------------------------------------------------------------
# kernel
# ---------------------------------------------------------------------------

def _reduced_c4(profile: VarianceProfile, c4):
    """Block values of N^2 C4 (K x K) from a distribution, a block matrix or an N x N matrix."""
    w, _ = profile.reduced()
    K = len(w)
    if c4 is None:
        return np.zeros((K, K))
    if isinstance(c4, EntryDistribution):
        return reduced_fourth_cumulant(profile, c4)
    c4 = np.asarray(c4, dtype=float)
    if c4.shape == (K, K):
        return c4
    if c4.shape == (profile.N, profile.N):
        idx = profile.block_index()
        out = np.zeros((K, K))
        for a in range(K):
            for b in range(K):
                out[a, b] = c4[np.ix_(idx == a, idx == b)].mean()
        return out * profile.N**2
    raise DomainError(f"fourth-cumulant matrix of shape {c4.shape} does not fit the profile")


def _beta_of(c4, beta):
    if isinstance(c4, EntryDistribution):
        return c4.beta
    if beta not in (1, 2):
        raise DomainError(f"symmetry class must be 1 or 2, got {beta}")
    return beta


def spectral_data(profile: VarianceProfile, z):
    """m(z) and m'(z) = (1 - m^2 S)^-1 m^2 for an array of non-real z, shape (P, K)."""
    S = profile.reduced_operator()
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    m, _ = dyson.solve_many(profile, z)
    B = np.eye(S.shape[0])[None] - (m * m)[:, :, None] * S[None]
    mp = np.linalg.solve(B, (m * m)[..., None])[..., 0]
    return m, mp


def _kernel_from_data(S, w, c4r, beta, m, mp, n, npr, check=True):
    """Kernel for broadcastable stacks of block vectors (..., K)."""
    X = m * n
    K = S.shape[0]
    A = np.eye(K) - S * X[..., None, :]
    R = np.linalg.inv(A)
    if check:
        # relative to the size of the cancelling terms, so that K = 1 is covered too
        SX = S * X[..., None, :]
        cond = (1.0 + np.linalg.norm(SX, axis=(-2, -1))) * np.linalg.norm(R, axis=(-2, -1))
        if not np.all(cond < COND_MAX):
            raise DomainError("near-singular kernel: 1 - S m m~ has condition above "
                              f"{COND_MAX:.0e}; move the contour away from the real axis")
    SD = S * (m * npr)[..., None, :]
    T1 = np.einsum("...ab,...bc,...c,...ca->...", SD, R, mp / m, R)
    T2 = np.sum(np.diag(S) * mp * npr, axis=-1)
    out = (2.0 / beta) * T1 + (1.0 - 2.0 / beta) * T2
    if np.any(c4r != 0):
        Cw = c4r * np.outer(w, w)
        Xzz = mp * npr
        Xz, Xs = mp * n, m * npr
        T3 = 2.0 * (np.einsum("...a,ab,...b->...", Xzz, Cw, X)
                    + np.einsum("...a,ab,...b->...", Xz, Cw, Xs))
        out = out + 0.5 * T3
    return out


def finite_kernel(profile: VarianceProfile, z, zeta, c4=None, beta: int = 1):
    """Two-point kernel K(z, zeta) (elementwise over broadcast z, zeta).

    c4 is None (gaussian), an EntryDistribution (which also fixes beta), a
    K x K block matrix of N^2 C4 values or an N x N fourth-cumulant matrix.
    """
    z, zeta = np.broadcast_arrays(np.asarray(z, dtype=complex), np.asarray(zeta, dtype=complex))
    if np.any(z.imag == 0) or np.any(zeta.imag == 0):
        raise DomainError("the kernel needs Im z != 0 and Im zeta != 0")
    beta = _beta_of(c4, beta)
    w, _ = profile.reduced()
    S = profile.reduced_operator()
    c4r = _reduced_c4(profile, c4)
    shape = z.shape
    m, mp = spectral_data(profile, z.ravel())
    n, npr = spectral_data(profile, zeta.ravel())
    out = _kernel_from_data(S, w, c4r, beta, m, mp, n, npr).reshape(shape)
    return out if out.ndim else complex(out)


def flat_kernel_scalar(z, zeta, beta: int = 1):
    """Flat-profile gaussian kernel (2/beta) m'm~'/(1 - m m~)^2 + (1 - 2/beta) m'm~'."""
    m, n = dyson.m_semicircle(np.asarray(z)), dyson.m_semicircle(np.asarray(zeta))
    mp, npr = m**2 / (1 - m**2), n**2 / (1 - n**2)
    return (2.0 / beta) * mp * npr / (1 - m * n) ** 2 + (1.0 - 2.0 / beta) * mp * npr


# ---------------------------------------------------------------------------
# variance
# ---------------------------------------------------------------------------

@dataclass
class FiniteNOptions:
    eta_cut_rel: float = 1e-3  # eta_cut = eta_cut_rel * eta0
    nodes_x: int = 8  # Gauss-Legendre nodes per x panel
    nodes_eta: int = 6  # Gauss-Legendre nodes per eta panel
    eta_ratio: float = 4.0  # geometric growth of eta panels below c1/2
    low_eta_rel: float = 1.0 / 16.0  # below low_eta_rel * eta0 the weight is O(eta^2)
    low_eta_ratio: float = 10.0
    low_nodes_eta: int = 4
    x_res: float = 2.0  # x panel width relative to the panel's lowest height
    h_min_rel: float = 0.25  # smallest x panel width relative to eta0
    x_panels_min: int = 1
    max_evaluations: int = 4_000_000
    block: int = 512
    error_estimate: bool = True


@dataclass
class FiniteVarianceResult:
    value: float
    error_estimate: float
    evaluations: int
    grid_points: int
    eta_cut: float

    def __float__(self) -> float:
        return self.value

    def to_json(self) -> dict:
        return asdict(self)


def _gl(n):
    return np.polynomial.legendre.leggauss(n)


def _product_weights(stf: ScaledTestFunction, br, n: int, fine: int = 16, sub: int = 64):
    """Nodes and product-integration weights on the x panels with breakpoints br.

    Returns x nodes and weights om[j] = int f^(j)(x) l_k(x) dx for j = 0, 1, 2,
    where l_k is the Lagrange basis of the panel's Gauss-Legendre nodes.  The
    kernel is then only required to be polynomial-like on a panel; the sharp
    features of f'' are integrated by a fine composite rule.
    """
    t, wt = _gl(n)
    tf, wf = _gl(fine)
    xa, xb = br[0], br[-1]
    coeff = (np.arange(n) + 0.5)[None, :] * np.polynomial.legendre.legvander(t, n - 1)
    xs, om = [], [[], [], []]
    for lo, hi in zip(br[:-1], br[1:]):
        k = max(1, math.ceil(sub * (hi - lo) / (xb - xa)))
        sb = np.linspace(lo, hi, k + 1)
        h = np.diff(sb)
        xf = (0.5 * (sb[:-1] + sb[1:])[:, None] + 0.5 * h[:, None] * tf[None, :]).ravel()
        wfx = (0.5 * h[:, None] * wf[None, :]).ravel()
        tt = (2.0 * xf - lo - hi) / (hi - lo)
        # l_k(t) = w_k sum_j (j + 1/2) P_j(t_k) P_j(t)
        ell = wt[:, None] * (coeff @ np.polynomial.legendre.legvander(tt, n - 1).T)
        xs.append(0.5 * (lo + hi) + 0.5 * (hi - lo) * t)
        for j, fj in enumerate((stf.f, stf.f1, stf.f2)):
            om[j].append(ell @ (wfx * fj(xf)))
    return np.concatenate(xs), [np.concatenate(o) for o in om]


def _eta_panels(stf: ScaledTestFunction, eta_cut: float, o: FiniteNOptions):
    """(lo, hi, nodes, log-spaced) panels covering [eta_cut, c1]."""
    c1, eta0 = stf.c1, stf.eta0
    if not c1 / 2 > eta_cut:
        raise DomainError("c1/2 must exceed eta_cut")
    panels = []
    lo = eta_cut
    low_top = min(o.low_eta_rel * eta0, c1 / 2)
    while lo < low_top * (1 - 1e-12):
        hi = min(lo * o.low_eta_ratio, low_top)
        panels.append((lo, hi, o.low_nodes_eta, True))
        lo = hi
    while lo < c1 / 2 * (1 - 1e-12):
        hi = lo * o.eta_ratio
        if hi > c1 / 2 or c1 / 2 - hi < 0.25 * (hi - lo):
            hi = c1 / 2
        panels.append((lo, hi, None, True))
        lo = hi
    panels += [(c1 / 2, 0.75 * c1, None, False), (0.75 * c1, c1, None, False)]
    return panels


def _contour_grid(stf: ScaledTestFunction, eta_cut: float, o: FiniteNOptions,
                  nodes_x: int, nodes_eta: int, drop: int = 0):
    """Upper-half-plane nodes z and combined weights dbar f~ dx deta."""
    xa, xb = stf.support
    width = xb - xa
    zs, ds = [], []
    cache = {}
    for lo, hi, ne, logsp in _eta_panels(stf, eta_cut, o):
        ne = nodes_eta if ne is None else max(ne - drop, 2)
        te, we = _gl(ne)
        if logsp:
            a, b = math.log(lo), math.log(hi)
            eta = np.exp(0.5 * (a + b) + 0.5 * (b - a) * te)
            weta = 0.5 * (b - a) * we * eta
        else:
            eta = 0.5 * (lo + hi) + 0.5 * (hi - lo) * te
            weta = 0.5 * (hi - lo) * we
        n_pan = max(o.x_panels_min, min(math.ceil(width / (o.x_res * lo)),
                                        math.ceil(width / (o.h_min_rel * stf.eta0))))
        if n_pan not in cache:
            cache[n_pan] = _product_weights(stf, np.linspace(xa, xb, n_pan + 1), nodes_x)
        xs, (w0, w1, w2) = cache[n_pan]
        c, dc = chi(eta, stf.c1, stf.chi)
        D = 0.5j * (eta[:, None] * c[:, None] * w2[None, :]
                    + dc[:, None] * (w0[None, :] + 1j * eta[:, None] * w1[None, :]))
        zs.append((xs[None, :] + 1j * eta[:, None]).ravel())
        ds.append((D * weta[:, None]).ravel())
    z = np.concatenate(zs)
    D = np.concatenate(ds)
    keep = D != 0
    return z[keep], D[keep]


def _contour_sum(S, w, c4r, beta, z, D, m, mp, block):
    """2 Re sum over upper/upper and upper/lower pairs, using pair symmetry."""
    P = len(z)
    starts = list(range(0, P, block))
    total_uu, total_ul = [], []
    evals = 0
    for i, s0 in enumerate(starts):
        I = slice(s0, min(s0 + block, P))
        for s1 in starts[i:]:
            J = slice(s1, min(s1 + block, P))
            fac = 1.0 if s1 == s0 else 2.0
            a = (m[I][:, None, :], mp[I][:, None, :])
            Kuu = _kernel_from_data(S, w, c4r, beta, *a, m[J][None], mp[J][None])
            Kul = _kernel_from_data(S, w, c4r, beta, *a, np.conj(m[J])[None],
                                    np.conj(mp[J])[None])
            total_uu.append(fac * (D[I] @ Kuu @ D[J]).real)
            total_ul.append(fac * (D[I] @ Kul @ np.conj(D[J])).real)
            evals += 2 * Kuu.size
    value = 2.0 * (math.fsum(total_uu) + math.fsum(total_ul)) / math.pi**2
    return value, evals


def _in_window(profile, eta0, eps0=0.05):
    N = profile.N
    if not N ** -1.0 <= eta0 <= N ** -eps0:
        warnings.warn(f"eta0={eta0:.3e} outside the mesoscopic window for N={N}")


def finite_variance(profile: VarianceProfile, stf: ScaledTestFunction, c4=None,
                    quad_opts: FiniteNOptions | None = None, beta: int = 1,
                    tol: float | None = None) -> FiniteVarianceResult:
    """V(f) by tensor Gauss-Legendre quadrature over the contour domain.

    The error estimate is the change against a grid with two fewer nodes per
    panel in every direction.  With tol set, a larger estimate raises
    PrecisionError carrying the value.
    """
    o = quad_opts or FiniteNOptions()
    beta = _beta_of(c4, beta)
    if stf.g.is_zero:
        return FiniteVarianceResult(0.0, 0.0, 0, 0, o.eta_cut_rel * stf.eta0)
    _in_window(profile, stf.eta0)
    eta_cut = o.eta_cut_rel * stf.eta0
    S = profile.reduced_operator()
    w, _ = profile.reduced()
    c4r = _reduced_c4(profile, c4)
    grids = [(o.nodes_x, o.nodes_eta)]
    if o.error_estimate:
        grids.append((max(o.nodes_x - 2, 2), max(o.nodes_eta - 2, 2)))
    planned = []
    for nx, ne in grids:
        z, D = _contour_grid(stf, eta_cut, o, nx, ne, drop=o.nodes_eta - ne)
        planned.append((z, D))
    n_eval = sum(len(z) ** 2 + len(z) for z, _ in planned)
    if n_eval > o.max_evaluations:
        raise PrecisionError(f"contour grid needs {n_eval} kernel evaluations, above the "
                             f"cap {o.max_evaluations}")
    values, evals = [], 0
    for z, D in planned:
        m, mp = spectral_data(profile, z)
        v, e = _contour_sum(S, w, c4r, beta, z, D, m, mp, o.block)
        values.append(v)
        evals += e
    err = abs(values[0] - values[1]) if len(values) > 1 else float("nan")
    res = FiniteVarianceResult(values[0], err, evals, len(planned[0][0]), eta_cut)
    if tol is not None and not err <= tol:
        raise PrecisionError(f"finite-N variance error {err:.3e} above {tol:.3e}",
                             value=res.value, error=err)
    return res


# ---------------------------------------------------------------------------
# real-axis cross-check
# ---------------------------------------------------------------------------

def _log_potential(S, w, c4r, beta, m, n):
    """L with d_z d_zeta L = K (the kernel's two-point potential)."""
    X = m * n
    K = S.shape[0]
    A = np.eye(K) - S * X[..., None, :]
    ld = np.log(np.abs(np.linalg.det(A)))
    out = -(2.0 / beta) * ld + (1.0 - 2.0 / beta) * np.sum(np.diag(S) * X, axis=-1).real
    if np.any(c4r != 0):
        out = out + 0.5 * np.einsum("...a,ab,...b->...", X, c4r * np.outer(w, w), X).real
    return out


def real_axis_variance(profile: VarianceProfile, stf: ScaledTestFunction, c4=None,
                       beta: int = 1, tol: float = 1e-6,
                       boundary=None) -> float:
    """Independent route: after two integrations by parts to the real axis,

        V(f) = -(1/(2 pi^2)) int int f'(x) f'(y) [Re L(x+i0, y+i0) - Re L(x+i0, y-i0)],

    with the logarithmic diagonal singularity made a boundary singularity by
    the coordinates d = u - v, s = u + v (u, v scaled).  boundary(E) -> m(E + i0)
    defaults to the continuation solver.
    """
    beta = _beta_of(c4, beta)
    S = profile.reduced_operator()
    w, _ = profile.reduced()
    c4r = _reduced_c4(profile, c4)
    a, b = stf.g.support
    c, R = 0.5 * (a + b), 0.5 * (b - a)
    if boundary is None:
        boundary = lambda E: dyson.boundary_many(profile, E)[0]

    def integrand(d, t):
        span = 2.0 * R - d
        s = 2.0 * c + span * t
        u, v = 0.5 * (s + d), 0.5 * (s - d)
        x, y = stf.E0 + stf.eta0 * u, stf.E0 + stf.eta0 * v
        mx, my = boundary(x), boundary(y)
        L0 = (_log_potential(S, w, c4r, beta, mx, my)
              - _log_potential(S, w, c4r, beta, mx, np.conj(my)))
        return stf.g.eval_d1(u) * stf.g.eval_d1(v) * L0 * 0.5 * span

    breaks_d = np.array([0.0, 1e-3, 1e-2, 0.1, 0.5, 1.0, 2.0]) * R
    boxes = [(d0, d1, t0, t1) for d0, d1 in zip(breaks_d[:-1], breaks_d[1:])
             for t0, t1 in ((-1.0, 0.0), (0.0, 1.0))]
    r = adaptive_2d(integrand, boxes, QuadOptions(tol=tol, max_panels=200_000))
    # the region d < 0 mirrors d > 0
    return -2.0 * r.value / (2.0 * math.pi**2)
