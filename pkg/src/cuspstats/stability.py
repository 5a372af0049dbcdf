"""Stability operator B(z, zeta) = 1 - m(z) m(zeta) S, its isolated eigenvalue and
the saturated self-energy operator F = |m| S |m| with its Perron data.

Inner products are the normalized ones, <x, y> = sum_a w_a conj(x_a) y_a in
block-reduced form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .dyson import SpectralPoint, solve_vde, solve_boundary
from .errors import AmbiguousBranchError, DomainError, PrecisionError
from .profile import VarianceProfile

ISOLATION_EPS = 0.25


def inner(w, x, y):
    return complex(np.sum(w * np.conj(x) * y))


@dataclass
class PerronData:
    F_norm: float
    v: np.ndarray
    spectral_gap: float
    f: np.ndarray
    p: np.ndarray
    eigenvalues: np.ndarray
    eigvecs_sym: np.ndarray  # orthonormal eigenvectors of W^1/2 F W^-1/2
    weights: np.ndarray
    abs_m: np.ndarray


def _sym_F(profile: VarianceProfile, m: np.ndarray):
    w, V = profile.reduced()
    a = np.sqrt(w) * np.abs(m)
    return a[:, None] * V * a[None, :], w


def perron_data(profile: VarianceProfile, point: SpectralPoint) -> PerronData:
    """Perron eigenpair of F(z), the vector f and the sign vector p at a point."""
    m = point.m
    Fs, w = _sym_F(profile, m)
    lam, U = np.linalg.eigh(Fs)
    u = U[:, -1]
    u = u * np.sign(u.sum())
    v = u / np.sqrt(w)
    if np.any(v <= 0):
        raise DomainError("Perron vector is not positive")
    F_norm = float(lam[-1])
    rest = np.abs(lam[:-1]) / F_norm if len(lam) > 1 else np.array([0.0])
    gap = float(1.0 - rest.max())
    absm = np.abs(m)
    rho = point.rho
    eta = abs(np.imag(point.z))
    if eta > 0 and rho > 0:
        f = (m.imag / rho) / absm
    else:
        # on the real axis F f = f exactly and <|m| f> = pi
        denom = float(np.sum(w * absm * v))
        if denom <= 0:
            raise DomainError("singular F: degenerate Perron direction")
        f = np.pi * v / denom
    p = np.sign(m.real)
    p[p == 0] = 1.0
    return PerronData(F_norm, v, gap, f, p, lam, U, w, absm)


def sigma_psi(profile: VarianceProfile, point: SpectralPoint,
              perron: PerronData | None = None, max_cond: float = 1e12):
    """sigma = <p f^2, f> and psi = <p f^2, (1+F)/(1-F)(1-vv*)[p f^2]>."""
    pd = perron if perron is not None else perron_data(profile, point)
    w = pd.weights
    x = pd.p * pd.f**2
    sigma = float(np.sum(w * x * pd.f))
    lam = pd.eigenvalues
    U = pd.eigvecs_sym
    coef = U.T @ (np.sqrt(w) * x)
    if len(lam) == 1:
        return sigma, 0.0
    lam_rest = lam[:-1]
    gap = 1.0 - lam_rest
    if np.min(gap) * max_cond < 1.0:
        raise PrecisionError("restricted (1-F) system is ill-conditioned")
    psi = float(np.sum((1.0 + lam_rest) / gap * coef[:-1] ** 2))
    return sigma, psi


def delta_hat(sigma: float, psi: float) -> float:
    if psi <= 0:
        return np.inf
    return 4.0 * abs(sigma) ** 3 / (27.0 * np.pi * psi**2)


@dataclass
class StabilityData:
    z: complex
    zeta: complex
    beta: complex
    b_right: np.ndarray
    b_left: np.ndarray
    overlap: float
    eigenvalues: np.ndarray
    right_vectors: np.ndarray
    left_vectors: np.ndarray
    index: int
    weights: np.ndarray
    matrix: np.ndarray
    has_spectator: bool

    def projector(self) -> np.ndarray:
        """Matrix of the rank-one spectral projector onto the selected eigenvalue."""
        r = self.right_vectors[:, self.index]
        l = self.left_vectors[:, self.index]
        w = self.weights
        return np.outer(r, np.conj(l) * w) / inner(w, l, r)

    def apply_projector(self, x):
        r = self.right_vectors[:, self.index]
        l = self.left_vectors[:, self.index]
        w = self.weights
        return r * inner(w, l, x) / inner(w, l, r)

    def apply_projector_adjoint(self, y):
        r = self.right_vectors[:, self.index]
        l = self.left_vectors[:, self.index]
        w = self.weights
        return l * inner(w, r, y) / np.conj(inner(w, l, r))


def stability_matrix(profile: VarianceProfile, m_z, m_zeta) -> np.ndarray:
    S = profile.reduced_operator()
    return np.eye(len(m_z)) - (m_z * m_zeta)[:, None] * S


def build_stability(profile: VarianceProfile, point_z: SpectralPoint,
                    point_zeta: SpectralPoint, eps: float = ISOLATION_EPS,
                    check_branch: bool = True) -> StabilityData:
    """Isolated eigenvalue beta(z, zeta) of B(z, zeta) with eigenvectors b, b^l."""
    w, _ = profile.reduced()
    B = stability_matrix(profile, point_z.m, point_zeta.m)
    lam, vl, vr = sla.eig(B, left=True, right=True)
    # left eigenvectors in the weighted product: <l, B x> = lam <l, x>
    left = vl / w[:, None]
    pd = perron_data(profile, point_z)
    d = pd.abs_m * pd.v
    ov = np.array([abs(inner(w, d, vr[:, i])) /
                   (np.sqrt(inner(w, d, d).real * inner(w, vr[:, i], vr[:, i]).real))
                   for i in range(len(lam))])
    k = int(np.argmax(ov))
    beta = complex(lam[k])
    spectator = profile.N > len(w)
    if check_branch:
        all_eigs = np.append(lam, 1.0) if spectator else lam
        kmin = int(np.argmin(np.abs(all_eigs)))
        if abs(beta) < eps and abs(all_eigs[kmin] - beta) > 1e-12 * (1 + abs(beta)):
            raise AmbiguousBranchError(
                f"overlap-selected eigenvalue {beta} differs from minimal-modulus "
                f"eigenvalue {all_eigs[kmin]}")
    data = StabilityData(point_z.z, point_zeta.z, beta, None, None, float(ov[k]),
                         lam, vr, left, k, w, B, spectator)
    fv = float(np.sum(w * pd.v * pd.f))
    data.b_right = data.apply_projector(pd.abs_m * pd.v) * fv
    data.b_left = data.apply_projector_adjoint(pd.v / pd.abs_m) * fv
    return data


def m_prime(profile: VarianceProfile, point: SpectralPoint) -> np.ndarray:
    """m'(z) = B(z,z)^{-1}[m^2]."""
    B = stability_matrix(profile, point.m, point.m)
    return np.linalg.solve(B, point.m**2)


def xi(profile: VarianceProfile, base: SpectralPoint, target: SpectralPoint,
       stab: StabilityData | None = None) -> complex:
    """Coefficient of m(target) - m(base) along the unstable direction b."""
    st = stab if stab is not None else build_stability(profile, base, base, check_branch=False)
    w = st.weights
    den = inner(w, st.b_left, st.b_right)
    if abs(den) < 1e-12:
        raise DomainError("degenerate normalization <b_l, b>")
    return inner(w, st.b_left, target.m - base.m) / den


def r_vector(profile: VarianceProfile, base: SpectralPoint,
             stab: StabilityData | None = None) -> np.ndarray:
    """r = (1 - beta) Q B^{-1} [b^2 / m] with Q = 1 - Pi (computed in the eigenbasis)."""
    st = stab if stab is not None else build_stability(profile, base, base, check_branch=False)
    w = st.weights
    y = (1.0 - st.beta) * st.b_right**2 / base.m
    out = np.zeros_like(y, dtype=complex)
    for i, lam in enumerate(st.eigenvalues):
        if i == st.index:
            continue
        r = st.right_vectors[:, i]
        l = st.left_vectors[:, i]
        out += r * inner(w, l, y) / (inner(w, l, r) * lam)
    return out


def point_at(profile: VarianceProfile, z: complex, tol: float = 1e-12) -> SpectralPoint:
    """Solve at z, using boundary values when z is real."""
    z = complex(z)
    if z.imag == 0:
        return solve_boundary(profile, z.real, tol=tol)
    return solve_vde(profile, z, tol=tol)


def mean_f2(pd: PerronData) -> float:
    return float(np.sum(pd.weights * pd.f**2))


def verify_cubic(profile: VarianceProfile, base: SpectralPoint, target: SpectralPoint):
    """Residual of psi xi^3 + sigma xi^2 + (zeta - z) pi at a singular base point."""
    pd = perron_data(profile, base)
    sigma, psi = sigma_psi(profile, base, pd)
    x = xi(profile, base, target)
    dz = complex(target.z) - complex(base.z)
    res = psi * x**3 + sigma * x**2 + dz * np.pi
    return {"residual": complex(res), "abs_residual": abs(res), "xi": complex(x),
            "sigma": sigma, "psi": psi, "w": dz, "rho": base.rho,
            "error_scale": (base.rho + abs(x)) * abs(dz)}


def beta_expansion_check(profile: VarianceProfile, E0: float, z: complex, zeta: complex):
    """Compare beta(z, zeta) with its cubic expansion around the singular point E0."""
    base = solve_boundary(profile, E0)
    pd = perron_data(profile, base)
    sigma, psi = sigma_psi(profile, base, pd)
    f2 = mean_f2(pd)
    pz, pzeta = point_at(profile, z), point_at(profile, zeta)
    st0 = build_stability(profile, base, base, check_branch=False)
    x = xi(profile, base, pz, st0)
    xt = xi(profile, base, pzeta, st0)
    stab = build_stability(profile, pz, pzeta, check_branch=False)
    beta = stab.beta
    expansion = (-(sigma / f2) * (x + xt) - (psi / f2) * (x * x + x * xt + xt * xt)
                 - (sigma**2 / f2**2) * x * xt)
    out = {"beta": complex(beta), "expansion_value": complex(expansion),
           "rel_error": abs(beta - expansion) / max(abs(beta), 1e-300),
           "xi": complex(x), "xi_tilde": complex(xt), "sigma": sigma, "psi": psi}
    if complex(z) != complex(zeta):
        st_z = build_stability(profile, pz, pz, check_branch=False)
        xzz = xi(profile, pz, pzeta, st_z)
        alt = np.pi * (complex(zeta) - complex(z)) / (f2 * xzz)
        out["alternative_value"] = complex(alt)
        out["alternative_rel_error"] = abs(beta - alt) / max(abs(beta), 1e-300)
    return out


def beta_conjugate_check(profile: VarianceProfile, z: complex, zeta: complex):
    """beta(conj z, zeta) against pi (zeta - conj z) / (<f^2>(xi(z, zeta) + 2 i rho(z)))."""
    pz = point_at(profile, z)
    pzb = point_at(profile, np.conj(complex(z)))
    pzeta = point_at(profile, zeta)
    pd = perron_data(profile, pz)
    f2 = mean_f2(pd)
    st = build_stability(profile, pzb, pzeta, check_branch=False)
    stz = build_stability(profile, pz, pz, check_branch=False)
    x = xi(profile, pz, pzeta, stz)
    pred = np.pi * (complex(zeta) - np.conj(complex(z))) / (f2 * (x + 2j * pz.rho))
    return {"beta": complex(st.beta), "expansion_value": complex(pred),
            "rel_error": abs(st.beta - pred) / abs(st.beta)}


def one_minus_F_identity(profile: VarianceProfile, point: SpectralPoint):
    """Both sides of 1 - ||F|| = eta <v,|m|> / <v, Im m/|m|>."""
    pd = perron_data(profile, point)
    w = pd.weights
    eta = abs(np.imag(point.z))
    rhs = eta * np.sum(w * pd.v * pd.abs_m) / np.sum(w * pd.v * np.abs(point.m.imag) / pd.abs_m)
    return 1.0 - pd.F_norm, float(rhs)
