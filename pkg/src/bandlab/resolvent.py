"""Generalized resolvents, minors and the exact identities they satisfy."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .ensemble import BandSample
from .lattice import PointLike, as_index, as_indices
from .selfconsistent import SpectralParams, msc, solve_M

DIAG_FLOOR = 1e-14


class ResolventError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Resolvent:
    """``G^{(T)} = (H^{[T]} - Z^{[T]})^{-1}`` embedded with zero rows/columns on ``T``."""

    G: np.ndarray = field(repr=False)
    params: SpectralParams
    minor_set: frozenset
    source: BandSample = field(repr=False)

    @property
    def size(self) -> int:
        return self.G.shape[0]

    @property
    def kept(self) -> np.ndarray:
        mask = np.ones(self.size, dtype=bool)
        mask[list(self.minor_set)] = False
        return np.flatnonzero(mask)


def _system(smp: BandSample, params: SpectralParams) -> np.ndarray:
    return smp.H - np.diag(params.zvec)


def resolvent(smp: BandSample, params: SpectralParams, defect_tol: float = 1e-8) -> Resolvent:
    A = _system(smp, params)
    G = np.linalg.solve(A, np.eye(smp.size, dtype=complex))
    defect = np.abs(A @ G - np.eye(smp.size)).max()
    if not defect <= defect_tol:
        raise ResolventError(f"linear solve defect {defect:.3e} exceeds {defect_tol:.0e}")
    # exact symmetry of (H - Z)^{-1}; removes solver roundoff asymmetry
    G = (G + G.T) / 2
    G.setflags(write=False)
    return Resolvent(G, params, frozenset(), smp)


def resolvent_columns(smp: BandSample, params: SpectralParams, cols, defect_tol: float = 1e-8) -> np.ndarray:
    """Selected columns of ``G`` without forming the full inverse."""
    cols = np.atleast_1d(cols)
    A = _system(smp, params)
    rhs = np.zeros((smp.size, cols.size), dtype=complex)
    rhs[cols, np.arange(cols.size)] = 1.0
    X = np.linalg.solve(A, rhs)
    defect = np.abs(A @ X - rhs).max()
    if not defect <= defect_tol:
        raise ResolventError(f"linear solve defect {defect:.3e} exceeds {defect_tol:.0e}")
    return X


def minor(source: Resolvent | BandSample, T: Iterable[PointLike], params: SpectralParams | None = None) -> Resolvent:
    """Resolvent of the minor with rows/columns ``T`` removed, computed by a fresh solve.

    Applied to a :class:`Resolvent` that is itself a minor, the removed sets are
    united, which is the composition law ``(G^{(T)})^{(U)} = G^{(T u U)}``.
    """
    if isinstance(source, Resolvent):
        smp, params = source.source, source.params
        removed = set(source.minor_set)
    else:
        if params is None:
            raise ValueError("params are required when building a minor from a sample")
        smp, removed = source, set()
    removed |= set(as_indices(T, smp.shape))
    n = smp.size
    keep = np.setdiff1d(np.arange(n), sorted(removed))
    if keep.size == 0:
        raise ValueError("minor set covers the whole lattice")
    A = _system(smp, params)[np.ix_(keep, keep)]
    G = np.zeros((n, n), dtype=complex)
    inv = np.linalg.solve(A, np.eye(keep.size, dtype=complex))
    G[np.ix_(keep, keep)] = (inv + inv.T) / 2
    G.setflags(write=False)
    return Resolvent(G, params, frozenset(removed), smp)


@dataclass(frozen=True)
class IdentityResiduals:
    """Residuals of the four Schur-complement identities at ``(i, j, k)``.

    A residual is ``nan`` when a denominator falls below the diagonal floor;
    ``skipped`` lists those identities.
    """

    removal: float        # G_ij = G^(k)_ij + G_ik G_kj / G_kk
    inverse_diag: float   # 1/G_ii = 1/G^(k)_ii - G_ik G_ki / (G_ii G_kk G^(k)_ii)
    schur_diag: float     # 1/G_ii = A_ii - sum_{k,l != i} A_ik G^(i)_kl A_li
    offdiag: float        # G_ij = -G_ii sum_{k != i} A_ik G^(i)_kj, and the mirrored form
    scale: float
    skipped: tuple = ()

    def max(self) -> float:
        vals = [v for v in (self.removal, self.inverse_diag, self.schur_diag, self.offdiag) if not math.isnan(v)]
        return max(vals) if vals else 0.0


def identity_residuals(smp: BandSample, params: SpectralParams, i: PointLike, j: PointLike, k: PointLike,
                       G: Resolvent | None = None) -> IdentityResiduals:
    shape = smp.shape
    i, j, k = (as_index(v, shape) for v in (i, j, k))
    if len({i, j, k}) < 3:
        raise ValueError("identity check needs distinct i, j, k")
    full = G if G is not None else resolvent(smp, params)
    G = full.G
    A = _system(smp, params)
    Gk = minor(full, [k]).G
    Gi = minor(full, [i]).G
    Gj = minor(full, [j]).G
    skipped = []

    def small(*vals):
        return min(abs(v) for v in vals) < DIAG_FLOOR

    if small(G[k, k]):
        removal = math.nan
        skipped.append("removal")
    else:
        removal = abs(G[i, j] - Gk[i, j] - G[i, k] * G[k, j] / G[k, k])

    if small(G[i, i], G[k, k], Gk[i, i]):
        inverse_diag = math.nan
        skipped.append("inverse_diag")
    else:
        inverse_diag = abs(1 / G[i, i] - 1 / Gk[i, i] + G[i, k] * G[k, i] / (G[i, i] * G[k, k] * Gk[i, i]))

    if small(G[i, i]):
        schur_diag = math.nan
        skipped.append("schur_diag")
    else:
        schur_diag = abs(1 / G[i, i] - A[i, i] + A[i, :] @ Gi @ A[:, i])

    left = G[i, j] + G[i, i] * (A[i, :] @ Gi[:, j])
    right = G[i, j] + G[j, j] * (Gj[i, :] @ A[:, j])
    offdiag = max(abs(left), abs(right))

    scale = max(1.0, float(np.abs(G).max()) ** 2)
    return IdentityResiduals(float(removal), float(inverse_diag), float(schur_diag), float(offdiag),
                             scale, tuple(skipped))


@dataclass(frozen=True)
class WardResidual:
    scalar: float
    generalized: float


def ward_residual(res: Resolvent, y: PointLike) -> WardResidual:
    """Residuals of ``sum_x |G_xy|^2 = Im G_yy / eta`` and of its diagonal-Z form.

    The generalized form ``sum_x Im(z_x) |G_xy|^2 = Im G_yy`` follows from
    ``G - G^* = 2i G Im(Z) G^*``; the scalar form is exact only for constant ``z_x``.
    """
    y = as_index(y, res.source.shape)
    col = np.abs(res.G[:, y]) ** 2
    im_gyy = res.G[y, y].imag
    scalar = abs(col.sum() - im_gyy / res.params.eta)
    generalized = abs((res.params.zvec.imag * col).sum() - im_gyy)
    return WardResidual(float(scalar), float(generalized))


def triple_norm(res: Resolvent) -> float:
    """``max_y (sum_x |G_xy|^2 + |G_yx|^2)^{1/2}``."""
    A = np.abs(res.G) ** 2
    return float(math.sqrt((A.sum(axis=0) + A.sum(axis=1)).max()))


@dataclass(frozen=True, eq=False)
class PsiField:
    psi: np.ndarray = field(repr=False)
    tau: float
    radius: int
    minor_set: frozenset


def psi_field(res: Resolvent, tau: float = 0.1, W: int | None = None) -> PsiField:
    """Local L^2 averages ``Psi_xy^2 = s_xy + W^{-2d} sum_{x', y'} (|G_x'y'|^2 + |G_y'x'|^2)``.

    Both window sums range over the l-infinity ball of radius ``floor(N^tau W)``.
    """
    smp = res.source
    shape = smp.shape
    W = smp.profile.W if W is None else W
    radius = int(math.floor(shape.N ** tau * W))
    if radius > shape.N / 2:
        raise ValueError(f"window radius {radius} exceeds half the torus side {shape.N / 2}")
    K = (shape.distances <= radius).astype(float)
    A = np.abs(res.G) ** 2
    A = A + A.T
    window = K @ A @ K
    psi2 = smp.profile.matrix + window / W ** (2 * shape.d)
    return PsiField(np.sqrt(psi2), tau, radius, res.minor_set)


def _minor_block(G: np.ndarray, x: int, idx: np.ndarray) -> np.ndarray:
    # G^(x) restricted to idx (x not in idx), from the removal identity
    return G[np.ix_(idx, idx)] - np.outer(G[idx, x], G[x, idx]) / G[x, x]


@dataclass(frozen=True, eq=False)
class ZcalResult:
    Z: np.ndarray = field(repr=False)
    M: np.ndarray = field(repr=False)
    defect: float
    defects: np.ndarray = field(repr=False)


def zcal_variables(smp: BandSample, params: SpectralParams, M: np.ndarray | None = None,
                   res: Resolvent | None = None, method: str = "schur") -> ZcalResult:
    """``Z_x = -H_xx + sum_{w,v != x} H_xw H_xv G^(x)_wv - sum_{w != x} s_xw G^(x)_ww``.

    ``method="schur"`` obtains the needed block of ``G^(x)`` from the full
    resolvent through the removal identity; ``method="resolve"`` inverts each
    minor from scratch and is only meant for small cross-checks.
    """
    if M is None:
        M = solve_M(smp.profile, params).M
    if res is None:
        res = resolvent(smp, params)
    G = res.G
    H = smp.H
    S = smp.profile.matrix
    n = smp.size
    Z = np.empty(n, dtype=complex)
    for x in range(n):
        nb = np.flatnonzero(S[x] > 0)
        nb = nb[nb != x]
        if method == "schur":
            Gx = _minor_block(G, x, nb)
        elif method == "resolve":
            Gx = minor(res, [x]).G[np.ix_(nb, nb)]
        else:
            raise ValueError(f"unknown method {method!r}")
        h = H[x, nb]
        Z[x] = -H[x, x] + h @ Gx @ h - S[x, nb] @ np.diag(Gx)
    defects = np.abs(np.diag(G) - M - M ** 2 * Z)
    return ZcalResult(Z, M, float(defects.max()), defects)


@dataclass(frozen=True)
class ControlParams:
    """Control pair ``(Phi, Gamma)`` plus the domination exponent ``tau``."""

    Phi: float
    Gamma: float
    tau: float = 0.2
    mode: str = "theoretical"

    def __post_init__(self) -> None:
        if not self.Phi >= 0:
            raise ValueError("Phi must be nonnegative")
        if self.mode == "theoretical" and self.Gamma < 1:
            raise ValueError("Gamma must be at least 1")
        if self.mode not in ("theoretical", "empirical"):
            raise ValueError(f"unknown mode {self.mode!r}")

    def admissible(self, N: int, W: int, d: int, delta: float) -> bool:
        """Whether ``W^{-d/2} <= Phi <= N^{-delta}`` and ``Gamma >= 1``."""
        return W ** (-d / 2) <= self.Phi <= N ** -delta and self.Gamma >= 1


def theoretical_controls(W: int, d: int, eta: float, tau: float = 0.2) -> ControlParams:
    """``Phi = (W^d eta)^{-1/2}``, ``Gamma^2 = 1/eta``."""
    return ControlParams((W ** d * eta) ** -0.5, eta ** -0.5, tau, "theoretical")


def empirical_controls(res: Resolvent, M, tau: float = 0.2) -> ControlParams:
    """``Phi = max |G_xy - delta_xy M_x|`` and ``Gamma`` the triple norm of ``G``."""
    M = np.broadcast_to(np.asarray(M, dtype=complex), (res.size,))
    phi = float(np.abs(res.G - np.diag(M)).max())
    return ControlParams(phi, triple_norm(res), tau, "empirical")


def deviation_max(res: Resolvent, M) -> float:
    """``||G - M||_max`` with ``M`` diagonal."""
    M = np.broadcast_to(np.asarray(M, dtype=complex), (res.size,))
    return float(np.abs(res.G - np.diag(M)).max())


def reference_m(params: SpectralParams) -> complex:
    return msc(params.z)
