"""The T-matrix, the exact T-equation, and diffusion-profile fits."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .ensemble import VarianceProfile
from .lattice import TorusShape, as_index
from .resolvent import Resolvent
from .selfconsistent import theta_bound


def t_matrix(res: Resolvent, profile: VarianceProfile | None = None) -> np.ndarray:
    """``T_xy = sum_w s_xw |G_wy|^2``."""
    if res.minor_set:
        raise ValueError("T is defined from the full resolvent")
    profile = res.source.profile if profile is None else profile
    # dense product keeps T exactly nonnegative (FFT roundoff does not)
    return profile.matrix @ (np.abs(res.G) ** 2)


def propagator(M, profile: VarianceProfile) -> np.ndarray:
    """``(1 - S|M|^2)^{-1} S`` by dense solve; ``(S|M|^2)_{xa} = s_xa |M_a|^2``."""
    n = profile.shape.size
    M = np.broadcast_to(np.asarray(M, dtype=complex), (n,))
    S = profile.matrix
    A = np.eye(n) - S * (np.abs(M) ** 2)[None, :]
    return np.linalg.solve(A, S)


def _fluct_terms(T: np.ndarray, res: Resolvent, M) -> np.ndarray:
    M = np.broadcast_to(np.asarray(M, dtype=complex), (res.size,))
    return np.abs(res.G) ** 2 - (np.abs(M) ** 2)[:, None] * T


def t_equation_residual(T: np.ndarray, res: Resolvent, M, profile: VarianceProfile | None = None,
                        K: np.ndarray | None = None) -> float:
    """``max |T - (1 - S|M|^2)^{-1} S (|G|^2 - |M|^2 T)|``; zero in exact arithmetic."""
    profile = res.source.profile if profile is None else profile
    K = propagator(M, profile) if K is None else K
    return float(np.abs(T - K @ _fluct_terms(T, res, M)).max())


def t_zero_matrix(T: np.ndarray, res: Resolvent, M, profile: VarianceProfile | None = None,
                  K: np.ndarray | None = None) -> np.ndarray:
    """``T0_xy = K_xy (|G_yy|^2 - |M_y|^2 T_yy)`` for every pair."""
    profile = res.source.profile if profile is None else profile
    K = propagator(M, profile) if K is None else K
    return K * np.diag(_fluct_terms(T, res, M))[None, :]


def t_zero_term(res: Resolvent, M, x, y, T: np.ndarray | None = None,
                profile: VarianceProfile | None = None) -> float:
    profile = res.source.profile if profile is None else profile
    T = t_matrix(res, profile) if T is None else T
    shape = res.source.shape
    x, y = as_index(x, shape), as_index(y, shape)
    K = propagator(M, profile)
    M = np.broadcast_to(np.asarray(M, dtype=complex), (res.size,))
    return float(K[x, y] * (abs(res.G[y, y]) ** 2 - abs(M[y]) ** 2 * T[y, y]))


def t_offdiag_sum(T: np.ndarray, res: Resolvent, M, profile: VarianceProfile | None = None,
                  K: np.ndarray | None = None) -> np.ndarray:
    """``sum_{a != y} K_xa (|G_ay|^2 - |M_a|^2 T_ay)`` for every ``(x, y)``."""
    profile = res.source.profile if profile is None else profile
    K = propagator(M, profile) if K is None else K
    F = _fluct_terms(T, res, M)
    np.fill_diagonal(F, 0.0)
    return K @ F


def t_zero_comparison(T0: np.ndarray, theta: np.ndarray, m: complex, phi: float, N: int,
                      tau: float = 0.2) -> float:
    """Fraction of pairs with ``|T0_xy - |m|^2 Theta_xy| <= N^tau Phi Theta_xy``."""
    ok = np.abs(T0 - abs(m) ** 2 * theta) <= N ** tau * phi * theta
    return float(ok.mean())


@dataclass(frozen=True, eq=False)
class ProfileFit:
    """Envelope of a kernel per exact distance class against the diffusion bound."""

    distances: np.ndarray = field(repr=False)
    envelope: np.ndarray = field(repr=False)
    bound: np.ndarray = field(repr=False)
    c1: float
    c2: float
    max_ratio: float

    def rows(self) -> list[dict]:
        return [{"distance": int(r), "envelope": float(e), "bound": float(b), "ratio": float(e / b)}
                for r, e, b in zip(self.distances, self.envelope, self.bound)]


def profile_bound_check(kernel, shape: TorusShape, W: int, eta: float, min_bins: int = 3) -> ProfileFit:
    """Fit ``C1/(N^d eta) + C2 <r>^{2-d}/W^2`` to the max-envelope of ``kernel``.

    ``kernel`` is one ``(n, n)`` matrix or a stack of them (averaged first).
    ``max_ratio`` compares the envelope against the bound with unit constants.
    """
    K = np.asarray(kernel, dtype=float)
    if K.ndim == 3:
        K = K.mean(axis=0)
    D = shape.distances
    radii = np.unique(D)
    if radii.size < min_bins:
        raise ValueError(f"only {radii.size} distance classes, need {min_bins}")
    env = np.array([K[D == r].max() for r in radii])
    a = np.full(radii.shape, 1.0 / (shape.size * eta))
    b = (1.0 + radii) ** (2 - shape.d) / W ** 2
    (c1, c2), _ = nnls(np.column_stack([a, b]), env)
    bound = theta_bound(shape, W, eta, radii)
    return ProfileFit(radii, env, bound, float(c1), float(c2), float((env / bound).max()))
