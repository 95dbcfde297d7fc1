"""Semicircle transform, the vector self-consistent equation, and the Theta kernel."""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .ensemble import VarianceProfile
from .lattice import TorusShape


class ConvergenceError(RuntimeError):
    """Fixed-point iteration failed (usually: the perturbation hypothesis is violated)."""


class SingularKernelError(np.linalg.LinAlgError):
    pass


def msc(z):
    """Stieltjes transform of the semicircle law: the root of ``m^2 + z m + 1 = 0`` in C_+."""
    z = np.asarray(z, dtype=complex)
    if np.any(z.imag <= 0):
        raise ValueError("m(z) is defined for Im z > 0 only")
    r = np.sqrt(z * z - 4)
    a = (-z + r) / 2
    b = (-z - r) / 2
    m = np.where(a.imag > 0, a, b)
    return complex(m) if m.ndim == 0 else m


@dataclass(frozen=True, eq=False)
class SpectralParams:
    """Diagonal spectral parameter ``Z = diag(z_x)`` around a reference point ``z``."""

    shape: TorusShape
    z: complex
    zvec: np.ndarray = field(default=None, repr=False)
    kappa: float = 0.5
    C2: float = 10.0

    def __post_init__(self) -> None:
        z = complex(self.z)
        object.__setattr__(self, "z", z)
        if z.imag <= 0:
            raise ValueError("reference spectral parameter must have Im z > 0")
        if self.zvec is None:
            zv = np.full(self.shape.size, z, dtype=complex)
        else:
            zv = np.asarray(self.zvec, dtype=complex).copy()
            if zv.shape != (self.shape.size,):
                raise ValueError(f"zvec must have length {self.shape.size}")
        if zv.imag.min() <= 0:
            raise ValueError("every z_x must lie in the upper half plane")
        if self.shape.N > 1 and zv.imag.min() < self.shape.N ** -self.C2:
            raise ValueError(f"min Im z_x below N^-{self.C2}")
        zv.setflags(write=False)
        object.__setattr__(self, "zvec", zv)

    @property
    def eta(self) -> float:
        return self.z.imag

    @property
    def E(self) -> float:
        return self.z.real

    @property
    def is_scalar(self) -> bool:
        return bool(np.all(self.zvec == self.z))

    @property
    def in_bulk(self) -> bool:
        return abs(self.E) <= 2 - self.kappa

    @property
    def max_shift(self) -> float:
        return float(np.abs(self.zvec - self.z).max())


@dataclass(frozen=True)
class MSolution:
    M: np.ndarray
    residual: float
    iterations: int


def _sc_residual(M: np.ndarray, zvec: np.ndarray, profile: VarianceProfile) -> float:
    return float(np.abs(1.0 / M + zvec + profile.apply(M)).max())


def solve_M(profile: VarianceProfile, params: SpectralParams, tol: float = 1e-12,
            max_iter: int = 10_000, damping: float = 0.5, init: np.ndarray | None = None) -> MSolution:
    """Solve ``1/M_x = -z_x - (S M)_x`` by damped fixed-point iteration started at ``m(z)``."""
    m = msc(params.z)
    M = np.full(params.shape.size, m, dtype=complex) if init is None else np.array(init, dtype=complex)
    zv = params.zvec
    res = _sc_residual(M, zv, profile)
    it = 0
    while res > tol:
        if it >= max_iter:
            raise ConvergenceError(f"no convergence after {max_iter} iterations (residual {res:.3e})")
        M = (1 - damping) * M + damping / (-zv - profile.apply(M))
        if M.imag.min() <= 0:
            raise ConvergenceError("iterate left the upper half plane")
        it += 1
        res = _sc_residual(M, zv, profile)
    return MSolution(M, res, it)


@dataclass(frozen=True, eq=False)
class StabilityInverse:
    """``(1 - M^2 S)^{-1}`` with its operator norm and the near/far entry split."""

    matrix: np.ndarray = field(repr=False)
    linf_norm: float
    near_max: float
    far_max: float
    far_count: int
    cutoff: float


def stability_inverse(M, profile: VarianceProfile, cond_max: float = 1e12) -> StabilityInverse:
    shape = profile.shape
    n = shape.size
    M = np.broadcast_to(np.asarray(M, dtype=complex), (n,))
    A = np.eye(n) - (M ** 2)[:, None] * profile.matrix
    if np.linalg.cond(A) > cond_max:
        raise SingularKernelError("1 - M^2 S is numerically singular")
    inv = np.linalg.solve(A, np.eye(n, dtype=complex))
    return _stability_report(inv, profile)


def stability_inverse_fft(m: complex, profile: VarianceProfile) -> StabilityInverse:
    """Circulant path for scalar ``M = m`` and a periodic profile."""
    sym = 1.0 - m ** 2 * profile.symbol
    if np.abs(sym).min() < 1e-12:
        raise SingularKernelError("1 - m^2 S has a vanishing Fourier mode")
    row = np.fft.ifftn(1.0 / sym)
    return _stability_report(circulant(row, profile.shape), profile)


def _stability_report(inv: np.ndarray, profile: VarianceProfile) -> StabilityInverse:
    shape = profile.shape
    D = shape.distances
    dev = np.abs(inv - np.eye(shape.size))
    cutoff = math.log(shape.N) ** 2 * profile.W
    far = D > cutoff
    near_max = float(dev[~far].max())
    far_max = float(dev[far].max()) if far.any() else 0.0
    linf = float(np.abs(inv).sum(axis=1).max())
    return StabilityInverse(inv, linf, near_max, far_max, int(far.sum()), cutoff)


def circulant(row: np.ndarray, shape: TorusShape) -> np.ndarray:
    """Dense matrix ``A_xy = row[y - x]`` from a lattice-shaped translation-invariant row."""
    pts = shape.points
    disp = np.mod(pts[None, :, :] - pts[:, None, :], shape.N)
    weights = shape.N ** np.arange(shape.d - 1, -1, -1)
    return np.asarray(row).reshape(-1)[disp @ weights]


def theta_profile(profile: VarianceProfile, m: complex) -> np.ndarray:
    """Lattice-shaped row ``Theta_{0,u}`` of ``(1 - |m|^2 S)^{-1} S`` via the Fourier symbol."""
    a = abs(m) ** 2
    if a >= 1:
        raise ValueError("Theta requires |m| < 1")
    sym = profile.symbol
    return np.fft.ifftn(sym / (1.0 - a * sym)).real


def theta_kernel(profile: VarianceProfile, m: complex, mode: str = "fft") -> np.ndarray:
    """Dense ``Theta = (1 - |m|^2 S)^{-1} S``."""
    a = abs(m) ** 2
    if a >= 1:
        raise ValueError("Theta requires |m| < 1")
    if mode == "fft":
        return circulant(theta_profile(profile, m), profile.shape)
    if mode == "dense":
        S = profile.matrix
        return np.linalg.solve(np.eye(profile.shape.size) - a * S, S)
    raise ValueError(f"unknown mode {mode!r}")


def theta_bound(shape: TorusShape, W: int, eta: float, distance) -> np.ndarray:
    """``1/(N^d eta) + <r>^{2-d} / W^2`` with ``<r> = 1 + r``."""
    r = np.asarray(distance, dtype=float)
    return 1.0 / (shape.size * eta) + (1.0 + r) ** (2 - shape.d) / W ** 2


def theta_bound_constant(theta: np.ndarray, shape: TorusShape, W: int, eta: float) -> float:
    """Smallest ``C`` such that ``Theta_xy <= C * theta_bound`` holds for every entry."""
    if theta.shape == (shape.size, shape.size):
        bound = theta_bound(shape, W, eta, shape.distances)
    else:
        bound = theta_bound(shape, W, eta, shape.origin_distances)
    return float((theta / bound).max())
