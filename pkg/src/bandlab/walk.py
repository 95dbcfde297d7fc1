"""Powers of a translation-invariant variance profile as torus random walks.

Covers the k-step distributions, the Gaussian (CLT) comparison and the
splitting of the geometric sum ``sum_k |m|^{2(k-1)} S^k`` into short, middle
and long walks.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .ensemble import VarianceProfile
from .lattice import TorusShape

NEG_TOL = 1e-10
TAU = 0.1
CONST_CAP = 100.0


class WalkNumericsError(ArithmeticError):
    """Fourier evaluation produced mass that is not a probability distribution."""


@dataclass(frozen=True, eq=False)
class WalkStep:
    """Symmetric step law on ``Z^d``: displacements ``offsets[i]`` with mass ``probs[i]``."""

    offsets: np.ndarray = field(repr=False)
    probs: np.ndarray = field(repr=False)
    L: int

    def __post_init__(self) -> None:
        off = np.asarray(self.offsets, dtype=np.int64)
        p = np.asarray(self.probs, dtype=float)
        if off.ndim != 2 or off.shape[0] != p.size:
            raise ValueError("offsets must be (k, d) with one mass per row")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("step masses must be nonnegative and sum to one")
        if np.abs(off).max() > self.L:
            raise ValueError("a displacement exceeds the step range L")
        table = {tuple(int(c) for c in u): q for u, q in zip(off, p)}
        if any(abs(table.get(tuple(-c for c in u), 0.0) - q) > 1e-15 for u, q in table.items()):
            raise ValueError("step law must be symmetric")
        object.__setattr__(self, "offsets", off)
        object.__setattr__(self, "probs", p)

    @property
    def d(self) -> int:
        return self.offsets.shape[1]

    @property
    def sigma(self) -> np.ndarray:
        """Covariance ``E[X_i X_j]`` of one step."""
        u = self.offsets.astype(float)
        return (u * self.probs[:, None]).T @ u

    def core_ok(self, c_star: float, C_star: float) -> bool:
        """``c L^{-d} 1{|u| <= cL} <= P(u) <= C L^{-d} 1{|u| <= L}`` at every ``u`` in the ``L``-box."""
        L, d = self.L, self.d
        table = {tuple(int(c) for c in u): q for u, q in zip(self.offsets, self.probs)}
        for u in itertools.product(range(-L, L + 1), repeat=d):
            r = max(abs(c) for c in u)
            p = table.get(u, 0.0)
            if p > C_star * L ** -d * (1 + 1e-12):
                return False
            if r <= c_star * L and p < c_star * L ** -d * (1 - 1e-12):
                return False
        return True

    def stencil(self, shape: TorusShape) -> np.ndarray:
        """Step law folded onto the torus, lattice-shaped in FFT layout."""
        if shape.d != self.d:
            raise ValueError("dimension mismatch between step and torus")
        if 2 * self.L + 1 > shape.N:
            raise ValueError("step range wraps around the torus")
        out = np.zeros(shape.dims)
        np.add.at(out, tuple(np.mod(self.offsets, shape.N).T), self.probs)
        return out


def uniform_step(W: int, d: int) -> WalkStep:
    """Uniform law on the box ``{|u|_inf <= W}``."""
    off = np.array(list(itertools.product(range(-W, W + 1), repeat=d)), dtype=np.int64)
    return WalkStep(off, np.full(len(off), 1.0 / len(off)), W)


def from_profile(profile: VarianceProfile) -> WalkStep:
    """Step law of a periodic variance profile whose rows sum to one."""
    if profile.kind != "periodic":
        raise ValueError("only translation-invariant profiles define a walk")
    shape = profile.shape
    flat = profile.stencil.reshape(-1)
    nz = np.flatnonzero(flat > 0)
    pts = shape.points[nz]
    return WalkStep(pts, flat[nz] / flat[nz].sum(), int(np.abs(pts).max()))


def _clean(p: np.ndarray) -> np.ndarray:
    neg = -p[p < 0].sum()
    if neg >= NEG_TOL:
        raise WalkNumericsError(f"negative mass {neg:.2e} after inverse transform")
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def s_power(step: WalkStep, k: int, shape: TorusShape) -> np.ndarray:
    """Law of the ``k``-step walk on the torus (lattice-shaped, FFT layout)."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    sym = np.fft.fftn(step.stencil(shape)).real
    return _clean(np.fft.ifftn(sym ** k).real)


def convolve(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Circular convolution of two lattice-shaped arrays."""
    return np.fft.ifftn(np.fft.fftn(p) * np.fft.fftn(q)).real


def gaussian_density(step: WalkStep, n: int, shape: TorusShape) -> np.ndarray:
    """Local CLT density ``(2 pi n)^{-d/2} det(Sigma)^{-1/2} exp(-x^T (n Sigma)^{-1} x / 2)``."""
    sig = step.sigma
    x = shape.points.astype(float)
    q = np.einsum("ij,jk,ik->i", x, np.linalg.inv(n * sig), x)
    g = (2 * math.pi * n) ** (-step.d / 2) / math.sqrt(np.linalg.det(sig)) * np.exp(-q / 2)
    return g.reshape(shape.dims)


@dataclass(frozen=True)
class CLTReport:
    n: int
    window: float
    max_abs_err: float
    center_rel_err: float
    peak: float
    wraparound: bool

    @property
    def rel_sup_err(self) -> float:
        return self.max_abs_err / self.peak


def clt_compare(step: WalkStep, n: int, shape: TorusShape) -> CLTReport:
    """Exact ``n``-step law against the local CLT density on ``|x| <= 3 (n tr(Sigma)/d)^{1/2}``."""
    if n < 1:
        raise ValueError("n must be positive")
    p = s_power(step, n, shape)
    g = gaussian_density(step, n, shape)
    window = 3 * math.sqrt(n * np.trace(step.sigma) / step.d)
    mask = shape.origin_distances <= window
    origin = (0,) * shape.d
    return CLTReport(n, window, float(np.abs(p - g)[mask].max()),
                     float(abs(p[origin] - g[origin]) / g[origin]), float(g[origin]),
                     bool(window >= shape.N / 2))


@dataclass(frozen=True, eq=False)
class RegimeFit:
    """Fitted constant of one block of walk lengths against its bound."""

    name: str
    ks: np.ndarray = field(repr=False)
    constant: float
    distances: np.ndarray = field(repr=False)
    envelope: np.ndarray = field(repr=False)
    bound: np.ndarray = field(repr=False)

    @property
    def ok(self) -> bool:
        return self.constant <= CONST_CAP


@dataclass(frozen=True, eq=False)
class TailSum:
    partial: np.ndarray = field(repr=False)
    direct: np.ndarray = field(repr=False)
    K: int
    remainder: float
    max_rel_err: float
    reproduces: bool
    regimes: tuple[RegimeFit, ...]

    def rows(self) -> list[dict]:
        out = []
        for r in self.regimes:
            for dd, e, b in zip(r.distances, r.envelope, r.bound):
                out.append({"regime": r.name, "distance": int(dd), "mass": float(e),
                            "bound": float(b), "ratio": float(e / b) if b > 0 else math.nan})
        return out


def _by_distance(arr: np.ndarray, dist: np.ndarray, radii: np.ndarray) -> np.ndarray:
    return np.array([arr[dist == r].max() for r in radii])


def theta_tail_sum(step: WalkStep, m: complex, eta: float, shape: TorusShape, K: int | None = None,
                   tau: float = TAU, W: float | None = None, atol: float = 1e-13) -> TailSum:
    """Truncated series ``sum_{k=1}^K |m|^{2(k-1)} S^k`` from the origin, with ``K = ceil(1/eta)``.

    Each Fourier mode carries a finite geometric sum.  The result is checked
    against ``(1 - |m|^2 S)^{-1} S`` up to ``|m|^{2K}/(1 - |m|^2)``, and the
    per-step terms are split at ``N^tau`` and ``N^{2-tau}/W^2``:

    * short walks, summed: ``C N^{(d-2) tau} <r>^{2-d} / W^2``;
    * middle walks, each ``k``: ``C (2 pi k)^{-d/2} det(Sigma)^{-1/2} exp(-x^T (k Sigma)^{-1} x / 8)``;
    * long walks, each ``k``: ``C k N^{-d + d tau / 2}``.

    A regime's constant is the largest fitted ``C`` over its blocks.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    a = abs(m) ** 2
    if a >= 1:
        raise ValueError("|m| must be below one")
    K = math.ceil(1 / eta) if K is None else int(K)
    W = step.L if W is None else W
    d, N = shape.d, shape.N
    sym = np.fft.fftn(step.stencil(shape)).real
    den = 1.0 - a * sym
    if np.abs(den).min() < 1e-12:
        raise WalkNumericsError("a Fourier mode of 1 - |m|^2 S vanishes")
    direct = np.fft.ifftn(sym / den).real
    partial = np.fft.ifftn(sym * (1.0 - (a * sym) ** K) / den).real
    remainder = a ** K / (1.0 - a)
    err = np.abs(partial - direct)
    reproduces = bool(np.all(err <= 1e-6 * np.abs(direct) + remainder))
    max_rel = float(err.max() / np.abs(direct).max())

    dist = shape.origin_distances
    radii = np.unique(dist)
    r_ = radii.astype(float)
    k1 = N ** tau
    k2 = N ** (2 - tau) / W ** 2
    ks = np.arange(1, K + 1)
    short = ks[ks <= k1]
    middle = ks[(ks > k1) & (ks <= k2)]
    tail = ks[ks > max(k1, k2)]
    sig = step.sigma
    q = np.einsum("ij,jk,ik->i", shape.points.astype(float), np.linalg.inv(sig), shape.points.astype(float))
    q = q.reshape(shape.dims)

    regimes = []
    pw = np.ones_like(sym)
    terms = {}
    for k in ks:
        pw = pw * sym
        terms[k] = a ** (k - 1) * np.fft.ifftn(pw).real

    if short.size:
        tot = sum(terms[k] for k in short)
        env = _by_distance(tot, dist, radii)
        bound = N ** ((d - 2) * tau) * (1 + r_) ** (2 - d) / W ** 2
        regimes.append(RegimeFit("short", short, float(((env - atol) / bound).max()), radii, env, bound))
    for name, block, bfun in (
        ("middle", middle, lambda k: (2 * math.pi * k) ** (-d / 2) / math.sqrt(np.linalg.det(sig))
                                     * np.exp(-q / (8 * k))),
        ("tail", tail, lambda k: np.full(shape.dims, k * N ** (-d + d * tau / 2))),
    ):
        if not block.size:
            continue
        worst, env_w, bound_w = -math.inf, None, None
        for k in block:
            env = _by_distance(terms[k], dist, radii)
            bound = _by_distance(bfun(k), dist, radii)
            c = float(((env - atol) / bound).max())
            if c > worst:
                worst, env_w, bound_w = c, env, bound
        regimes.append(RegimeFit(name, block, worst, radii, env_w, bound_w))
    return TailSum(partial, direct, K, remainder, max_rel, reproduces, tuple(regimes))
