"""Variance profiles and sampling of real symmetric random band matrices."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path

import numpy as np

from .lattice import TorusShape

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix64(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 arithmetic wraps modulo 2**64
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def counter_hash(*keys) -> np.ndarray:
    """Hash a sequence of integer keys (scalars or broadcastable arrays) to uint64."""
    with np.errstate(over="ignore"):
        h = np.zeros((), dtype=np.uint64)
        for k in keys:
            k = np.asarray(k).astype(np.uint64) & _MASK64
            h = _mix64(h + _GOLDEN + _mix64(k + _GOLDEN))
    return h


def derive_seed(*keys: int) -> int:
    """Derive a 63-bit child seed from a master seed and integer labels."""
    return int(counter_hash(*keys) >> np.uint64(1))


def _uniform01(bits: np.ndarray) -> np.ndarray:
    # 53 high bits -> (0, 1), never exactly 0
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


class EntryDistribution(str, Enum):
    """Centered unit-variance laws for the normalized entries."""

    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"
    UNIFORM = "uniform"

    def draw(self, seed: int, i, j, stream=0) -> np.ndarray:
        """Normalized variates for entries ``(i, j)``; one independent stream per key tuple."""
        u1 = _uniform01(counter_hash(seed, i, j, stream, 0))
        if self is EntryDistribution.GAUSSIAN:
            u2 = _uniform01(counter_hash(seed, i, j, stream, 1))
            return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        if self is EntryDistribution.RADEMACHER:
            return np.where(u1 < 0.5, -1.0, 1.0)
        return np.sqrt(3.0) * (2.0 * u1 - 1.0)


@dataclass(frozen=True, eq=False)
class VarianceProfile:
    """The variance matrix ``S = (s_xy)``.

    ``kind == "periodic"`` stores a lattice-shaped stencil ``f[u] = s_{x, x+u}``
    in FFT layout (index 0 is zero displacement); ``kind == "dense"`` stores the
    full matrix.
    """

    shape: TorusShape
    W: int
    kind: str
    stencil: np.ndarray | None = None
    dense: np.ndarray | None = None
    zeta: float = 0.0
    c_s: float | None = None
    C_s: float | None = None

    def __post_init__(self) -> None:
        if self.W <= 0:
            raise ValueError("band width must be positive")
        if not 0.0 <= self.zeta < 1.0:
            raise ValueError("row-sum slack zeta must lie in [0, 1)")
        if self.kind == "periodic":
            if self.stencil is None or self.stencil.shape != self.shape.dims:
                raise ValueError("periodic profile needs a lattice-shaped stencil")
        elif self.kind == "dense":
            n = self.shape.size
            if self.dense is None or self.dense.shape != (n, n):
                raise ValueError(f"dense profile needs an {n}x{n} matrix")
        else:
            raise ValueError(f"unknown profile kind {self.kind!r}")

    @cached_property
    def matrix(self) -> np.ndarray:
        if self.kind == "dense":
            out = np.array(self.dense, dtype=float)
        else:
            pts = self.shape.points
            N = self.shape.N
            # s_xy = f[y - x]; row-major index of the displacement
            disp = np.mod(pts[None, :, :] - pts[:, None, :], N)
            weights = N ** np.arange(self.shape.d - 1, -1, -1)
            out = self.stencil.reshape(-1)[disp @ weights]
        out.setflags(write=False)
        return out

    @cached_property
    def symbol(self) -> np.ndarray:
        """Fourier symbol of a periodic profile (real for symmetric stencils)."""
        if self.kind != "periodic":
            raise ValueError("Fourier symbol only exists for periodic profiles")
        return np.fft.fftn(self.stencil).real

    def apply(self, v: np.ndarray) -> np.ndarray:
        """``S @ v`` along the first axis, via FFT for periodic profiles."""
        if self.kind == "dense":
            return self.matrix @ v
        n = self.shape.size
        tail = v.shape[1:]
        vv = v.reshape(self.shape.dims + tail)
        axes = tuple(range(self.shape.d))
        sym = self.symbol.reshape(self.shape.dims + (1,) * len(tail))
        out = np.fft.ifftn(np.fft.fftn(vv, axes=axes) * sym, axes=axes)
        out = out.reshape((n,) + tail)
        return out if np.iscomplexobj(v) else out.real

    def support(self) -> np.ndarray:
        """Boolean mask of structurally nonzero entries."""
        return self.matrix > 0


def uniform_profile(shape: TorusShape, W: int) -> VarianceProfile:
    """Normalized box stencil: ``s_xy = (2W+1)^{-d}`` for ``dist(x, y) <= W``."""
    if 2 * W + 1 > shape.N:
        raise ValueError(f"band 2W+1={2 * W + 1} is wider than the torus side N={shape.N}")
    box = (shape.origin_distances <= W).astype(float)
    stencil = box / box.sum()
    c_s, C_s = uniform_constants(W, shape.d)
    return VarianceProfile(shape, W, "periodic", stencil=stencil, c_s=c_s, C_s=C_s)


def uniform_constants(W: int, d: int) -> tuple[float, float]:
    """Band constants ``(c_s, C_s)`` for which a box profile satisfies the band bounds."""
    return (W / (2 * W + 1)) ** d, 1.0


def dense_profile(shape: TorusShape, W: int, matrix: np.ndarray, zeta: float = 0.0) -> VarianceProfile:
    return VarianceProfile(shape, W, "dense", dense=np.asarray(matrix, dtype=float), zeta=zeta)


@dataclass(frozen=True)
class ProfileReport:
    band_ok: bool
    lower_ok: bool
    symmetric_ok: bool
    rowsum_slack: float
    rowsum_ok: bool

    @property
    def ok(self) -> bool:
        return self.band_ok and self.lower_ok and self.symmetric_ok and self.rowsum_ok


def check_profile(profile: VarianceProfile, c_s: float, C_s: float, rtol: float = 1e-12) -> ProfileReport:
    """Check nonnegativity, band bounds, symmetry and the row-sum slack of ``S``."""
    S = profile.matrix
    D = profile.shape.distances
    W, d = profile.W, profile.shape.d
    upper = C_s * W ** -d * (D <= C_s * W)
    lower = c_s * W ** -d * (D <= c_s * W)
    band_ok = bool(np.all(S <= upper * (1 + rtol)))
    lower_ok = bool(np.all(S >= 0) and np.all(S >= lower * (1 - rtol)))
    symmetric_ok = bool(np.array_equal(S, S.T))
    slack = float(np.max(np.abs(S.sum(axis=1) - 1.0)))
    rowsum_ok = slack <= profile.zeta + 1e-12
    return ProfileReport(band_ok, lower_ok, symmetric_ok, slack, rowsum_ok)


@dataclass(frozen=True, eq=False)
class BandSample:
    """One realization of ``H`` together with the inputs that regenerate it."""

    shape: TorusShape
    profile: VarianceProfile
    H: np.ndarray = field(repr=False)
    seed: int
    distribution: EntryDistribution

    @property
    def size(self) -> int:
        return self.shape.size


def _upper_pairs(profile: VarianceProfile) -> tuple[np.ndarray, np.ndarray]:
    i, j = np.nonzero(np.triu(profile.support()))
    return i, j


def sample(profile: VarianceProfile, dist: EntryDistribution | str = EntryDistribution.GAUSSIAN,
           seed: int = 0) -> BandSample:
    """Draw ``H_xy = s_xy^{1/2} xi_xy`` with ``xi`` keyed by ``(seed, x, y)``, ``x <= y``."""
    dist = EntryDistribution(dist)
    S = profile.matrix
    if np.any(S < 0) or not np.array_equal(S, S.T):
        raise ValueError("variance profile must be symmetric and nonnegative")
    n = profile.shape.size
    i, j = _upper_pairs(profile)
    vals = np.sqrt(S[i, j]) * dist.draw(seed, i, j)
    H = np.zeros((n, n))
    H[i, j] = vals
    H[j, i] = vals
    H.setflags(write=False)
    return BandSample(profile.shape, profile, H, int(seed), dist)


def resample_row(smp: BandSample, x: int, streams: np.ndarray | int) -> np.ndarray:
    """Fresh draws of row ``x`` of ``H``, one row per resampling stream.

    Stream ``k`` re-keys the per-entry generator of every pair ``(x, w)``, so
    the returned rows are independent of ``H^{[x]}`` and of each other.
    Stream 0 reproduces the original row.
    """
    streams = np.atleast_1d(np.asarray(streams, dtype=np.int64))
    s = smp.profile.matrix[x]
    w = np.flatnonzero(s > 0)
    lo, hi = np.minimum(x, w), np.maximum(x, w)
    xi = smp.distribution.draw(smp.seed, lo[None, :], hi[None, :], streams[:, None])
    rows = np.zeros((streams.size, smp.size))
    rows[:, w] = np.sqrt(s[w])[None, :] * xi
    return rows


def dump(smp: BandSample, path: str | Path) -> tuple[Path, Path]:
    """Write ``H`` as little-endian float64 (row-major) plus a JSON sidecar."""
    path = Path(path)
    bin_path = path.with_suffix(".bin")
    meta_path = path.with_suffix(".json")
    bin_path.write_bytes(np.ascontiguousarray(smp.H, dtype="<f8").tobytes())
    meta = {"N": smp.shape.N, "d": smp.shape.d, "W": smp.profile.W,
            "seed": smp.seed, "dist": smp.distribution.value}
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return bin_path, meta_path


def load_dump(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    n = meta["N"] ** meta["d"]
    H = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8").reshape(n, n)
    return H.copy(), meta
