"""Geometry of the discrete torus Z_N^d.

Points are stored by their canonical representative, every coordinate in the
window (-N/2, N/2].  Linear indices use row-major order over coordinates
shifted into [0, N), so index 0 is the origin and a lattice-shaped array
``a.reshape((N,) * d)`` is laid out exactly as ``numpy.fft`` expects.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence, Union

import numpy as np

PointLike = Union[int, Sequence[int], np.ndarray]


@dataclass(frozen=True)
class TorusShape:
    """Side length ``N`` and dimension ``d`` of the torus."""

    N: int
    d: int

    def __post_init__(self) -> None:
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"side length must be a positive integer, got {self.N!r}")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.d!r}")
        if self.N ** self.d > sys.maxsize:
            raise ValueError(f"torus of size {self.N}^{self.d} exceeds the addressable range")

    @property
    def size(self) -> int:
        return self.N ** self.d

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    @cached_property
    def points(self) -> np.ndarray:
        """Canonical coordinates of every point, shape ``(size, d)``, in flatten order."""
        idx = np.arange(self.size)
        return unflatten(idx, self)

    @cached_property
    def distances(self) -> np.ndarray:
        """Dense ``(size, size)`` matrix of l-infinity torus distances."""
        pts = self.points
        out = np.zeros((self.size, self.size), dtype=np.int32)
        for i in range(self.d):
            r = np.mod(pts[:, None, i] - pts[None, :, i], self.N)
            np.maximum(out, np.minimum(r, self.N - r).astype(np.int32), out=out)
        return out

    @cached_property
    def origin_distances(self) -> np.ndarray:
        """Distance of each point to the origin, as a lattice-shaped array."""
        return np.abs(self.points).max(axis=1).reshape(self.dims)


def _coords(x: PointLike, shape: TorusShape) -> np.ndarray:
    arr = np.asarray(x, dtype=np.int64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape[-1] != shape.d:
        raise ValueError(f"point has {arr.shape[-1]} coordinates, torus has dimension {shape.d}")
    return arr


def canonical_rep(x: PointLike, shape: TorusShape) -> np.ndarray:
    """Reduce integer coordinates to the canonical window (-N/2, N/2].

    Works elementwise on any integer array whose last axis has length ``d``
    (a bare scalar is accepted when ``d == 1``).
    """
    arr = _coords(x, shape)
    N = shape.N
    r = np.mod(arr, N)
    return np.where(2 * r > N, r - N, r)


def dist(x: PointLike, y: PointLike, shape: TorusShape) -> int:
    """l-infinity distance ``max_i |[x_i - y_i]_N|`` between two points."""
    diff = canonical_rep(_coords(x, shape) - _coords(y, shape), shape)
    return int(np.abs(diff).max())


def flatten(x: PointLike, shape: TorusShape) -> np.ndarray | int:
    """Row-major linear index of a point (or of a stack of points)."""
    arr = _coords(x, shape)
    shifted = np.mod(arr, shape.N)
    weights = shape.N ** np.arange(shape.d - 1, -1, -1, dtype=np.int64)
    idx = shifted @ weights
    return int(idx) if np.ndim(idx) == 0 else idx


def unflatten(i: int | np.ndarray, shape: TorusShape) -> np.ndarray:
    """Canonical coordinates of linear index ``i``; inverse of :func:`flatten`."""
    idx = np.asarray(i, dtype=np.int64)
    if np.any(idx < 0) or np.any(idx >= shape.size):
        raise IndexError(f"index out of range [0, {shape.size})")
    digits = np.stack(np.unravel_index(idx, shape.dims), axis=-1)
    return canonical_rep(digits, shape)


def as_index(x: PointLike, shape: TorusShape) -> int:
    """Accept either a linear index or a coordinate vector and return the linear index."""
    if isinstance(x, (int, np.integer)) and shape.d > 1:
        i = int(x)
        if not 0 <= i < shape.size:
            raise IndexError(f"index {i} out of range [0, {shape.size})")
        return i
    if isinstance(x, (int, np.integer)):
        return int(np.mod(int(x), shape.N))
    return int(flatten(x, shape))


def as_indices(xs: Iterable[PointLike], shape: TorusShape) -> list[int]:
    return sorted({as_index(x, shape) for x in xs})


def ball_indicator(shape: TorusShape, radius: int) -> np.ndarray:
    """Symmetric 0/1 matrix with entry 1 where ``dist(x, y) <= radius``."""
    return (shape.distances <= radius).astype(float)


def neighborhood(x: PointLike, radius: int, shape: TorusShape) -> np.ndarray:
    """Linear indices of all points within l-infinity distance ``radius`` of ``x``."""
    i = as_index(x, shape)
    return np.flatnonzero(shape.distances[i] <= radius)
