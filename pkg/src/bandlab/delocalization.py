"""Eigenvector delocalization metrics, resolvent mass profiles and the bootstrap checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ensemble import BandSample, sample, uniform_profile
from .lattice import TorusShape, as_index
from .resolvent import Resolvent, deviation_max, resolvent, zcal_variables
from .selfconsistent import SpectralParams, msc, solve_M
from .tequation import t_matrix

EIGEN_BUDGET = 4096
BOOTSTRAP_DELTA = 0.1


class BudgetError(ValueError):
    """Problem size exceeds the dense-solver budget."""


class DomainError(ValueError):
    """Spectral parameter outside the range where the estimate is claimed."""


class RegimeError(ValueError):
    """Size parameters outside the regime of the bootstrap argument."""


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Ascending eigenvalues and matching orthonormal eigenvectors (columns)."""

    eigenvalues: np.ndarray = field(repr=False)
    eigenvectors: np.ndarray = field(repr=False)
    shape: TorusShape
    source: BandSample | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.eigenvalues.size

    def bulk(self, kappa: float = 0.5) -> np.ndarray:
        """Mask of eigenvalues in the open window ``(-2 + kappa, 2 - kappa)``."""
        if not 0 < kappa < 2:
            raise ValueError("kappa must lie in (0, 2)")
        return np.abs(self.eigenvalues) < 2 - kappa


def _fix_signs(U: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    # first entry above tol made positive
    lead = np.argmax(np.abs(U) > tol, axis=0)
    s = np.sign(U[lead, np.arange(U.shape[1])])
    s[s == 0] = 1.0
    return U * s


def eigendecompose(smp: BandSample | np.ndarray, shape: TorusShape | None = None,
                   budget: int = EIGEN_BUDGET, tol: float = 1e-8) -> SpectralData:
    """Full symmetric eigendecomposition of ``H`` (LAPACK ``syevd`` through numpy)."""
    if isinstance(smp, BandSample):
        H, shape, src = smp.H, smp.shape, smp
    else:
        H, src = np.asarray(smp, dtype=float), None
        if shape is None:
            raise ValueError("a bare matrix needs its torus shape")
    n = H.shape[0]
    if n > budget:
        raise BudgetError(f"matrix size {n} exceeds the eigensolver budget {budget}")
    lam, U = np.linalg.eigh(H)
    U = _fix_signs(U)
    ortho = np.abs(U.T @ U - np.eye(n)).max()
    if ortho > tol:
        raise np.linalg.LinAlgError(f"orthonormality defect {ortho:.2e}")
    lam.setflags(write=False)
    U.setflags(write=False)
    return SpectralData(lam, U, shape, src)


def localization_sums(U: np.ndarray, shape: TorusShape, l: int) -> np.ndarray:
    """``sum_x |u(x)| ||P_{x,l} u||_2`` for every column ``u`` of ``U``.

    ``P_{x,l}`` keeps the coordinates at distance at least ``l`` from ``x``.
    """
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    inside = (shape.distances < l).astype(float)
    sq = U ** 2
    outside = np.clip(sq.sum(axis=0)[None, :] - inside @ sq, 0.0, None)
    return (np.abs(U) * np.sqrt(outside)).sum(axis=0)


def _check_window(l: int, shape: TorusShape, kappa: float) -> None:
    if not 0 < l < shape.N / 2:
        raise ValueError(f"window l={l} must satisfy 0 < l < N/2")
    if not 0 < kappa < 2:
        raise ValueError("kappa must lie in (0, 2)")


def localization_fraction(spectrum: SpectralData, eps: float, kappa: float = 0.5, l: int = 1) -> float:
    """Share of indices with a bulk eigenvalue whose eigenvector has localization sum at most ``eps``."""
    _check_window(l, spectrum.shape, kappa)
    bulk = spectrum.bulk(kappa)
    if not bulk.any():
        return 0.0
    sums = localization_sums(spectrum.eigenvectors[:, bulk], spectrum.shape, l)
    return float(np.count_nonzero(sums <= eps)) / spectrum.shape.size


def sup_norm_stat(spectrum: SpectralData, kappa: float = 0.5) -> float | None:
    """Largest sup-norm of a bulk eigenvector, or ``None`` when the bulk window is empty."""
    bulk = spectrum.bulk(kappa)
    if not bulk.any():
        return None
    return float(np.abs(spectrum.eigenvectors[:, bulk]).max())


@dataclass(frozen=True)
class DelocReport:
    N: int
    d: int
    W: int
    seed: int
    eps: float
    kappa: float
    l: int
    fraction: float
    supnorm: float
    bulk_count: int

    def row(self) -> dict:
        return dict(self.__dict__)


def deloc_report(spectrum: SpectralData, eps: float, kappa: float, l: int, W: int, seed: int) -> DelocReport:
    sup = sup_norm_stat(spectrum, kappa)
    return DelocReport(spectrum.shape.N, spectrum.shape.d, W, seed, eps, kappa, l,
                       localization_fraction(spectrum, eps, kappa, l),
                       math.nan if sup is None else sup, int(spectrum.bulk(kappa).sum()))


def deloc_trial(N: int, d: int, W: int, seed: int, eps: float = 0.1, kappa: float = 0.5,
                l: int = 6, dist: str = "gaussian") -> DelocReport:
    shape = TorusShape(N, d)
    smp = sample(uniform_profile(shape, W), dist, seed)
    return deloc_report(eigendecompose(smp), eps, kappa, l, W, seed)


def mass_profile(res: Resolvent, m, y, l: float) -> float:
    """Windowed Ward-normalized mass ``(eta / Im m) sum_{dist(x, y) <= l} |G_xy|^2``.

    ``m`` may be a scalar or the vector ``M``; for a vector its ``y`` entry is used.
    At ``l = N/2`` the window is the whole torus and the value is ``Im G_yy / Im m``.
    """
    if not res.params.is_scalar:
        raise ValueError("mass profile needs a constant spectral parameter")
    shape = res.source.shape
    if not 0 <= l <= shape.N / 2:
        raise ValueError(f"window l={l} must lie in [0, N/2]")
    y = as_index(y, shape)
    m = np.asarray(m, dtype=complex)
    im_m = float(m.imag) if m.ndim == 0 else float(m[y].imag)
    win = shape.distances[:, y] <= l
    return float(res.params.eta / im_m * (np.abs(res.G[win, y]) ** 2).sum())


def local_law_domain(W: int, d: int, delta: float = BOOTSTRAP_DELTA) -> float:
    """Smallest admissible ``eta``: ``W^{-d + delta}``."""
    return W ** (-d + delta)


def local_law_stat(res: Resolvent, m: complex | None = None) -> float:
    """``||G - m I||_max`` without any domain check."""
    m = msc(res.params.z) if m is None else m
    return deviation_max(res, m)


def local_law_check(res: Resolvent, m: complex | None, W: int, d: int, eta: float,
                    delta: float = BOOTSTRAP_DELTA) -> float:
    """``||G - m I||_max (W^d eta)^{1/2}``; raises :class:`DomainError` below ``W^{-d+delta}``."""
    if eta < local_law_domain(W, d, delta):
        raise DomainError(f"eta={eta:g} below W^(-d+{delta}) = {local_law_domain(W, d, delta):g}")
    return local_law_stat(res, m) * math.sqrt(W ** d * eta)


def local_law_slope(x, dev) -> float:
    """Least-squares slope of ``log dev`` on ``log x`` with ``x = W^d eta``, one point per trial."""
    x = np.asarray(x, dtype=float)
    dev = np.asarray(dev, dtype=float)
    if np.unique(x).size < 2:
        raise ValueError("slope needs at least two distinct ladder values")
    return float(np.polyfit(np.log(x), np.log(dev), 1)[0])


def spectral_resolvent(spectrum: SpectralData, params: SpectralParams) -> Resolvent:
    """``G = sum_a u_a u_a^T / (lambda_a - z)`` for a constant spectral parameter."""
    if not params.is_scalar:
        raise ValueError("spectral resolvent needs a constant spectral parameter")
    if spectrum.source is None:
        raise ValueError("spectral data carries no sample")
    U = spectrum.eigenvectors
    G = (U * (1.0 / (spectrum.eigenvalues - params.z))) @ U.T
    G = (G + G.T) / 2
    G.setflags(write=False)
    return Resolvent(G, params, frozenset(), spectrum.source)


def local_law_trial(N: int, d: int, W: int, etas, seed: int, energy: float = 0.5,
                    dist: str = "gaussian", zcal: bool = True) -> list[dict]:
    """One sample evaluated on every ladder rung.

    Each record holds the local-law deviation, its scaled ratio and the
    defect of the first-order 𝒵 expansion of the diagonal.
    """
    shape = TorusShape(N, d)
    profile = uniform_profile(shape, W)
    smp = sample(profile, dist, seed)
    spectrum = eigendecompose(smp, budget=max(EIGEN_BUDGET, shape.size))
    out = []
    for eta in etas:
        params = SpectralParams(shape, complex(energy, eta))
        res = spectral_resolvent(spectrum, params)
        m = msc(params.z)
        dev = local_law_stat(res, m)
        x = W ** d * eta
        rec = {"N": N, "d": d, "W": W, "eta": eta, "energy": energy, "seed": seed,
               "in_domain": eta >= local_law_domain(W, d), "dev": dev, "ratio": dev * math.sqrt(x),
               "phi2": 1.0 / x, "zcal_defect": math.nan}
        if zcal:
            M = solve_M(profile, params).M
            rec["zcal_defect"] = zcal_variables(smp, params, M, res).defect
        out.append(rec)
    return out


def phi2_map(phi: float, W: int, d: int, delta: float = BOOTSTRAP_DELTA) -> float:
    """One step of the self-improving estimate ``W^{-d/2} + W^{-delta/2} phi``."""
    return W ** (-d / 2) + W ** (-delta / 2) * phi


def phi2_fixed_point(W: int, d: int, delta: float = BOOTSTRAP_DELTA) -> float:
    return W ** (-d / 2) / (1.0 - W ** (-delta / 2))


def iterate_phi2(W: int, d: int, phi0: float = 1.0, delta: float = BOOTSTRAP_DELTA,
                 steps: int | None = None, tol: float = 1e-12, max_steps: int = 100_000) -> np.ndarray:
    """Orbit of the map from ``phi0``: a fixed number of ``steps``, or until it is within ``tol`` of the fixed point.

    The map contracts by ``r = W^{-delta/2}``, so a step of size ``tol (1 - r)``
    certifies the distance ``tol``.
    """
    step_tol = tol * (1.0 - W ** (-delta / 2))
    trace = [float(phi0)]
    while True:
        n = len(trace) - 1
        if steps is not None and n >= steps:
            break
        nxt = phi2_map(trace[-1], W, d, delta)
        trace.append(nxt)
        if steps is None and abs(nxt - trace[-2]) <= step_tol:
            break
        if n + 1 >= max_steps:
            raise RuntimeError("phi iteration did not settle")
    return np.array(trace)


def phi2_closed_form(n, W: int, d: int, phi0: float = 1.0, delta: float = BOOTSTRAP_DELTA):
    """``phi_n = phi* + r^n (phi0 - phi*)`` with ``r = W^{-delta/2}``."""
    fp = phi2_fixed_point(W, d, delta)
    return fp + W ** (-delta / 2 * np.asarray(n, dtype=float)) * (phi0 - fp)


def bootstrap_regime(N: int, W: int, d: int) -> bool:
    """``d >= 2`` and ``N <= W^{1 + d/2} N^{0.1}``."""
    return d >= 2 and N <= W ** (1 + d / 2) * N ** 0.1


def bootstrap_trial(N: int, d: int, W: int, eta: float, seed: int, energy: float = 0.5,
                    dist: str = "gaussian", tau: float = 0.2, delta: float = BOOTSTRAP_DELTA) -> dict:
    """Squared deviation against ``||T||_max`` and the fixed-point cap on one sample."""
    if not bootstrap_regime(N, W, d):
        raise RegimeError(f"(N={N}, W={W}, d={d}) outside d >= 2, N <= W^(1+d/2) N^0.1")
    shape = TorusShape(N, d)
    profile = uniform_profile(shape, W)
    smp = sample(profile, dist, seed)
    params = SpectralParams(shape, complex(energy, eta))
    M = solve_M(profile, params).M
    res = resolvent(smp, params)
    dev = deviation_max(res, M)
    tmax = float(t_matrix(res).max())
    fp = phi2_fixed_point(W, d, delta)
    return {"N": N, "d": d, "W": W, "eta": eta, "seed": seed, "dev": dev, "dev2": dev ** 2,
            "tmax": tmax, "ratio": dev ** 2 / tmax, "self_ok": dev ** 2 <= N ** tau * tmax,
            "fixed_point": fp, "fp_ok": dev <= fp,
            "semicircle_ok": dev <= N ** tau * W ** (-d / 2)}


@dataclass(frozen=True)
class BootstrapSummary:
    trials: int
    frac_self: float
    frac_fixed_point: float
    frac_semicircle: float
    fixed_point: float
    median_ratio: float


def bootstrap_trace(N: int, d: int, W: int, eta: float, seeds, energy: float = 0.5,
                    dist: str = "gaussian", tau: float = 0.2) -> tuple[list[dict], BootstrapSummary]:
    """Per-trial records for every seed and the pass fractions across them."""
    recs = [bootstrap_trial(N, d, W, eta, s, energy, dist, tau) for s in seeds]
    if not recs:
        raise ValueError("no trials")
    return recs, summarize_bootstrap(recs)


def summarize_bootstrap(recs: list[dict]) -> BootstrapSummary:
    f = lambda k: float(np.mean([bool(r[k]) for r in recs]))
    return BootstrapSummary(len(recs), f("self_ok"), f("fp_ok"), f("semicircle_ok"),
                            float(recs[0]["fixed_point"]), float(np.median([r["ratio"] for r in recs])))
