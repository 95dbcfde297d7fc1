"""The averaged fluctuation statistic and its partial-expectation split."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ensemble import BandSample, derive_seed, resample_row, sample, uniform_profile
from .lattice import TorusShape, as_index
from .resolvent import ControlParams, Resolvent, resolvent, resolvent_columns, theoretical_controls
from .selfconsistent import SpectralParams, solve_M


def coefficients(shape: TorusShape, kind: str = "ones") -> np.ndarray:
    """Deterministic weights with sup-norm one: ``ones`` or ``cos`` = cos(2 pi x_1 / N)."""
    if kind == "ones":
        return np.ones(shape.size)
    if kind == "cos":
        return np.cos(2 * np.pi * shape.points[:, 0] / shape.N)
    raise ValueError(f"unknown coefficient profile {kind!r}")


def new_bound(c: ControlParams) -> float:
    return c.Gamma ** 2 * c.Phi ** 2 + 1.0


def old_bound(c: ControlParams, N: int, d: int) -> float:
    return N ** (d / 2) * c.Phi ** 2 + N ** d * c.Phi ** 4


@dataclass(frozen=True)
class FluctStat:
    F: float
    F_offdiag: float
    y_star: int
    bound_new: float
    bound_old: float
    controls: ControlParams

    @property
    def abs_F(self) -> float:
        return abs(self.F)

    @property
    def ratio_new(self) -> float:
        return self.abs_F / self.bound_new

    @property
    def ratio_old(self) -> float:
        return self.abs_F / self.bound_old


def fluct_terms(g_col: np.ndarray, t_col: np.ndarray, M) -> np.ndarray:
    """``|G_{x y*}|^2 - |M_x|^2 T_{x y*}`` for every ``x``."""
    M = np.broadcast_to(np.asarray(M, dtype=complex), g_col.shape)
    return np.abs(g_col) ** 2 - np.abs(M) ** 2 * t_col


def fluct_from_column(g_col: np.ndarray, t_col: np.ndarray, M, b: np.ndarray, y_star: int,
                      controls: ControlParams, shape: TorusShape) -> FluctStat:
    terms = b * fluct_terms(g_col, t_col, M)
    F = float(terms.sum())
    return FluctStat(F, F - float(terms[y_star]), y_star, new_bound(controls),
                     old_bound(controls, shape.N, shape.d), controls)


def fluct_stat(res: Resolvent, M, T: np.ndarray, b: np.ndarray, y_star=0,
               controls: ControlParams | None = None) -> FluctStat:
    """``F = sum_x b_x (|G_{x y*}|^2 - |M_x|^2 T_{x y*})`` with both comparison bounds.

    Without explicit controls the plug-ins ``Phi = (W^d eta)^{-1/2}``,
    ``Gamma^2 = 1/eta`` are used.
    """
    smp = res.source
    y = as_index(y_star, smp.shape)
    if controls is None:
        controls = theoretical_controls(smp.profile.W, smp.shape.d, res.params.eta)
    return fluct_from_column(res.G[:, y], T[:, y], M, np.asarray(b, dtype=float), y, controls, smp.shape)


@dataclass(frozen=True, eq=False)
class PQSplit:
    """Off-diagonal sum split as ``F_offdiag = p_part + q_part``.

    ``cond_mean[x]`` estimates the partial expectation of ``|G_{x y*}|^2`` over
    row/column ``x``; ``stderr[x]`` is its Monte Carlo standard error.
    """

    p_part: float
    q_part: float
    diag: float
    F_offdiag: float
    cond_mean: np.ndarray = field(repr=False)
    stderr: np.ndarray = field(repr=False)
    y_star: int


def resampled_column_entry(res: Resolvent, x: int, y_star: int, rows: np.ndarray) -> np.ndarray:
    """``G_{x y*}`` after replacing row/column ``x`` of ``H`` by each row in ``rows``.

    Uses ``G_xx = 1/(h_xx - z_x - h G^(x) h)`` and
    ``G_{x y*} = -G_xx sum_w h_w G^(x)_{w y*}``, where ``G^(x)`` depends only on
    ``H^{[x]}`` and is obtained from the full resolvent.
    """
    G = res.G
    S = res.source.profile.matrix
    nb = np.flatnonzero(S[x] > 0)
    nb = nb[nb != x]
    gx = G[x, x]
    block = G[np.ix_(nb, nb)] - np.outer(G[nb, x], G[x, nb]) / gx
    col = G[nb, y_star] - G[nb, x] * G[x, y_star] / gx
    h = rows[:, nb]
    quad = np.einsum("ki,ij,kj->k", h, block, h)
    gxx = 1.0 / (rows[:, x] - res.params.zvec[x] - quad)
    return -gxx * (h @ col)


def split_PQ(res: Resolvent, M, T: np.ndarray, b: np.ndarray, y_star=0, n_resample: int = 32,
             first_stream: int = 1) -> PQSplit:
    """Estimate ``sum_{x != y*} b_x (E_x |G_{x y*}|^2 - |M_x|^2 T_{x y*})`` by resampling.

    Resample ``k`` redraws row/column ``x`` with per-entry stream
    ``first_stream + k``; stream 0 is the original matrix.
    """
    if n_resample < 1:
        raise ValueError("n_resample must be at least 1")
    smp: BandSample = res.source
    y = as_index(y_star, smp.shape)
    n = smp.size
    b = np.asarray(b, dtype=float)
    streams = np.arange(first_stream, first_stream + n_resample)
    mean = np.zeros(n)
    err = np.zeros(n)
    for x in range(n):
        if x == y:
            continue
        vals = np.abs(resampled_column_entry(res, x, y, resample_row(smp, x, streams))) ** 2
        mean[x] = vals.mean()
        err[x] = vals.std(ddof=1) / math.sqrt(n_resample) if n_resample > 1 else math.inf
    M = np.broadcast_to(np.asarray(M, dtype=complex), (n,))
    tcol = T[:, y]
    off = np.arange(n) != y
    gsq = np.abs(res.G[:, y]) ** 2
    p = float((b * (mean - np.abs(M) ** 2 * tcol))[off].sum())
    f_off = float((b * (gsq - np.abs(M) ** 2 * tcol))[off].sum())
    diag = float(b[y] * (gsq[y] - abs(M[y]) ** 2 * tcol[y]))
    return PQSplit(p, f_off - p, diag, f_off, mean, err, y)


@dataclass(frozen=True)
class ScalingRow:
    N: int
    d: int
    W: int
    eta: float
    b: str
    trials: int
    median_absF: float
    p95_absF: float
    bound_new: float
    bound_old: float
    ratio_new: float
    ratio_old: float
    frac_within: float


def scaling_table(records: list[dict], tau: float = 0.2, quantile: float = 0.95) -> tuple[list[ScalingRow], float]:
    """Aggregate per-trial records into per-point rows and the log-log slope.

    The slope regresses ``log median|F|`` on ``log Gamma^2 Phi^2`` across points.
    """
    if not records:
        raise ValueError("empty grid")
    groups: dict[tuple, list[dict]] = {}
    for r in records:
        groups.setdefault((int(r["N"]), int(r["d"]), int(r["W"]), float(r["eta"]), str(r["b"])), []).append(r)
    rows = []
    xs, ys = [], []
    for (N, d, W, eta, bk), rs in sorted(groups.items()):
        absF = np.array([float(r["absF"]) for r in rs])
        bn = float(rs[0]["bound_new"])
        bo = float(rs[0]["bound_old"])
        med = float(np.median(absF))
        within = float(np.mean(absF <= N ** tau * bn))
        rows.append(ScalingRow(N, d, W, eta, bk, len(rs), med, float(np.quantile(absF, quantile)),
                               bn, bo, med / bn, med / bo, within))
        xs.append(math.log(bn - 1.0))
        ys.append(math.log(med))
    slope = float(np.polyfit(xs, ys, 1)[0]) if len(set(xs)) > 1 else math.nan
    return rows, slope


def fluct_trial(N: int, d: int, W: int, eta: float, seed: int, energy: float = 0.5,
                dist: str = "gaussian", b_kinds=("ones", "cos"), n_resample: int = 0,
                tau: float = 0.2) -> list[dict]:
    """One sampled matrix evaluated for every coefficient profile; one record per profile."""
    shape = TorusShape(N, d)
    profile = uniform_profile(shape, W)
    smp = sample(profile, dist, seed)
    params = SpectralParams(shape, complex(energy, eta))
    M = solve_M(profile, params).M
    controls = theoretical_controls(W, d, eta, tau)
    y = 0
    if n_resample > 0:
        res = resolvent(smp, params)
        g_col = res.G[:, y]
        T = np.zeros((shape.size, shape.size))
        T[:, y] = profile.matrix @ np.abs(g_col) ** 2
    else:
        g_col = resolvent_columns(smp, params, [y])[:, 0]
    t_col = profile.matrix @ np.abs(g_col) ** 2
    out = []
    for kind in b_kinds:
        b = coefficients(shape, kind)
        st = fluct_from_column(g_col, t_col, M, b, y, controls, shape)
        p = q = math.nan
        if n_resample > 0:
            pq = split_PQ(res, M, T, b, y, n_resample)
            p, q = pq.p_part, pq.q_part
        out.append({"N": N, "d": d, "W": W, "eta": eta, "b": kind, "seed": seed,
                    "absF": st.abs_F, "absF_offdiag": abs(st.F_offdiag),
                    "phi": controls.Phi, "gamma": controls.Gamma,
                    "bound_new": st.bound_new, "bound_old": st.bound_old,
                    "ratio_new": st.ratio_new, "ratio_old": st.ratio_old,
                    "p_part": p, "q_part": q})
    return out


def scaling_experiment(grid, trials: int, seed: int, energy: float = 0.5, dist: str = "gaussian",
                       b_kinds=("ones", "cos"), tau: float = 0.2, quantile: float = 0.95):
    """Run ``trials`` samples at every ``(N, W, d, eta)`` grid point.

    Returns ``(rows, slope, records)``; trial seeds are derived from
    ``(seed, point index, trial)``.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty grid")
    records = []
    for p, (N, W, d, eta) in enumerate(grid):
        if W ** d * eta < 1:
            raise ValueError(f"grid point {(N, W, d, eta)} has W^d eta < 1")
        for t in range(trials):
            s = derive_seed(seed, p, t)
            for r in fluct_trial(N, d, W, eta, s, energy, dist, b_kinds, tau=tau):
                r["trial"] = t
                records.append(r)
    rows, slope = scaling_table(records, tau, quantile)
    return rows, slope, records
