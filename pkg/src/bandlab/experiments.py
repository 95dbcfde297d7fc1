"""Experiment definitions: default configs, per-trial tasks and summary checks.

Every task is a module-level function called with keyword arguments only, so
it can be shipped to a worker process.  Tasks return lists of flat records.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .delocalization import (bootstrap_regime, bootstrap_trial, deloc_trial, iterate_phi2, local_law_slope,
                             local_law_trial, phi2_closed_form, phi2_fixed_point, summarize_bootstrap)
from .ensemble import derive_seed, sample, uniform_profile
from .fluctuation import fluct_trial, scaling_table
from .lattice import TorusShape
from .resolvent import identity_residuals, minor, resolvent, ward_residual
from .selfconsistent import SpectralParams, msc, solve_M, theta_bound_constant, theta_kernel
from .tequation import t_equation_residual, t_matrix
from .walk import clt_compare, from_profile, theta_tail_sum, uniform_step

DISTRIBUTIONS = ("gaussian", "rademacher", "uniform")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


Task = tuple[Callable[..., list], dict]


@dataclass(frozen=True)
class Experiment:
    name: str
    defaults: dict
    validate: Callable[[dict], None]
    tasks: Callable[[dict], list]
    summarize: Callable[[dict, list], tuple[dict, dict]]


# ---------------------------------------------------------------- helpers

def _positive(cfg: dict, *keys: str) -> None:
    for k in keys:
        v = cfg[k]
        vals = v if isinstance(v, (list, tuple)) else [v]
        if not vals:
            raise ConfigError(f"{k} must not be empty")
        for x in vals:
            if isinstance(x, bool) or not isinstance(x, (int, float)) or not x > 0:
                raise ConfigError(f"{k} must be positive, got {x!r}")


def _integer(cfg: dict, *keys: str) -> None:
    for k in keys:
        v = cfg[k]
        for x in (v if isinstance(v, (list, tuple)) else [v]):
            if isinstance(x, bool) or int(x) != x:
                raise ConfigError(f"{k} must be an integer, got {x!r}")


def _budget(cfg: dict, N: int, d: int) -> None:
    if N ** d > cfg["budget"]:
        raise ConfigError(f"N^d = {N ** d} exceeds the budget {cfg['budget']}")


def _band(N: int, W: int) -> None:
    if 2 * W + 1 > N:
        raise ConfigError(f"band 2W+1 = {2 * W + 1} exceeds N = {N}")


def _dist(cfg: dict) -> None:
    if cfg["dist"] not in DISTRIBUTIONS:
        raise ConfigError(f"dist must be one of {DISTRIBUTIONS}")


def _common(cfg: dict) -> None:
    _positive(cfg, "trials", "budget")
    _integer(cfg, "trials", "seed")
    if cfg["seed"] < 0:
        raise ConfigError("seed must be nonnegative")
    _dist(cfg)


def _decreasing(vals, key: str) -> None:
    if any(b >= a for a, b in zip(vals, vals[1:])):
        raise ConfigError(f"{key} must be strictly decreasing")


def _seeds(cfg: dict, point: int, trials: int) -> list[int]:
    return [derive_seed(cfg["seed"], point, t) for t in range(trials)]


# ---------------------------------------------------------------- identities

def identities_task(N: int, d: int, W: int, eta: float, energy: float, dist: str, seed: int,
                    trial: int) -> list[dict]:
    shape = TorusShape(N, d)
    profile = uniform_profile(shape, W)
    smp = sample(profile, dist, seed)
    params = SpectralParams(shape, complex(energy, eta))
    res = resolvent(smp, params)
    M = solve_M(profile, params).M
    rng = np.random.default_rng(seed)
    i, j, k = (int(v) for v in rng.choice(shape.size, 3, replace=False))
    ir = identity_residuals(smp, params, i, j, k, G=res)
    # composition: the removal identity applied to G^(i) must give the fresh G^(ij)
    Gi = minor(res, [i]).G
    Gij = minor(smp, [i, j], params).G
    keep = np.setdiff1d(np.arange(shape.size), [i, j])
    pred = Gi[np.ix_(keep, keep)] - np.outer(Gi[keep, j], Gi[j, keep]) / Gi[j, j]
    composition = float(np.abs(pred - Gij[np.ix_(keep, keep)]).max())
    wards = [ward_residual(res, y) for y in range(shape.size)]
    T = t_matrix(res)
    return [{"N": N, "d": d, "W": W, "eta": eta, "energy": energy, "seed": seed, "trial": trial,
             "i": i, "j": j, "k": k,
             "removal": ir.removal, "inverse_diag": ir.inverse_diag, "schur_diag": ir.schur_diag,
             "offdiag": ir.offdiag, "composition": composition,
             "ward_scalar": max(w.scalar for w in wards), "ward_generalized": max(w.generalized for w in wards),
             "t_equation": t_equation_residual(T, res, M)}]


IDENTITY_COLUMNS = ("removal", "inverse_diag", "schur_diag", "offdiag", "composition",
                    "ward_scalar", "ward_generalized", "t_equation")


def _identities_validate(cfg: dict) -> None:
    _common(cfg)
    _positive(cfg, "N", "d", "W", "eta", "tol")
    _integer(cfg, "N", "d", "W")
    _budget(cfg, cfg["N"], cfg["d"])
    _band(cfg["N"], cfg["W"])
    if cfg["N"] ** cfg["d"] < 3:
        raise ConfigError("need at least three lattice points")


def _identities_tasks(cfg: dict) -> list[Task]:
    return [(identities_task, dict(N=cfg["N"], d=cfg["d"], W=cfg["W"], eta=cfg["eta"], energy=cfg["energy"],
                                   dist=cfg["dist"], seed=s, trial=t))
            for t, s in enumerate(_seeds(cfg, 0, cfg["trials"]))]


def _identities_summary(cfg: dict, recs: list[dict]) -> tuple[dict, dict]:
    worst = {c: max((float(r[c]) for r in recs if not math.isnan(float(r[c]))), default=0.0)
             for c in IDENTITY_COLUMNS}
    checks = {f"{c}<{cfg['tol']:g}": worst[c] < cfg["tol"] for c in IDENTITY_COLUMNS}
    return {"trials": len(recs), "max_residual": worst}, checks


# ---------------------------------------------------------------- local law

def localaw_task(N: int, d: int, W: int, etas: list, energy: float, dist: str, seed: int,
                 trial: int) -> list[dict]:
    recs = local_law_trial(N, d, W, etas, seed, energy, dist)
    for r in recs:
        r["trial"] = trial
    return recs


def _localaw_validate(cfg: dict) -> None:
    _common(cfg)
    _positive(cfg, "N", "d", "W", "eta_ladder", "coverage", "zcal_factor", "slope_tol")
    _integer(cfg, "N", "d", "W")
    _budget(cfg, cfg["N"], cfg["d"])
    _band(cfg["N"], cfg["W"])
    _decreasing(cfg["eta_ladder"], "eta_ladder")
    if len(cfg["eta_ladder"]) < 2:
        raise ConfigError("eta_ladder needs at least two rungs")


def _localaw_tasks(cfg: dict) -> list[Task]:
    return [(localaw_task, dict(N=cfg["N"], d=cfg["d"], W=cfg["W"], etas=list(cfg["eta_ladder"]),
                                energy=cfg["energy"], dist=cfg["dist"], seed=s, trial=t))
            for t, s in enumerate(_seeds(cfg, 0, cfg["trials"]))]


def _localaw_summary(cfg: dict, recs: list[dict]) -> tuple[dict, dict]:
    N = int(recs[0]["N"])
    x = [float(r["W"]) ** float(r["d"]) * float(r["eta"]) for r in recs]
    slope = local_law_slope(x, [float(r["dev"]) for r in recs])
    cap = N ** cfg["tau"]
    within = float(np.mean([float(r["ratio"]) <= cap for r in recs]))
    rungs = []
    zcal_ok = True
    for eta in sorted({float(r["eta"]) for r in recs}, reverse=True):
        rs = [r for r in recs if float(r["eta"]) == eta]
        med = float(np.median([float(r["zcal_defect"]) for r in rs]))
        lim = cfg["zcal_factor"] * float(rs[0]["phi2"])
        zcal_ok &= med <= lim
        rungs.append({"eta": eta, "trials": len(rs), "in_domain": str(rs[0]["in_domain"]) == "True",
                      "median_dev": float(np.median([float(r["dev"]) for r in rs])),
                      "max_ratio": max(float(r["ratio"]) for r in rs),
                      "median_zcal_defect": med, "zcal_limit": lim})
    lo, hi = cfg["slope_target"] - cfg["slope_tol"], cfg["slope_target"] + cfg["slope_tol"]
    checks = {"slope_in_band": lo <= slope <= hi,
              "ratio_coverage": within >= cfg["coverage"],
              "zcal_median": bool(zcal_ok)}
    return {"slope": slope, "ratio_cap": cap, "frac_within": within, "rungs": rungs}, checks


# ---------------------------------------------------------------- fluctuation averaging

def _fluct_grid(cfg: dict) -> list[tuple[int, int, int, float]]:
    grid = []
    d = cfg["d"]
    for N in cfg["N_grid"]:
        W = cfg["W"] if cfg["W"] is not None else int(round(N ** 0.75))
        eta = cfg["eta"] if cfg["eta"] is not None else 4 * W ** 2 / N ** 2
        grid.append((int(N), int(W), int(d), float(eta)))
    return grid


def fluct_task(N: int, d: int, W: int, eta: float, energy: float, dist: str, b_kinds: list, tau: float,
               n_resample: int, seed: int, trial: int, point: int) -> list[dict]:
    recs = fluct_trial(N, d, W, eta, seed, energy, dist, tuple(b_kinds), n_resample, tau)
    for r in recs:
        r["trial"] = trial
        r["point"] = point
    return recs


def _fluct_validate(cfg: dict) -> None:
    _common(cfg)
    _positive(cfg, "N_grid", "d", "quantile", "coverage")
    _integer(cfg, "N_grid", "d", "n_resample")
    if cfg["W"] is not None:
        _positive(cfg, "W")
    if cfg["eta"] is not None:
        _positive(cfg, "eta")
    if cfg["n_resample"] < 0:
        raise ConfigError("n_resample must be nonnegative")
    for b in cfg["b"]:
        if b not in ("ones", "cos"):
            raise ConfigError(f"unknown coefficient profile {b!r}")
    for N, W, d, eta in _fluct_grid(cfg):
        _budget(cfg, N, d)
        _band(N, W)
        if W ** d * eta < 1:
            raise ConfigError(f"grid point N={N} has W^d eta < 1")


def _fluct_tasks(cfg: dict) -> list[Task]:
    out = []
    for p, (N, W, d, eta) in enumerate(_fluct_grid(cfg)):
        for t, s in enumerate(_seeds(cfg, p, cfg["trials"])):
            out.append((fluct_task, dict(N=N, d=d, W=W, eta=eta, energy=cfg["energy"], dist=cfg["dist"],
                                         b_kinds=list(cfg["b"]), tau=cfg["tau"], n_resample=cfg["n_resample"],
                                         seed=s, trial=t, point=p)))
    return out


def _fluct_summary(cfg: dict, recs: list[dict]) -> tuple[dict, dict]:
    rows, slope = scaling_table(recs, cfg["tau"], cfg["quantile"])
    checks = {}
    for b in sorted({r.b for r in rows}):
        rs = sorted((r for r in rows if r.b == b), key=lambda r: r.N)
        checks[f"coverage[{b}]"] = all(r.frac_within >= cfg["coverage"] for r in rs)
        olds = [r.ratio_old for r in rs]
        checks[f"old_ratio_decreasing[{b}]"] = all(b2 < a for a, b2 in zip(olds, olds[1:]))
    return {"slope": slope, "rows": [r.__dict__ for r in rows]}, checks


# ---------------------------------------------------------------- theta profile

def theta_task(N: int, d: int, W: int, eta: float, energy: float) -> list[dict]:
    shape = TorusShape(N, d)
    profile = uniform_profile(shape, W)
    m = msc(complex(energy, eta))
    th = theta_kernel(profile, m, "fft")
    dense = theta_kernel(profile, m, "dense")
    return [{"N": N, "d": d, "W": W, "eta": eta, "energy": energy,
             "constant": theta_bound_constant(th, shape, W, eta),
             "min_entry": float(th.min()), "fft_vs_dense": float(np.abs(th - dense).max())}]


def _theta_cases(cfg: dict) -> list[dict]:
    out = []
    for d in cfg["d_list"]:
        N = int(cfg["N_by_d"][d] if d in cfg["N_by_d"] else cfg["N_by_d"][str(d)])
        for W in cfg["W_list"]:
            for eta in cfg["eta_list"]:
                out.append(dict(N=N, d=int(d), W=int(W), eta=float(eta), energy=cfg["energy"]))
    return out


def _theta_validate(cfg: dict) -> None:
    _positive(cfg, "d_list", "W_list", "eta_list", "cap", "budget")
    _integer(cfg, "d_list", "W_list")
    for d in cfg["d_list"]:
        if d not in cfg["N_by_d"] and str(d) not in cfg["N_by_d"]:
            raise ConfigError(f"N_by_d has no side length for d={d}")
    for c in _theta_cases(cfg):
        _budget(cfg, c["N"], c["d"])
        _band(c["N"], c["W"])


def _theta_tasks(cfg: dict) -> list[Task]:
    return [(theta_task, c) for c in _theta_cases(cfg)]


def _theta_summary(cfg: dict, recs: list[dict]) -> tuple[dict, dict]:
    worst = max(float(r["constant"]) for r in recs)
    return ({"cases": len(recs), "max_constant": worst},
            {"constant<=cap": worst <= cfg["cap"],
             "nonnegative": all(float(r["min_entry"]) >= 0 for r in recs)})


# ---------------------------------------------------------------- delocalization

def deloc_task(N: int, d: int, W: int, eps: float, kappa: float, l: int, dist: str, seed: int,
               trial: int) -> list[dict]:
    row = deloc_trial(N, d, W, seed, eps, kappa, l, dist).row()
    row["trial"] = trial
    return [row]


def _deloc_validate(cfg: dict) -> None:
    _common(cfg)
    _positive(cfg, "N", "d", "W_list", "eps", "kappa", "l", "cap")
    _integer(cfg, "N", "d", "W_list", "l")
    _budget(cfg, cfg["N"], cfg["d"])
    for W in cfg["W_list"]:
        _band(cfg["N"], W)
    if not cfg["kappa"] < 2:
        raise ConfigError("kappa must lie in (0, 2)")
    if not cfg["l"] < cfg["N"] / 2:
        raise ConfigError("l must be below N/2")


def _deloc_tasks(cfg: dict) -> list[Task]:
    out = []
    for p, W in enumerate(cfg["W_list"]):
        for t, s in enumerate(_seeds(cfg, p, cfg["trials"])):
            out.append((deloc_task, dict(N=cfg["N"], d=cfg["d"], W=int(W), eps=cfg["eps"], kappa=cfg["kappa"],
                                         l=cfg["l"], dist=cfg["dist"], seed=s, trial=t)))
    return out


def _deloc_summary(cfg: dict, recs: list[dict]) -> tuple[dict, dict]:
    Ws = sorted({int(r["W"]) for r in recs})
    means = [float(np.mean([float(r["fraction"]) for r in recs if int(r["W"]) == W])) for W in Ws]
    counts = [sum(int(r["W"]) == W for r in recs) for W in Ws]
    sup = [float(np.median([float(r["supnorm"]) for r in recs if int(r["W"]) == W])) for W in Ws]
    checks = {"non_increasing_in_W": all(b <= a for a, b in zip(means, means[1:])),
              "cap_at_largest_W": means[-1] <= cfg["cap"]}
    return {"W": Ws, "trials": counts, "mean_fraction": means, "median_supnorm": sup}, checks


# ---------------------------------------------------------------- random walk

def walk_task(clt_N: int, clt_W: int, clt_d: int, n: int, tail_N: int, tail_W: int, tail_d: int,
              tail_eta: float, energy: float) -> list[dict]:
    rep = clt_compare(uniform_step(clt_W, clt_d), n, TorusShape(clt_N, clt_d))
    shape = TorusShape(tail_N, tail_d)
    step = from_profile(uniform_profile(shape, tail_W))
    m = msc(complex(energy, tail_eta))
    ts = theta_tail_sum(step, m, tail_eta, shape)
    recs = [{"kind": "clt", "regime": "", "n": n, "distance": -1, "mass": rep.peak, "bound": math.nan,
             "ratio": math.nan, "center_rel_err": rep.center_rel_err, "rel_sup_err": rep.rel_sup_err,
             "wraparound": rep.wraparound, "constant": math.nan, "max_rel_err": math.nan,
             "reproduces": True}]
    fits = {r.name: r.constant for r in ts.regimes}
    for row in ts.rows():
        recs.append({"kind": "tail", "regime": row["regime"], "n": ts.K, "distance": row["distance"],
                     "mass": row["mass"], "bound": row["bound"], "ratio": row["ratio"],
                     "center_rel_err": math.nan, "rel_sup_err": math.nan, "wraparound": False,
                     "constant": fits[row["regime"]], "max_rel_err": ts.max_rel_err,
                     "reproduces": ts.reproduces})
    return recs


def _walk_validate(cfg: dict) -> None:
    _positive(cfg, "clt_N", "clt_W", "clt_d", "n", "tail_N", "tail_W", "tail_d", "tail_eta", "clt_tol")
    _integer(cfg, "clt_N", "clt_W", "clt_d", "n", "tail_N", "tail_W", "tail_d")
    _band(cfg["clt_N"], cfg["clt_W"])
    _band(cfg["tail_N"], cfg["tail_W"])
    _budget(cfg, cfg["tail_N"], cfg["tail_d"])


def _walk_tasks(cfg: dict) -> list[Task]:
    keys = ("clt_N", "clt_W", "clt_d", "n", "tail_N", "tail_W", "tail_d", "tail_eta", "energy")
    return [(walk_task, {k: cfg[k] for k in keys})]


def _walk_summary(cfg: dict, recs: list[dict]) -> tuple[dict, dict]:
    clt = next(r for r in recs if r["kind"] == "clt")
    tail = [r for r in recs if r["kind"] == "tail"]
    consts = {}
    for r in tail:
        consts[r["regime"]] = float(r["constant"])
    tol = cfg["clt_tol"]
    checks = {"clt_center": float(clt["center_rel_err"]) <= tol,
              "clt_sup": float(clt["rel_sup_err"]) <= tol,
              "tail_reproduces": all(str(r["reproduces"]) == "True" for r in tail),
              "regime_constants": all(c <= 100.0 for c in consts.values())}
    return {"center_rel_err": float(clt["center_rel_err"]), "rel_sup_err": float(clt["rel_sup_err"]),
            "tail_max_rel_err": float(tail[0]["max_rel_err"]) if tail else math.nan,
            "regime_constants": consts}, checks


# ---------------------------------------------------------------- bootstrap

def bootstrap_task(N: int, d: int, W: int, eta: float, energy: float, dist: str, tau: float, seed: int,
                   trial: int) -> list[dict]:
    r = bootstrap_trial(N, d, W, eta, seed, energy, dist, tau)
    r["trial"] = trial
    return [r]


def _bootstrap_eta(cfg: dict) -> float:
    return cfg["eta"] if cfg["eta"] is not None else 4 * cfg["W"] ** 2 / cfg["N"] ** 2


def _bootstrap_validate(cfg: dict) -> None:
    _common(cfg)
    _positive(cfg, "N", "d", "W", "coverage", "fp_coverage", "semicircle_coverage")
    _integer(cfg, "N", "d", "W")
    if cfg["eta"] is not None:
        _positive(cfg, "eta")
    _budget(cfg, cfg["N"], cfg["d"])
    _band(cfg["N"], cfg["W"])
    if not bootstrap_regime(cfg["N"], cfg["W"], cfg["d"]):
        raise ConfigError("(N, W, d) outside the bootstrap regime d >= 2, N <= W^(1+d/2) N^0.1")


def _bootstrap_tasks(cfg: dict) -> list[Task]:
    return [(bootstrap_task, dict(N=cfg["N"], d=cfg["d"], W=cfg["W"], eta=_bootstrap_eta(cfg),
                                  energy=cfg["energy"], dist=cfg["dist"], tau=cfg["tau"], seed=s, trial=t))
            for t, s in enumerate(_seeds(cfg, 0, cfg["trials"]))]


def phi2_arithmetic_defect(W: int, d: int) -> float:
    """Largest gap between the iterated map and its closed form along the orbit from 1."""
    orbit = iterate_phi2(W, d)
    closed = phi2_closed_form(np.arange(orbit.size), W, d)
    return float(max(np.abs(orbit - closed).max(), abs(orbit[-1] - phi2_fixed_point(W, d))))


def _bootstrap_summary(cfg: dict, recs: list[dict]) -> tuple[dict, dict]:
    for r in recs:
        for k in ("self_ok", "fp_ok", "semicircle_ok"):
            r[k] = str(r[k]) == "True"
        r["ratio"] = float(r["ratio"])
        r["fixed_point"] = float(r["fixed_point"])
    s = summarize_bootstrap(recs)
    defect = phi2_arithmetic_defect(cfg["W"], cfg["d"])
    checks = {"self_improving": s.frac_self >= cfg["coverage"],
              "fixed_point_arithmetic": defect <= 1e-12,
              "fixed_point_cap": s.frac_fixed_point >= cfg["fp_coverage"],
              "semicircle_scale": s.frac_semicircle >= cfg["semicircle_coverage"]}
    return {**s.__dict__, "phi2_arithmetic_defect": defect}, checks


# ---------------------------------------------------------------- registry

_COMMON = {"seed": 0, "dist": "gaussian", "energy": 0.5, "tau": 0.2, "budget": 4096, "out": None}

EXPERIMENTS: dict[str, Experiment] = {
    "identities": Experiment(
        "identities",
        {**_COMMON, "N": 64, "d": 1, "W": 8, "eta": 0.5, "trials": 10, "seed": 7, "tol": 1e-8},
        _identities_validate, _identities_tasks, _identities_summary),
    "localaw": Experiment(
        "localaw",
        {**_COMMON, "N": 1024, "d": 1, "W": 32, "eta_ladder": [2.0 ** -k for k in range(1, 7)], "trials": 20,
         "coverage": 0.95, "slope_target": -0.5, "slope_tol": 0.1, "zcal_factor": 10.0},
        _localaw_validate, _localaw_tasks, _localaw_summary),
    "fluctavg": Experiment(
        "fluctavg",
        {**_COMMON, "N_grid": [256, 512, 1024], "d": 1, "W": None, "eta": None, "b": ["ones", "cos"],
         "trials": 100, "quantile": 0.95, "coverage": 0.95, "n_resample": 0},
        _fluct_validate, _fluct_tasks, _fluct_summary),
    "theta": Experiment(
        "theta",
        {**_COMMON, "d_list": [1, 2], "N_by_d": {1: 64, 2: 32}, "W_list": [4, 8], "eta_list": [0.5, 0.05],
         "trials": 1, "cap": 10.0},
        _theta_validate, _theta_tasks, _theta_summary),
    "deloc": Experiment(
        "deloc",
        {**_COMMON, "N": 24, "d": 2, "W_list": [2, 4, 8], "eps": 0.1, "kappa": 0.5, "l": 6, "trials": 10,
         "cap": 0.5},
        _deloc_validate, _deloc_tasks, _deloc_summary),
    "walk": Experiment(
        "walk",
        {**_COMMON, "clt_N": 4096, "clt_W": 16, "clt_d": 1, "n": 400, "tail_N": 128, "tail_W": 8, "tail_d": 1,
         "tail_eta": 0.05, "trials": 1, "clt_tol": 0.05},
        _walk_validate, _walk_tasks, _walk_summary),
    "bootstrap": Experiment(
        "bootstrap",
        {**_COMMON, "N": 24, "d": 2, "W": 6, "eta": None, "trials": 20, "coverage": 0.9, "fp_coverage": 0.9,
         "semicircle_coverage": 0.8},
        _bootstrap_validate, _bootstrap_tasks, _bootstrap_summary),
}
