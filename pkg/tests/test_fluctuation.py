import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bandlab.ensemble import BandSample, EntryDistribution, dense_profile, resample_row, sample, uniform_profile
from bandlab.lattice import TorusShape
from bandlab.resolvent import ControlParams, resolvent
from bandlab.selfconsistent import SpectralParams, msc, solve_M
from bandlab.tequation import t_matrix
from bandlab.fluctuation import (coefficients, fluct_stat, fluct_trial, new_bound, old_bound,
                                 resampled_column_entry, scaling_experiment, scaling_table, split_PQ)


def setup(N=32, W=4, seed=0, z=0.5 + 0.5j):
    prof = uniform_profile(TorusShape(N, 1), W)
    params = SpectralParams(prof.shape, z)
    smp = sample(prof, "gaussian", seed)
    res = resolvent(smp, params)
    M = solve_M(prof, params).M
    return prof, smp, res, M, t_matrix(res)


def test_coefficients():
    sh = TorusShape(8, 1)
    assert np.array_equal(coefficients(sh, "ones"), np.ones(8))
    c = coefficients(sh, "cos")
    assert np.abs(c).max() == pytest.approx(1.0)
    assert c[2] == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        coefficients(sh, "sin")


def test_bounds():
    c = ControlParams(0.5, 2.0)
    assert new_bound(c) == pytest.approx(2.0)
    assert old_bound(c, 16, 1) == pytest.approx(4 * 0.25 + 16 * 0.0625)


def test_zero_matrix_closed_form():
    prof = uniform_profile(TorusShape(16, 1), 2)
    smp = BandSample(prof.shape, prof, np.zeros((16, 16)), 0, EntryDistribution.GAUSSIAN)
    z = 0.5 + 0.5j
    res = resolvent(smp, SpectralParams(prof.shape, z))
    m = msc(z)
    T = t_matrix(res)
    st_ = fluct_stat(res, m, T, np.ones(16), y_star=3)
    expected = sum((float(x == 3) - abs(m) ** 2 * prof.matrix[x, 3]) / abs(z) ** 2 for x in range(16))
    assert st_.F == pytest.approx(expected, abs=1e-14)


def test_zero_and_negated_coefficients():
    prof, smp, res, M, T = setup()
    assert fluct_stat(res, M, T, np.zeros(32)).F == 0
    b = coefficients(prof.shape, "cos")
    assert fluct_stat(res, M, T, -b).F == -fluct_stat(res, M, T, b).F


def test_split_sums_to_F():
    prof, smp, res, M, T = setup(seed=3)
    b = coefficients(prof.shape, "cos")
    pq = split_PQ(res, M, T, b, y_star=5, n_resample=8)
    F = fluct_stat(res, M, T, b, y_star=5)
    assert pq.p_part + pq.q_part == pytest.approx(pq.F_offdiag, abs=1e-12)
    assert pq.diag + pq.F_offdiag == pytest.approx(F.F, abs=1e-12)
    assert pq.cond_mean[5] == 0


def test_resampled_entry_stream_zero_is_original():
    prof, smp, res, M, T = setup(seed=4)
    rows = resample_row(smp, 7, [0])
    assert resampled_column_entry(res, 7, 2, rows)[0] == pytest.approx(res.G[7, 2], abs=1e-12)


def test_resampled_entry_matches_fresh_solve():
    prof, smp, res, M, T = setup(N=16, W=2, seed=5)
    x, y = 4, 9
    row = resample_row(smp, x, [3])
    H = np.array(smp.H)
    H[x, :] = row[0]
    H[:, x] = row[0]
    G = np.linalg.inv(H - res.params.z * np.eye(16))
    assert resampled_column_entry(res, x, y, row)[0] == pytest.approx(G[x, y], abs=1e-12)


def test_two_site_partial_expectation_vs_quadrature():
    # S = [[0, 1], [1, 0]]: H = [[0, h], [h, 0]] and G_10 = -h / (z^2 - h^2)
    sh = TorusShape(2, 1)
    prof = dense_profile(sh, 1, np.array([[0.0, 1.0], [1.0, 0.0]]))
    smp = sample(prof, "gaussian", 21)
    z = 0.3 + 0.8j
    params = SpectralParams(sh, z)
    res = resolvent(smp, params)
    T = t_matrix(res, prof)
    pq = split_PQ(res, np.full(2, msc(z)), T, np.ones(2), y_star=0, n_resample=4000)
    nodes, weights = np.polynomial.hermite_e.hermegauss(80)
    oracle = float((weights * np.abs(nodes / (z ** 2 - nodes ** 2)) ** 2).sum() / math.sqrt(2 * math.pi))
    assert abs(pq.cond_mean[1] - oracle) <= 3 * pq.stderr[1]


def test_linear_functional_centered():
    prof, smp, res, M, T = setup()
    rows = resample_row(smp, 3, np.arange(1, 2001))
    h = rows[:, 4]
    assert abs(h.mean()) <= 4 * h.std() / math.sqrt(h.size)


def test_half_estimates_agree():
    prof, smp, res, M, T = setup(seed=7)
    b = np.ones(32)
    a = split_PQ(res, M, T, b, n_resample=32, first_stream=1)
    c = split_PQ(res, M, T, b, n_resample=32, first_stream=33)
    off = np.arange(32) != 0
    se = np.sqrt(a.stderr ** 2 + c.stderr ** 2)[off]
    agree = np.abs(a.cond_mean - c.cond_mean)[off] <= 3 * se
    assert agree.mean() >= 0.9


def test_split_requires_resamples():
    prof, smp, res, M, T = setup()
    with pytest.raises(ValueError):
        split_PQ(res, M, T, np.ones(32), n_resample=0)


def test_trial_column_path_matches_full():
    a = fluct_trial(64, 1, 8, 0.5, seed=9)
    b = fluct_trial(64, 1, 8, 0.5, seed=9, n_resample=4)
    for ra, rb in zip(a, b):
        assert ra["absF"] == pytest.approx(rb["absF"], abs=1e-12)
        assert rb["p_part"] + rb["q_part"] == pytest.approx(
            np.sign(rb["p_part"] + rb["q_part"]) * rb["absF_offdiag"], abs=1e-12)


def test_scaling_experiment_and_table():
    grid = [(64, 8, 1, 0.5), (128, 16, 1, 0.25)]
    rows, slope, recs = scaling_experiment(grid, trials=4, seed=1)
    assert len(recs) == 2 * 4 * 2
    assert {r.trials for r in rows} == {4}
    assert math.isfinite(slope)
    rows2, slope2 = scaling_table(recs)
    assert slope2 == slope
    with pytest.raises(ValueError):
        scaling_experiment([], 1, 0)
    with pytest.raises(ValueError):
        scaling_experiment([(64, 2, 1, 0.1)], 1, 0)


def test_partial_parts_within_bound():
    recs = []
    for s in range(10):
        recs += fluct_trial(64, 1, 16, 4 * 16 ** 2 / 64 ** 2, seed=s, n_resample=32)
    cap = [64 ** 0.2 * r["bound_new"] for r in recs]
    p_ok = np.mean([abs(r["p_part"]) <= c for r, c in zip(recs, cap)])
    q_ok = np.mean([abs(r["q_part"]) <= c for r, c in zip(recs, cap)])
    assert p_ok >= 0.9 and q_ok >= 0.9
