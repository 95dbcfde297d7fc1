import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bandlab.ensemble import (EntryDistribution, check_profile, counter_hash, dense_profile, derive_seed, dump,
                              load_dump, resample_row, sample, uniform_constants, uniform_profile)
from bandlab.lattice import TorusShape


def test_uniform_profile_d1():
    p = uniform_profile(TorusShape(8, 1), 1)
    S = p.matrix
    D = p.shape.distances
    assert np.allclose(S[D <= 1], 1 / 3) and np.all(S[D > 1] == 0)


def test_uniform_profile_d2():
    p = uniform_profile(TorusShape(6, 2), 1)
    S = p.matrix
    assert np.allclose(S[p.shape.distances <= 1], 1 / 9)
    assert np.all(S[p.shape.distances > 1] == 0)
    assert np.count_nonzero(S[0]) == 9


def test_band_wider_than_torus():
    with pytest.raises(ValueError):
        uniform_profile(TorusShape(8, 1), 4)


@given(N=st.integers(3, 20), d=st.integers(1, 2), data=st.data())
def test_uniform_profile_rows_and_checks(N, d, data):
    W = data.draw(st.integers(1, (N - 1) // 2))
    p = uniform_profile(TorusShape(N, d), W)
    assert np.allclose(p.matrix.sum(axis=1), 1.0, atol=1e-14)
    rep = check_profile(p, *uniform_constants(W, d))
    assert rep.ok, rep


def test_check_profile_flags_negative_and_rowsum():
    sh = TorusShape(8, 1)
    S = np.array(uniform_profile(sh, 1).matrix)
    S[0, 1] = S[1, 0] = -0.1
    rep = check_profile(dense_profile(sh, 1, S), 1 / 3, 1.0)
    assert not rep.lower_ok
    S = np.array(uniform_profile(sh, 1).matrix)
    S[0, 0] += 0.2
    rep = check_profile(dense_profile(sh, 1, S, zeta=0.1), 1 / 3, 1.0)
    assert rep.rowsum_slack == pytest.approx(0.2)
    assert not rep.rowsum_ok


def test_fft_apply_matches_dense():
    p = uniform_profile(TorusShape(7, 2), 2)
    v = np.random.default_rng(0).standard_normal((49, 3)) + 1j
    assert np.allclose(p.apply(v), p.matrix @ v, atol=1e-13)


def test_sample_structure_and_determinism():
    p = uniform_profile(TorusShape(16, 1), 3)
    a = sample(p, "gaussian", 11)
    b = sample(p, "gaussian", 11)
    assert np.array_equal(a.H, b.H)
    assert np.array_equal(a.H, a.H.T)
    assert np.all(a.H[p.matrix == 0] == 0)
    assert not np.array_equal(a.H, sample(p, "gaussian", 12).H)
    with pytest.raises(ValueError):
        a.H[0, 0] = 1.0


@pytest.mark.parametrize("dist", list(EntryDistribution))
def test_entry_moments(dist):
    n = 10_000
    xi = dist.draw(5, np.full(n, 3), np.full(n, 4), np.arange(n))
    assert abs(xi.mean()) < 5 / np.sqrt(n)
    assert abs(xi.var() - 1) < 0.1


def test_entry_mean_and_variance_over_resamples():
    p = uniform_profile(TorusShape(8, 1), 1)
    smp = sample(p, "gaussian", 3)
    rows = resample_row(smp, 0, np.arange(1, 10_001))
    s = p.matrix[0, 1]
    assert abs(rows[:, 1].mean()) < 5 * np.sqrt(s / 10_000)
    assert abs(rows[:, 1].var() / s - 1) < 0.1


def test_resample_stream_zero_reproduces_row():
    p = uniform_profile(TorusShape(10, 2), 2)
    smp = sample(p, "rademacher", 9)
    for x in (0, 17, 99):
        assert np.array_equal(resample_row(smp, x, 0)[0], smp.H[x])


def test_counter_hash_is_order_free():
    a = counter_hash(1, np.arange(5), 3)
    b = np.array([counter_hash(1, i, 3) for i in range(5)])
    assert np.array_equal(a, b)
    assert derive_seed(1, 2) != derive_seed(2, 1)
    assert 0 <= derive_seed(7) < 2 ** 63


def test_dump_round_trip(tmp_path):
    smp = sample(uniform_profile(TorusShape(6, 2), 1), "uniform", 4)
    bin_path, meta_path = dump(smp, tmp_path / "h")
    assert bin_path.stat().st_size == 36 * 36 * 8
    H, meta = load_dump(tmp_path / "h")
    assert np.array_equal(H, smp.H)
    assert meta == {"N": 6, "d": 2, "W": 1, "seed": 4, "dist": "uniform"}
    assert json.loads(meta_path.read_text())["dist"] == "uniform"


def test_sparsity_bound():
    p = uniform_profile(TorusShape(12, 2), 2)
    smp = sample(p, "gaussian", 1)
    assert np.count_nonzero(smp.H) <= 144 * 5 ** 2
