import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bandlab.delocalization import (BudgetError, DomainError, RegimeError, SpectralData, bootstrap_regime,
                                    bootstrap_trace, deloc_trial, eigendecompose, iterate_phi2, local_law_check,
                                    local_law_slope, localization_fraction, localization_sums, mass_profile,
                                    phi2_closed_form, phi2_fixed_point, phi2_map, spectral_resolvent,
                                    sup_norm_stat)
from bandlab.ensemble import BandSample, EntryDistribution, sample, uniform_profile
from bandlab.lattice import TorusShape
from bandlab.resolvent import resolvent
from bandlab.selfconsistent import SpectralParams, msc


def rand_sample(N=16, d=1, W=3, seed=0):
    return sample(uniform_profile(TorusShape(N, d), W), "gaussian", seed)


def test_zero_matrix_spectrum():
    sh = TorusShape(6, 1)
    sd = eigendecompose(np.zeros((6, 6)), sh)
    assert np.all(sd.eigenvalues == 0)
    assert np.allclose(sd.eigenvectors.T @ sd.eigenvectors, np.eye(6))


@given(a=st.floats(-3, 3), b=st.floats(0.05, 3), c=st.floats(-3, 3))
def test_two_by_two_closed_form(a, b, c):
    H = np.array([[a, b], [b, c]])
    sd = eigendecompose(H, TorusShape(2, 1))
    half, rad = (a + c) / 2, math.hypot((a - c) / 2, b)
    assert np.allclose(sd.eigenvalues, [half - rad, half + rad], atol=1e-12)
    for k, lam in enumerate(sd.eigenvalues):
        v = np.array([b, lam - a])
        v /= np.linalg.norm(v)
        v *= np.sign(v[0]) if abs(v[0]) > 1e-12 else np.sign(v[1])
        assert np.allclose(sd.eigenvectors[:, k], v, atol=1e-8)


def test_trace_reconstruction_and_signs():
    smp = rand_sample(32, 1, 4, 3)
    sd = eigendecompose(smp)
    assert sd.eigenvalues.sum() == pytest.approx(np.trace(smp.H), abs=1e-8)
    U, lam = sd.eigenvectors, sd.eigenvalues
    assert np.abs(smp.H - (U * lam) @ U.T).max() <= 1e-7
    assert np.abs(smp.H @ U - U * lam).max() <= 1e-8
    lead = np.argmax(np.abs(U) > 1e-12, axis=0)
    assert np.all(U[lead, np.arange(32)] > 0)
    assert np.all(np.diff(lam) >= 0)


def test_spectral_resolvent_matches_solve():
    smp = rand_sample(16, 2, 2, 1)
    params = SpectralParams(smp.shape, 0.3 + 0.2j)
    a = spectral_resolvent(eigendecompose(smp), params).G
    b = resolvent(smp, params).G
    assert np.abs(a - b).max() <= 1e-7


def test_budget():
    with pytest.raises(BudgetError):
        eigendecompose(rand_sample(16, 1, 3), budget=8)


def test_localization_sum_point_and_flat():
    sh = TorusShape(20, 1)
    e0 = np.zeros(20)
    e0[0] = 1
    assert localization_sums(e0, sh, 3)[0] == 0
    for N, d, l in ((20, 1, 3), (12, 2, 2)):
        sh = TorusShape(N, d)
        flat = np.full(sh.size, N ** (-d / 2))
        expected = N ** (d / 2) * math.sqrt(1 - (2 * l - 1) ** d / N ** d)
        assert localization_sums(flat, sh, l)[0] == pytest.approx(expected, rel=1e-12)


def artificial(U, lam, sh):
    return SpectralData(np.asarray(lam, float), np.asarray(U, float), sh)


def test_fraction_point_vs_flat():
    sh = TorusShape(20, 1)
    loc = artificial(np.eye(20), np.zeros(20), sh)
    assert localization_fraction(loc, 0.1, 0.5, 3) == 1.0
    flat = artificial(np.full((20, 1), 20 ** -0.5), [0.0], sh)
    assert localization_fraction(flat, 0.99, 0.5, 3) == 0.0
    # nothing in the bulk window
    assert localization_fraction(artificial(np.eye(20), np.full(20, 1.9), sh), 0.1, 0.5, 3) == 0.0
    with pytest.raises(ValueError):
        localization_fraction(loc, 0.1, 0.5, 10)
    with pytest.raises(ValueError):
        localization_fraction(loc, 0.1, 2.5, 3)


@given(e1=st.floats(0, 3), e2=st.floats(0, 3))
def test_fraction_monotone_in_eps(e1, e2):
    sd = eigendecompose(rand_sample(24, 1, 2, 5))
    lo, hi = sorted((e1, e2))
    assert localization_fraction(sd, lo, 0.5, 3) <= localization_fraction(sd, hi, 0.5, 3)


def test_sup_norm():
    sh = TorusShape(9, 2)
    assert sup_norm_stat(artificial(np.full((81, 1), 1 / 9), [0.0], sh)) == pytest.approx(1 / 9)
    assert sup_norm_stat(artificial(np.eye(81), np.zeros(81), sh)) == 1.0
    assert sup_norm_stat(artificial(np.eye(81), np.full(81, 3.0), sh)) is None


def test_sup_norm_scaling_d1():
    sups = [deloc_trial(512, 1, 128, s, l=6).supnorm for s in range(10)]
    assert np.median(sups) <= 512 ** -0.5 * 512 ** 0.25


def test_deloc_report_ranges():
    r = deloc_trial(24, 2, 4, 1)
    assert 0 <= r.fraction <= 1
    assert 24 ** -1 <= r.supnorm <= 1
    assert set(r.row()) == {"N", "d", "W", "seed", "eps", "kappa", "l", "fraction", "supnorm", "bulk_count"}


def test_mass_profile_full_window_and_monotone():
    smp = rand_sample(20, 1, 3, 2)
    params = SpectralParams(smp.shape, 0.2 + 0.3j)
    res = resolvent(smp, params)
    m = msc(params.z)
    vals = [mass_profile(res, m, 4, l) for l in range(0, 11)]
    assert np.all(np.diff(vals) >= -1e-15)
    assert vals[-1] == pytest.approx(res.G[4, 4].imag / m.imag, rel=1e-10)


def test_mass_profile_zero_matrix():
    prof = uniform_profile(TorusShape(10, 1), 1)
    smp = BandSample(prof.shape, prof, np.zeros((10, 10)), 0, EntryDistribution.GAUSSIAN)
    z = 0.4 + 0.3j
    res = resolvent(smp, SpectralParams(prof.shape, z))
    m = msc(z)
    for l in (0, 2, 5):
        assert mass_profile(res, m, 0, l) == pytest.approx(0.3 / m.imag / abs(z) ** 2)


def _quarter_window_masses(trials=20):
    sh = TorusShape(32, 2)
    prof = uniform_profile(sh, 8)
    eta = 4 * 8 ** 2 / 32 ** 2
    params = SpectralParams(sh, complex(0.5, eta))
    m = msc(params.z)
    out = []
    for s in range(trials):
        res = resolvent(sample(prof, "gaussian", s), params)
        out.append((mass_profile(res, m, 0, 8), mass_profile(res, m, 0, 16)))
    return np.array(out)


@pytest.fixture(scope="module")
def quarter_window():
    return _quarter_window_masses()


def test_mass_profile_not_concentrated_d2(quarter_window):
    part, full = quarter_window.T
    # the quarter window holds a clear minority of what a point mass would put there
    assert np.all(part < 0.8 * full)


@pytest.mark.xfail(strict=True, reason="median is about 0.62 at N=32, W=8; the 0.5 cap needs larger N/W")
def test_mass_profile_quarter_window_cap(quarter_window):
    assert np.median(quarter_window[:, 0]) <= 0.5


def test_local_law_check_domain_and_zero():
    prof = uniform_profile(TorusShape(16, 1), 4)
    smp = BandSample(prof.shape, prof, np.zeros((16, 16)), 0, EntryDistribution.GAUSSIAN)
    z = 0.5 + 0.5j
    res = resolvent(smp, SpectralParams(prof.shape, z))
    m = msc(z)
    # G = -1/z while m solves m^2 + zm + 1 = 0, so the deviation is |m + 1/z|
    assert local_law_check(res, m, 4, 1, 0.5) == pytest.approx(abs(m + 1 / z) * math.sqrt(2))
    assert local_law_check(res, -1 / z, 4, 1, 0.5) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(DomainError):
        local_law_check(res, m, 4, 1, 0.1)


def test_local_law_slope_power_law():
    x = np.repeat([1.0, 2.0, 4.0, 8.0], 3)
    assert local_law_slope(x, 3 * x ** -0.5) == pytest.approx(-0.5)
    with pytest.raises(ValueError):
        local_law_slope([1.0, 1.0], [1.0, 2.0])


def test_phi2_map_fixed_point():
    W, d = 6, 2
    fp = phi2_fixed_point(W, d)
    assert fp == pytest.approx(W ** -1 / (1 - W ** -0.05))
    assert phi2_map(fp, W, d) == pytest.approx(fp, rel=1e-15)
    orbit = iterate_phi2(W, d)
    assert abs(orbit[-1] - fp) <= 1e-12
    # geometric convergence: O(log(1/tol) / delta) steps
    r = W ** -0.05
    assert orbit.size - 1 <= math.ceil(math.log(1e-12 * (1 - r) / abs(1 - fp)) / math.log(r)) + 2
    assert np.allclose(orbit, phi2_closed_form(np.arange(orbit.size), W, d), atol=1e-12, rtol=0)
    assert iterate_phi2(W, d, steps=3).size == 4


def test_bootstrap_regime():
    assert bootstrap_regime(24, 6, 2)
    assert not bootstrap_regime(64, 4, 1)
    assert not bootstrap_regime(64, 2, 2)
    with pytest.raises(RegimeError):
        bootstrap_trace(64, 1, 4, 0.5, [0])


def test_bootstrap_records():
    recs, summ = bootstrap_trace(12, 2, 4, 0.5, [1, 2])
    assert summ.trials == 2
    for r in recs:
        assert r["dev2"] == pytest.approx(r["dev"] ** 2)
        assert r["tmax"] > 0
