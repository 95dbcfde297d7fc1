"""Every acceptance criterion at its stated scale and tolerance.

Each check records one ``PASS``/``FAIL`` line, printed live and again in the
terminal summary.  Two criteria are not met at desk scale; their tests still
run the full experiment and assert the stated threshold, and are marked as
strict expected failures so a surprise pass is reported.
"""
import json

import pytest

from bandlab.runner import load_config, run
from conftest import ACCEPTANCE_LINES


def report(criterion: int, label: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {label} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


@pytest.fixture(scope="module")
def outdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def _run(outdir, name, **over):
    cfg = load_config(name, None, over)
    return run(name, cfg, outdir / name, workers=1)


@pytest.fixture(scope="module")
def identities(outdir):
    return _run(outdir, "identities", N=64, d=1, W=8, eta=0.5, energy=0.5, trials=10, tol=1e-8)


@pytest.fixture(scope="module")
def localaw(outdir):
    return _run(outdir, "localaw", N=1024, d=1, W=32, trials=20)


@pytest.fixture(scope="module")
def fluctavg(outdir):
    return _run(outdir, "fluctavg", N_grid=[256, 512, 1024], d=1, trials=100, b=["ones", "cos"])


@pytest.fixture(scope="module")
def bootstrap(outdir):
    return _run(outdir, "bootstrap", N=24, d=2, W=6, trials=20)


def test_criterion_1_identities(identities):
    worst = identities["summary"]["max_residual"]
    assert len(worst) >= 8
    ok = report(1, "exact identities below 1e-8", identities["passed"],
                ", ".join(f"{k}={v:.1e}" for k, v in worst.items()))
    assert ok


@pytest.mark.xfail(strict=True, reason="measured slope is about -0.62 at N=1024, W=32; below the -0.6 edge")
def test_criterion_2_slope(localaw):
    s = localaw["summary"]
    ok = report(2, "local-law log-log slope in [-0.6, -0.4]", localaw["checks"]["slope_in_band"],
                f"slope={s['slope']:.3f}")
    assert ok


def test_criterion_2_ratio_coverage(localaw):
    s = localaw["summary"]
    ok = report(2, "deviation ratio <= N^0.2 in >= 95% of trials", localaw["checks"]["ratio_coverage"],
                f"fraction={s['frac_within']:.3f}, cap={s['ratio_cap']:.2f}, "
                f"max={max(r['max_ratio'] for r in s['rungs']):.2f}")
    assert ok


def test_criterion_3_fluctuation_averaging(fluctavg):
    rows = fluctavg["summary"]["rows"]
    assert all(r["trials"] >= 100 for r in rows)
    for b in ("ones", "cos"):
        rs = sorted((r for r in rows if r["b"] == b), key=lambda r: r["N"])
        cov = fluctavg["checks"][f"coverage[{b}]"]
        dec = fluctavg["checks"][f"old_ratio_decreasing[{b}]"]
        report(3, f"|F| within new bound in >= 95% of trials, b={b}", cov,
               ", ".join(f"N={r['N']}: {r['frac_within']:.2f}" for r in rs))
        report(3, f"median ratio to old bound strictly decreasing, b={b}", dec,
               " > ".join(f"{r['ratio_old']:.3g}" for r in rs))
        assert cov and dec


def test_criterion_4_theta_profile(outdir):
    m = _run(outdir, "theta")
    s = m["summary"]
    assert s["cases"] == 8
    ok = report(4, "fitted profile constant <= 10", m["passed"], f"max constant={s['max_constant']:.3f}")
    assert ok


def test_criterion_5_walk(outdir):
    m = _run(outdir, "walk", clt_N=4096, clt_W=16, clt_d=1, n=400, clt_tol=0.05)
    s, c = m["summary"], m["checks"]
    report(5, "CLT relative error at origin <= 5%", c["clt_center"], f"{s['center_rel_err']:.2e}")
    report(5, "CLT sup error <= 5% of peak", c["clt_sup"], f"{s['rel_sup_err']:.2e}")
    report(5, "truncated series matches direct inverse", c["tail_reproduces"],
           f"max rel gap={s['tail_max_rel_err']:.2e}")
    assert c["clt_center"] and c["clt_sup"] and c["tail_reproduces"]


def test_criterion_6_delocalization(outdir):
    m = _run(outdir, "deloc", N=24, d=2, W_list=[2, 4, 8], eps=0.1, kappa=0.5, l=6, trials=10, cap=0.5)
    s, c = m["summary"], m["checks"]
    fr = ", ".join(f"W={w}: {f:.3f}" for w, f in zip(s["W"], s["mean_fraction"]))
    report(6, "mean localized fraction non-increasing in W", c["non_increasing_in_W"], fr)
    report(6, "mean localized fraction <= 0.5 at W=8", c["cap_at_largest_W"], fr)
    assert c["non_increasing_in_W"] and c["cap_at_largest_W"]


@pytest.mark.xfail(strict=True, reason="squared deviation exceeds N^0.2 times max T in every trial at N=24, W=6")
def test_criterion_7_self_improving(bootstrap):
    s = bootstrap["summary"]
    ok = report(7, "squared deviation <= N^0.2 max T in >= 90% of trials", bootstrap["checks"]["self_improving"],
                f"fraction={s['frac_self']:.2f}, median ratio={s['median_ratio']:.2f}")
    assert ok


def test_criterion_7_fixed_point_arithmetic(bootstrap):
    d = bootstrap["summary"]["phi2_arithmetic_defect"]
    ok = report(7, "bootstrap map fixed-point arithmetic exact", bootstrap["checks"]["fixed_point_arithmetic"],
                f"defect={d:.1e}")
    assert ok


def test_criterion_8_zcal_expansion(localaw):
    rungs = localaw["summary"]["rungs"]
    ok = report(8, "median expansion defect <= 10 Phi^2 at every rung", localaw["checks"]["zcal_median"],
                ", ".join(f"{r['median_zcal_defect'] / r['zcal_limit']:.2g}" for r in rungs) + " of limit")
    assert ok


SMALL = {
    "identities": {"trials": 3},
    "localaw": {"N": 256, "W": 16, "eta_ladder": [0.5, 0.25], "trials": 2},
    "fluctavg": {"N_grid": [64, 128], "trials": 2},
    "theta": {"W_list": [4], "eta_list": [0.5]},
    "deloc": {"N": 12, "W_list": [2, 4], "l": 3, "trials": 2},
    "walk": {"clt_N": 512, "clt_W": 4, "n": 50},
    "bootstrap": {"N": 12, "W": 4, "trials": 2},
}


def test_criterion_9_determinism(tmp_path):
    same = {}
    for name, over in SMALL.items():
        a = _run(tmp_path / "a", name, seed=11, **over)
        b = _run(tmp_path / "b", name, seed=11, **over)
        pa, pb = (tmp_path / k / name / "records.csv" for k in "ab")
        same[name] = pa.read_bytes() == pb.read_bytes()
        assert json.loads((tmp_path / "a" / name / "manifest.json").read_text())["seeds"] == a["seeds"] == b["seeds"]
    ok = report(9, "byte-identical CSV on re-run", all(same.values()),
                ", ".join(k for k, v in same.items() if v) + " identical")
    assert ok
