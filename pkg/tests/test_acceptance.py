"""The ten acceptance criteria, each at its stated tolerance and runtime cap.

Every test records a one-line verdict (printed in the terminal summary) before
asserting, so failing criteria still report their measured values.
"""
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from fedmobile import analysis as A
from fedmobile.config import ExperimentConfig
from fedmobile.experiment import build_world, run_all, run_sweep, run_variant
from fedmobile.learning import gen_synthetic, gradient_probes
from fedmobile.simulator import VariantKind, VariantSpec


def record(n, ok, detail):
    ACCEPTANCE_LINES[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[n])


@pytest.fixture(scope="module")
def default_cfg():
    return ExperimentConfig(audit=False)


def fmt(d):
    return ", ".join(f"{k}={v:.4f}" for k, v in d.items())


def test_criterion_01_staleness_bounds():
    t0 = time.perf_counter()
    cfg = ExperimentConfig(rho=1.0, horizon=1000, seeds=(0,), audit=False)
    v = VariantSpec(VariantKind.FEDMOBILE, theta=25, Theta=25, omega=25, Omega=25)
    m = run_variant(cfg, v, 0, strict=False)
    elapsed = time.perf_counter() - t0
    C, D = m.bounds
    v1, v2 = len(m.upload_bound_violations), len(m.download_bound_violations)
    ok = (C, D) == (25, 25) and v1 == 0 and v2 == 0 and elapsed < 10
    record(1, ok, f"C=D={C}; flagged (slot, client) cells up={int(m.upload_flag.sum())} "
                  f"down={int(m.download_flag.sum())}; violations {v1}/{v2}; {elapsed:.1f}s < 10s")
    assert (C, D) == (25, 25)
    assert v1 == 0 and v2 == 0
    assert elapsed < 10


def test_criterion_02_conservation_exactly_once():
    cfg = ExperimentConfig(horizon=1000, seeds=(0,), audit=True)
    world = build_world(cfg, 0)
    variants = [VariantSpec(k) for k in VariantKind]
    variants.append(VariantSpec(VariantKind.FEDMOBILE_U, k_up=3, name="FEDMOBILE_U_K3"))
    variants.append(VariantSpec(VariantKind.FEDMOBILE, k_up=3, k_down=3, name="FEDMOBILE_K3"))
    worst, once, relays = 0.0, True, 0
    for v in variants:
        m = run_variant(cfg, v, 0, world)
        worst = max(worst, m.conservation_max)
        once &= m.exactly_once
        if v.k_up == 3:
            relays += int(m.upload_relays.sum())
    ok = worst <= 1e-9 and once and relays > 0
    record(2, ok, f"{len(variants)} runs, max rel err {worst:.2e} <= 1e-9; exactly-once={once}; "
                  f"K_up=3 upload relays={relays}")
    assert worst <= 1e-9
    assert once
    assert relays > 0


def test_criterion_03_rho_zero_reduction(default_cfg):
    cfg = replace(default_cfg, rho=0.0)
    same = []
    for s in cfg.seeds:
        world = build_world(cfg, s)
        a = run_variant(cfg, VariantSpec(VariantKind.ASYNC), s, world).loss
        f = run_variant(cfg, VariantSpec(VariantKind.FEDMOBILE), s, world).loss
        same.append(a.tobytes() == f.tobytes())
    record(3, all(same), f"bit-identical per seed {same}")
    assert all(same)


def test_criterion_04_window_scan():
    t0 = time.perf_counter()
    rep = A.prop1_scan(50)
    elapsed = time.perf_counter() - t0
    c, d = rep["C"], rep["D"]
    n_bad = len(c.violations) + len(d.violations)
    ok = (c.pairs_scanned == d.pairs_scanned == 1326 and c.min_value == d.min_value == 25
          and c.argmin == d.argmin == [(25, 25)] and n_bad == 0 and elapsed < 1)
    record(4, ok, f"{c.pairs_scanned} pairs, min C={c.min_value} D={d.min_value} at (25, 25), "
                  f"counterexamples={n_bad}, {elapsed:.3f}s < 1s")
    assert ok


def test_criterion_05_q_oracle():
    t0 = time.perf_counter()
    rows = A.q_grid(kinds=("upload", "download"), rhos=(0.1, 0.3, 0.7),
                    windows=((20, 30), (10, 40), (0, 50)), interval=50, trials=100_000, seed=0)
    elapsed = time.perf_counter() - t0
    zs = np.array([r.z for r in rows])
    ok = len(rows) >= 9 and bool(np.all(zs <= 3)) and elapsed < 30
    record(5, ok, f"{len(rows)} grid points x 100000 trials, max z={zs.max():.2f} <= 3, {elapsed:.1f}s < 30s")
    assert len(rows) >= 9
    assert np.all(zs <= 3), [(r.kind, r.rho, r.lo, r.hi, r.z) for r in rows if r.z > 3]
    assert elapsed < 30


@pytest.fixture(scope="module")
def variant_runs(default_cfg):
    t0 = time.perf_counter()
    res = run_all(default_cfg)
    elapsed = time.perf_counter() - t0
    final = {
        v.label: float(np.mean([res[(v.label, s)].final_loss for s in default_cfg.seeds]))
        for v in default_cfg.variants
    }
    return res, final, elapsed


def test_criterion_06_variant_ordering(variant_runs):
    _, f, elapsed = variant_runs
    checks = {
        "FM<=FM-U": f["FEDMOBILE"] <= f["FEDMOBILE_U"],
        "FM-U<=ASYNC": f["FEDMOBILE_U"] <= f["ASYNC"],
        "FM<=FM-D": f["FEDMOBILE"] <= f["FEDMOBILE_D"],
        "FM-D<=ASYNC": f["FEDMOBILE_D"] <= f["ASYNC"],
        "V-U<ASYNC": f["VIRTUAL_U"] < f["ASYNC"],
        "V-D<ASYNC": f["VIRTUAL_D"] < f["ASYNC"],
    }
    ok = all(checks.values()) and elapsed < 60
    failed = [k for k, v in checks.items() if not v]
    record(6, ok, f"mean final loss {fmt(f)}; failed: {failed or 'none'}; {elapsed:.1f}s < 60s")
    assert elapsed < 60
    assert not failed, f"ordering violated: {failed}; {fmt(f)}"


def test_criterion_07_window_tradeoff(default_cfg):
    up = run_sweep(default_cfg, "upload_window", values=[[0, 10], [20, 30], [40, 50]]).mean_final()
    down = run_sweep(default_cfg, "download_window", values=[[0, 10], [20, 30], [40, 50]]).mean_final()
    up_ok = min(up, key=up.get) == "20-30"
    down_ok = min(down, key=down.get) == "20-30"
    record(7, up_ok and down_ok, f"upload ({default_cfg.sweeps['upload_window']['variant']}) {fmt(up)} "
                                 f"middle best={up_ok}; download ({default_cfg.sweeps['download_window']['variant']}) "
                                 f"{fmt(down)} middle best={down_ok}")
    assert up_ok, f"upload sweep: {up}"
    assert down_ok, f"download sweep: {down}"


def test_criterion_08_mobility_trend(default_cfg):
    res = run_sweep(default_cfg, "rho", values=[0.0, 0.2, 0.5, 1.0]).mean_final()
    vals = [res[k] for k in ("0.0", "0.2", "0.5", "1.0")]
    ok = all(b <= a for a, b in zip(vals, vals[1:]))
    record(8, ok, f"FEDMOBILE mean final loss over rho: {fmt(res)}")
    assert ok


def test_criterion_09_gradient_finite_difference():
    task = gen_synthetic(50, 200, 40, 0.1, seed=0)
    errs = gradient_probes(task, 100, 5, seed=0)
    ok = len(errs) == 100 and errs.max() <= 1e-5
    record(9, ok, f"100 probes, max rel err {errs.max():.2e} <= 1e-5")
    assert ok


def test_criterion_10_bound_calculator():
    p = A.BoundParams(25, 25, 25, 25, 50, L=1.0, G=1.0, sigma=1.0, eta=1.0, T=100, N=10, f0_minus_fstar=1.0)
    bound = A.theorem1_bound(p)
    small = replace(p, T=1000, N=10)
    big = replace(small, T=4000, N=40)
    s, b = A.theorem1_tuned_terms(small), A.theorem1_tuned_terms(big)
    r1, r3 = b[0] / s[0], b[2] / s[2]
    ok = bound == 12500.24 and r1 == 0.25 and r3 == 0.25
    record(10, ok, f"bound={bound!r}; tuned first/third term ratios {r1!r}, {r3!r}")
    assert bound == 12500.24
    assert r1 == 0.25 and r3 == 0.25


# -------------------------------------------------- supplementary trend checks

def test_every_variant_reduces_loss(variant_runs):
    res, _, _ = variant_runs
    for (label, seed), m in res.items():
        assert m.loss[-1] < m.loss[0], (label, seed)


def test_fedmobile_beats_async(variant_runs):
    _, f, _ = variant_runs
    assert f["FEDMOBILE"] < f["ASYNC"]


def test_multi_relay_upload_trend(default_cfg):
    res = run_sweep(default_cfg, "k_up", values=[1, 2, 3]).mean_final()
    vals = [res["1"], res["2"], res["3"]]
    print(f"k_up sweep ({default_cfg.sweeps['k_up']['variant']}): {fmt(res)}")
    assert all(b <= a for a, b in zip(vals, vals[1:])), res
