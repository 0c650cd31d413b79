"""End-to-end acceptance checks, one test per numbered criterion.

Each test records a PASS/FAIL line through the ``criterion`` fixture; the
lines are printed in the terminal summary.  Thresholds are fixed here and
never tuned to the outcome.
"""
import math
import time

import numpy as np
import pytest
from scipy import signal

from conftest import DESK, EPOCH_BUMP, MP, RIDGE_PSI, mp_density, mp_stieltjes
from rfflow import cli
from rfflow.config import RunConfig
from rfflow.curves import error_curve, extract_measures, limit_errors
from rfflow.density import atom_weight, density_1d
from rfflow.model import ModelConfig
from rfflow.pencil import verify
from rfflow.simulator import (
    aggregate,
    empirical_errors,
    gram_eigenvalues,
    ridge_sweep,
    sample_instance,
    simulate_curves,
)
from rfflow.stieltjes import (
    one_point_residuals,
    solve_one_point,
    solve_one_point_array,
    solve_two_point,
    two_point_residuals,
)

TRIPLE = ModelConfig(10.0, 1.0, 2.0, 1.0, 1.0, 0.5, 0.01)
SEEDS = range(10)


def _bump(times, values, window, margin):
    """Most prominent interior local maximum inside ``window``; ``(found, index, prominence)``.

    A peak counts when its prominence exceeds ``margin`` (scalar or per point).
    """
    peaks, props = signal.find_peaks(values, prominence=0)
    margin = np.broadcast_to(margin, values.shape)
    keep = [(p, pr) for p, pr in zip(peaks, props["prominences"])
            if window[0] <= times[p] <= window[1] and pr > margin[p]]
    if not keep:
        return False, int(np.argmax(values)), 0.0
    p, pr = max(keep, key=lambda item: item[1])
    return True, int(p), float(pr)


def test_criterion_1_marchenko_pastur(criterion):
    start = time.perf_counter()
    xs = np.linspace(0.01, 7.0, 100) + 1e-6j
    g1, _, _ = solve_one_point_array(xs, MP)
    stieltjes_err = float(np.max(np.abs(g1 - np.array([mp_stieltjes(x, MP.c) for x in xs]))))
    m = density_1d("g1", MP)
    density_err = float(np.max(np.abs(m.density - mp_density(m.grid, MP.c))))
    elapsed = time.perf_counter() - start
    ok = stieltjes_err < 1e-8 and density_err < 1e-3 and elapsed < 10
    criterion(1, ok, f"transform err {stieltjes_err:.1e} (<1e-8), density err {density_err:.1e} (<1e-3), "
                     f"{elapsed:.1f}s (<10s)")
    assert ok


def test_criterion_2_fixed_point_residuals(criterion):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst_one = worst_two = worst_sym = 0.0
    for _ in range(500):
        cfg = ModelConfig(rng.uniform(0, 2), rng.uniform(0.05, 1.5), rng.uniform(0.3, 5), rng.uniform(0.3, 5),
                          rng.uniform(0, 2), rng.uniform(0, 1), rng.uniform(0, 0.1))
        width = cfg.spectrum_bound()
        x = complex(rng.uniform(-0.5, 1.2) * width, 10 ** rng.uniform(-3, 1))
        y = complex(rng.uniform(-0.5, 1.2) * width, 10 ** rng.uniform(-3, 1))
        sx, sy = solve_one_point(x, cfg), solve_one_point(y, cfg)
        worst_one = max(worst_one, np.abs(one_point_residuals(sx, cfg)).max(),
                        np.abs(one_point_residuals(sy, cfg)).max())
        xy, yx = solve_two_point(x, y, sx, sy, cfg), solve_two_point(y, x, sy, sx, cfg)
        worst_two = max(worst_two, np.abs(two_point_residuals(xy, sx, sy, cfg)).max(),
                        np.abs(two_point_residuals(yx, sy, sx, cfg)).max())
        worst_sym = max(worst_sym, np.abs(xy.as_array() - yx.as_array()).max())
    elapsed = time.perf_counter() - start
    ok = worst_one < 1e-10 and worst_two < 1e-10 and worst_sym < 1e-10 and elapsed < 60
    criterion(2, ok, f"500 points: one-point {worst_one:.1e}, two-point {worst_two:.1e}, "
                     f"swap {worst_sym:.1e} (all <1e-10), {elapsed:.1f}s (<60s)")
    assert ok


def test_criterion_3_initial_anchors(criterion):
    parts = []
    ok = True
    for label, cfg in (("desk", DESK), ("ridge-psi", RIDGE_PSI), ("epoch-bump", EPOCH_BUMP)):
        curve = error_curve([0.0], cfg, extract_measures(cfg))
        want_test = 1 + cfg.s**2 + cfg.r**2 * (cfg.mu**2 + cfg.nu**2)
        want_train = 1 + cfg.s**2 + cfg.r**2 * (cfg.lam + cfg.mu**2 + cfg.nu**2)
        sims = []
        for seed in SEEDS:
            inst = sample_instance(2000, cfg, seed=seed)
            tr, te = empirical_errors(inst, cfg, inst.a0)
            sims.append((tr[0], te[0]))
            del inst
        sims = np.array(sims)
        mean, std = sims.mean(0), sims.std(0, ddof=1)
        analytic_ok = abs(curve.test[0] - want_test) < 5e-3 and abs(curve.train[0] - want_train) < 5e-3
        sim_ok = abs(mean[0] - curve.train[0]) <= 2 * std[0] and abs(mean[1] - curve.test[0]) <= 2 * std[1]
        ok &= analytic_ok and sim_ok
        parts.append(f"{label}: analytic {curve.train[0]:.4f}/{curve.test[0]:.4f} vs "
                     f"{want_train:.4f}/{want_test:.4f}, sim {mean[0]:.3f}+-{std[0]:.3f}/{mean[1]:.3f}+-{std[1]:.3f}")
    criterion(3, ok, "train/test at t=0; " + "; ".join(parts))
    assert ok


def test_criterion_4_full_curve(criterion):
    start = time.perf_counter()
    times = np.geomspace(1e-2, 1e2, 40)
    curve = error_curve(times, DESK, extract_measures(DESK))
    agg = aggregate(simulate_curves(DESK, 1000, SEEDS, times))
    mean_tr = np.array([a["train_mean"] for a in agg])
    mean_te = np.array([a["test_mean"] for a in agg])
    std_tr = np.array([a["train_std"] for a in agg])
    std_te = np.array([a["test_std"] for a in agg])
    z_tr = np.abs(curve.train - mean_tr) / std_tr
    z_te = np.abs(curve.test - mean_te) / std_te
    elapsed = time.perf_counter() - start
    inside = int(np.sum(z_tr <= 2) + np.sum(z_te <= 2))
    ok = inside == 80 and elapsed < 15 * 60
    criterion(4, ok, f"{inside}/80 analytic points inside 2 sigma (max |z| train {z_tr.max():.2f}, "
                     f"test {z_te.max():.2f}), {elapsed:.0f}s (<900s)")
    assert ok


def test_criterion_5_triple_descent(criterion):
    start = time.perf_counter()
    phis = np.geomspace(0.25, 8.0, 40)
    analytic = np.array([limit_errors(TRIPLE.replace(phi=p)).test_inf for p in phis])
    peaks = [i for i in range(1, len(phis) - 1) if analytic[i] > analytic[i - 1] and analytic[i] > analytic[i + 1]]

    def adjacent(target):
        k = np.searchsorted(phis, target)
        return {k - 1, k}

    structural = bool(adjacent(1.0) & set(peaks)) and bool(adjacent(2.0) & set(peaks))
    sims = np.array([[row["test"] for row in ridge_sweep(TRIPLE, phis, 2000, seed)] for seed in SEEDS])
    mean, std = sims.mean(0), sims.std(0, ddof=1)
    z = np.abs(mean - analytic) / std
    elapsed = time.perf_counter() - start
    ok = structural and np.all(z <= 2) and elapsed < 30 * 60
    criterion(5, ok, f"local maxima at phi={np.round(phis[peaks], 3).tolist()} (need cells next to 1 and 2: "
                     f"{structural}), {int(np.sum(z <= 2))}/40 sweep points within 2 sigma "
                     f"(max |z| {z.max():.2f}), {elapsed:.0f}s (<1800s)")
    assert ok


def test_criterion_6_epoch_bump(criterion):
    start = time.perf_counter()
    times = np.geomspace(1e-1, 1e6, 60)
    curve = error_curve(times, EPOCH_BUMP, extract_measures(EPOCH_BUMP))
    analytic_ok, ka, pa = _bump(times, curve.test, (1.0, 1e4), 0.0)
    agg = aggregate(simulate_curves(EPOCH_BUMP, 100, SEEDS, times))
    mean = np.array([a["test_mean"] for a in agg])
    se = np.array([a["test_std"] for a in agg]) / math.sqrt(len(SEEDS))
    sim_ok, ks, ps = _bump(times, mean, (1.0, 1e4), 2 * se)
    elapsed = time.perf_counter() - start
    ok = analytic_ok and sim_ok and elapsed < 10 * 60
    criterion(6, ok, f"analytic local max at t={times[ka]:.3g} (prominence {pa:.4f}); simulator mean local max "
                     f"at t={times[ks]:.3g} (prominence {ps:.4f}, needs >2 s.e. = {2 * se[ks]:.4f}); {elapsed:.0f}s (<600s)")
    assert ok


def test_criterion_7_limit_consistency(criterion, desk_measures):
    lim = limit_errors(DESK)
    late = error_curve([1e6], DESK, desk_measures)
    d_test = abs(late.test[0] - lim.test_inf)
    d_train = abs(late.train[0] - lim.train_inf)
    ok = d_test < 1e-3 and d_train < 1e-3 and lim.dV_gap < 1e-6
    criterion(7, ok, f"|curve(1e6) - limit| test {d_test:.1e}, train {d_train:.1e} (<1e-3); "
                     f"dV relative gap {lim.dV_gap:.1e} (<1e-6)")
    assert ok


def test_criterion_8_mass_rules(criterion, desk_measures):
    g1 = desk_measures.g1
    mass_err = abs(g1.mass - 1.0)
    parts = [f"g1 mass {g1.mass:.6f}"]
    ok = mass_err < 1e-3
    for c, (psi, phi) in ((0.5, (2.0, 1.0)), (2.0, (1.0, 2.0))):
        cfg = DESK.replace(psi=psi, phi=phi)
        want = max(0.0, 1.0 - c)
        atom = atom_weight("g1", cfg)
        vals = gram_eigenvalues(sample_instance(2000, cfg, seed=0))
        counted = float(np.mean(vals <= 1e-9 * vals.max()))
        ok &= abs(atom - want) < 1e-3 and abs(counted - want) < 1e-3
        parts.append(f"c={c}: atom {atom:.5f}, eigen count {counted:.5f}, expected {want}")
    criterion(8, ok, "; ".join(parts) + " (tol 1e-3)")
    assert ok


def test_criterion_9_pencil(criterion):
    start = time.perf_counter()
    x, y = 1 + 0.2j, 2 + 0.2j
    small = verify(DESK, x, y, 100, 20)
    large = verify(DESK, x, y, 400, 20)
    ratio = large.median_rel_err / small.median_rel_err
    elapsed = time.perf_counter() - start
    worst = max(large.entries, key=lambda e: e.rel_err)
    ok = large.max_rel_err < 0.05 and ratio < 0.75 and elapsed < 20 * 60
    criterion(9, ok, f"d=400 max rel err {large.max_rel_err:.3f} at {worst.block} (<0.05), median "
                     f"{small.median_rel_err:.4f} -> {large.median_rel_err:.4f} (ratio {ratio:.2f} <0.75), "
                     f"{elapsed:.0f}s (<1200s)")
    assert ok


def test_criterion_10_performance(criterion, tmp_path, capsys):
    start = time.perf_counter()
    curve = error_curve(np.geomspace(1e-2, 1e4, 200), RIDGE_PSI, extract_measures(RIDGE_PSI, 200, 200))
    one_curve = time.perf_counter() - start
    rc = RunConfig(mu=RIDGE_PSI.mu, nu=RIDGE_PSI.nu, psi=RIDGE_PSI.psi, phi=RIDGE_PSI.phi, r=RIDGE_PSI.r,
                   s=RIDGE_PSI.s, lam=RIDGE_PSI.lam, sweep_parameter="psi", sweep_start=0.5, sweep_stop=10.0,
                   sweep_count=30, times="logspace(0.01, 10000, 100)", directory=str(tmp_path))
    path = tmp_path / "mesh.ini"
    path.write_text(rc.to_ini())
    start = time.perf_counter()
    code = cli.main(["heatmap", "--config", str(path)])
    mesh = time.perf_counter() - start
    out = capsys.readouterr().out
    grid = np.genfromtxt(tmp_path / "rfflow_heatmap_test.csv", delimiter=",")
    ok = np.all(np.isfinite(curve.test)) and one_curve < 60 and code == 0 and grid.shape == (30, 100) and mesh < 3600
    failed = [line for line in out.splitlines() if line.startswith("failed cells")]
    criterion(10, ok, f"one curve {one_curve:.1f}s (<60s), 30x100 heatmap {mesh:.0f}s (<3600s), exit {code}, "
                      f"{failed[0] if failed else ''}")
    assert ok
