import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DESK, RIDGE_PSI
from rfflow.curves import (
    SERIES_CUTOFF,
    error_curve,
    extract_measures,
    g_bar,
    limit_errors,
    log_times,
    time_kernel,
    train_error,
    write_curve,
)


def test_kernel_at_zero_time():
    assert time_kernel(3.0, 0.0, 0.1) == 0.0


def test_kernel_at_removable_point():
    assert time_kernel(-0.1, 2.5, 0.1) == 2.5


def test_kernel_long_time():
    assert time_kernel(1.9, 1e4, 0.1) == pytest.approx(0.5, rel=1e-14)


def test_kernel_negative_time():
    with pytest.raises(ValueError):
        time_kernel(1.0, -1.0, 0.0)


@given(omega=st.floats(0, 50), t=st.floats(0, 1e4), delta=st.floats(1e-8, 1.0))
def test_kernel_matches_reference(omega, t, delta):
    a = omega + delta
    ref = t if t * a == 0 else -math.expm1(-t * a) / a
    assert time_kernel(omega, t, delta) == pytest.approx(ref, rel=1e-12, abs=1e-300)


@given(t=st.floats(1e-3, 1e3))
def test_kernel_continuous_at_series_switch(t):
    below = time_kernel(SERIES_CUTOFF * (1 - 1e-9) / t, t, 0.0)
    above = time_kernel(SERIES_CUTOFF * (1 + 1e-9) / t, t, 0.0)
    assert above == pytest.approx(below, rel=1e-11)


@settings(max_examples=40, deadline=None)
@given(omega=st.floats(0, 20), delta=st.floats(1e-6, 1.0), t1=st.floats(0, 100), t2=st.floats(0, 100))
def test_kernel_monotone_in_time(omega, delta, t1, t2):
    lo, hi = sorted((t1, t2))
    assert time_kernel(omega, lo, delta) <= time_kernel(omega, hi, delta) * (1 + 1e-14)


def test_initial_anchors(desk_measures):
    cfg = RIDGE_PSI
    curve = error_curve([0.0], cfg, extract_measures(cfg))
    expected = 1 + cfg.s**2 + cfg.r**2 * (cfg.mu**2 + cfg.nu**2)
    assert curve.test[0] == pytest.approx(expected, abs=1e-3)
    assert curve.g[0] == 0.0


def test_initial_anchor_without_init(desk_measures):
    cfg = DESK.replace(r=0.0, s=0.3)
    curve = error_curve([0.0], cfg, extract_measures(cfg))
    assert curve.test[0] == pytest.approx(1 + cfg.s**2, abs=1e-10)
    assert curve.train[0] == pytest.approx(1 + cfg.s**2, abs=1e-10)


def test_no_linear_part_means_no_overlap():
    cfg = DESK.replace(mu=0.0)
    g = g_bar(np.geomspace(0.01, 100, 20), extract_measures(cfg).K, cfg)
    assert np.all(np.abs(g) < 1e-12)


def test_curve_reaches_limit(desk_measures):
    lim = limit_errors(DESK)
    curve = error_curve([1e7], DESK, desk_measures)
    assert curve.test[0] == pytest.approx(lim.test_inf, abs=1e-3)
    assert curve.train[0] == pytest.approx(lim.train_inf, abs=1e-3)


def test_limit_derivative_consistent():
    assert limit_errors(DESK).dV_gap < 1e-5
    assert limit_errors(RIDGE_PSI).dV_gap < 1e-5


def test_limit_rejects_ridgeless():
    with pytest.raises(ValueError):
        limit_errors(DESK.replace(lam=0.0))


def test_affine_in_noise_variance():
    times = np.geomspace(0.01, 1000, 15)
    curves = [error_curve(times, DESK.replace(s=s), extract_measures(DESK.replace(s=s)))
              for s in (0.0, math.sqrt(0.5), 1.0)]
    for field in ("test", "train"):
        lo, mid, hi = (getattr(c, field) for c in curves)
        assert np.max(np.abs(mid - 0.5 * (lo + hi))) < 1e-8


def test_train_error_shortcut(desk_measures):
    times = np.geomspace(0.1, 100, 7)
    assert np.allclose(train_error(times, DESK, desk_measures), error_curve(times, DESK, desk_measures).train,
                       rtol=0, atol=1e-14)


def test_negative_times_rejected(desk_measures):
    with pytest.raises(ValueError):
        error_curve([-1.0], DESK, desk_measures)


def test_grid_refinement(desk_measures):
    times = np.geomspace(0.01, 1e4, 30)
    coarse = error_curve(times, DESK, desk_measures)
    fine = error_curve(times, DESK, extract_measures(DESK, 400, 400))
    assert np.max(np.abs(coarse.test - fine.test)) < 1e-3
    assert np.max(np.abs(coarse.train - fine.train)) < 1e-3


def test_write_curve(tmp_path, desk_measures):
    curve = error_curve(log_times(0.1, 10, 5), DESK, desk_measures)
    path = tmp_path / "c.csv"
    write_curve(curve, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,train,test,g,h,l"
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.array_equal(data[:, 2], curve.test)
    write_curve(curve, path, components=False)
    assert path.read_text().splitlines()[0] == "t,train,test"


@pytest.mark.parametrize("args", [(0, 1, 3), (2, 1, 3), (1, 2, 0)])
def test_log_times_validation(args):
    with pytest.raises(ValueError):
        log_times(*args)
