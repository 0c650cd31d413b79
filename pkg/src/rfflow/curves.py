"""Training and test error curves of the gradient flow, and their limits."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import (
    SpectralMeasure1D,
    SpectralMeasure2D,
    locate_bands,
    measure_pair_2d,
    measures_1d,
)
from .model import ModelConfig
from .stieltjes import (
    one_point_derivative,
    solve_negative_real,
    solve_one_point,
    solve_two_point,
)

__all__ = [
    "AnalyticMeasures",
    "ErrorCurve",
    "LimitErrors",
    "extract_measures",
    "time_kernel",
    "g_bar",
    "l_bar",
    "h_bar",
    "error_curve",
    "test_error",
    "train_error",
    "limit_errors",
    "write_curve",
    "log_times",
]

SERIES_CUTOFF = 1e-4


@dataclass(frozen=True)
class AnalyticMeasures:
    K: SpectralMeasure1D
    L0: SpectralMeasure1D
    V: SpectralMeasure1D
    H0: SpectralMeasure2D
    W: SpectralMeasure2D
    g1: SpectralMeasure1D


@dataclass(frozen=True)
class ErrorCurve:
    times: np.ndarray
    test: np.ndarray
    train: np.ndarray
    g: np.ndarray | None = None
    h: np.ndarray | None = None
    l: np.ndarray | None = None  # noqa: E741


@dataclass(frozen=True)
class LimitErrors:
    test_inf: float
    train_inf: float
    dV: float
    dV_fd: float
    dV_gap: float
    K: float
    W: float
    V: float


def extract_measures(config: ModelConfig, grid_points: int = 200, grid_points_2d: int = 200,
                     offset: float | None = None, offsets_2d=None) -> AnalyticMeasures:
    """All five measures (plus the spectral one) on a shared support."""
    bands = locate_bands(config)
    one = measures_1d(config, ("g1", "K", "L0", "V"), grid_points, offset, bands=bands)
    two = measure_pair_2d(config, grid_points_2d, offsets_2d, bands=bands)
    return AnalyticMeasures(one["K"], one["L0"], one["V"], two["H0"], two["W"], one["g1"])


def time_kernel(omega, t, delta):
    """``(1 - exp(-t (omega + delta))) / (omega + delta)``, series near zero."""
    omega = np.asarray(omega, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    a = omega + delta
    z = t * a
    small = np.abs(z) < SERIES_CUTOFF
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        direct = -np.expm1(-z) / a
    series = t * (1.0 - z / 2.0 + z * z / 6.0 - z**3 / 24.0)
    out = np.where(small, series, direct)
    return out if out.ndim else float(out)


def _kernel_rows(times, delta, kind):
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if kind == "gamma":
        return lambda u: time_kernel(np.asarray(u)[None, :], times[:, None], delta)
    if kind == "gamma2":
        return lambda u: time_kernel(np.asarray(u)[None, :], 2.0 * times[:, None], delta)
    if kind == "decay":
        return lambda u: np.exp(-times[:, None] * (np.asarray(u)[None, :] + delta))
    if kind == "decay2":
        return lambda u: np.exp(-2.0 * times[:, None] * (np.asarray(u)[None, :] + delta))
    raise ValueError(kind)


def _integrate_1d(measure: SpectralMeasure1D, rows) -> np.ndarray:
    k = rows(measure.grid)
    k0 = rows(np.zeros(1))[:, 0]
    return k @ (measure.weights * measure.density) + measure.atom0 * k0


def _integrate_2d(measure: SpectralMeasure2D, rows) -> np.ndarray:
    ku = rows(measure.grid_u) * measure.weights_u
    kv = rows(measure.grid_v) * measure.weights_v
    k0 = rows(np.zeros(1))[:, 0]
    total = np.einsum("ti,ij,tj->t", ku, measure.density, kv)
    total = total + measure.corner_atom * k0**2
    if measure.edge_density.size:
        total = total + k0 * (ku @ measure.edge_density)
    if measure.diagonal_density is not None:
        total = total + (ku * rows(measure.grid_u)) @ measure.diagonal_density
    return total


def g_bar(t, rhoK: SpectralMeasure1D, config: ModelConfig):
    """Overlap of the learned and teacher directions."""
    out = _integrate_1d(rhoK, _kernel_rows(t, config.delta, "gamma"))
    return out if np.ndim(t) else float(out[0])


def l_bar(t, rhoL0: SpectralMeasure1D, rhoV: SpectralMeasure1D, config: ModelConfig):
    """Squared norm of the readout weights per feature."""
    init = _integrate_1d(rhoL0, _kernel_rows(t, config.delta, "decay2"))
    # gamma_t squared, as a kernel in one variable
    times = np.atleast_1d(np.asarray(t, dtype=float))

    def sq(u):
        return time_kernel(np.asarray(u)[None, :], times[:, None], config.delta) ** 2

    out = init + _integrate_1d(rhoV, sq)
    return out if np.ndim(t) else float(out[0])


def h_bar(t, rhoH0: SpectralMeasure2D, rhoW: SpectralMeasure2D, config: ModelConfig):
    """Squared norm of the weights mapped back to input space."""
    init = _integrate_2d(rhoH0, _kernel_rows(t, config.delta, "decay"))
    out = init + _integrate_2d(rhoW, _kernel_rows(t, config.delta, "gamma"))
    return out if np.ndim(t) else float(out[0])


def _train_values(times, config: ModelConfig, measures: AnalyticMeasures) -> np.ndarray:
    delta = config.delta
    times = np.atleast_1d(np.asarray(times, dtype=float))
    decay = _kernel_rows(times, delta, "decay2")

    def weighted(u):
        return (np.asarray(u)[None, :] + delta) * decay(u)

    init = _integrate_1d(measures.L0, weighted)
    fit = _integrate_1d(measures.V, _kernel_rows(times, delta, "gamma2"))
    return 1.0 + config.s**2 + (init - fit) / config.c


def error_curve(times, config: ModelConfig, measures: AnalyticMeasures) -> ErrorCurve:
    """Test and training errors with their components at each time."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0):
        raise ValueError("times must be nonnegative")
    g = g_bar(times, measures.K, config)
    h = h_bar(times, measures.H0, measures.W, config)
    l = l_bar(times, measures.L0, measures.V, config)  # noqa: E741
    test = 1.0 + config.s**2 - 2.0 * config.mu * g + config.mu**2 * h + config.nu**2 * l
    train = _train_values(times, config, measures)
    return ErrorCurve(times, test, train, g, h, l)


def test_error(times, config: ModelConfig, measures: AnalyticMeasures) -> np.ndarray:
    return error_curve(times, config, measures).test


def train_error(times, config: ModelConfig, measures: AnalyticMeasures) -> np.ndarray:
    return _train_values(times, config, measures)


def _V_real(x: float, config: ModelConfig) -> float:
    g1, h4, _ = solve_negative_real(np.array([x]), config)
    return float(config.s**2 * (1.0 + x * g1[0]) + config.c - h4[0])


def limit_errors(config: ModelConfig) -> LimitErrors:
    """Errors at infinite training time, evaluated at ``x = -delta``."""
    delta = config.delta
    if not delta > 0:
        raise ValueError("limit_errors needs lambda > 0 (the ridgeless limit is unsupported)")
    x = -delta
    sol = solve_one_point(x, config)
    two = solve_two_point(x, x, sol, sol, config)
    s2, c = config.s**2, config.c
    K = sol.t1.real
    W = (s2 * c * two.q4 + two.q2).real
    V = (s2 * (1.0 + x * sol.g1) + c - sol.h4).real
    dg1, dh4, _ = one_point_derivative(sol, config)
    dV = (s2 * (sol.g1 + x * dg1) - dh4).real
    step = 1e-5 * delta
    dV_fd = (_V_real(x + step, config) - _V_real(x - step, config)) / (2.0 * step)
    gap = abs(dV - dV_fd) / max(abs(dV), 1e-300)
    test = 1.0 + s2 - 2.0 * config.mu * K + config.mu**2 * W + config.nu**2 * dV
    train = 1.0 + s2 - V / c
    return LimitErrors(float(test), float(train), float(dV), float(dV_fd), float(gap),
                       float(K), float(W), float(V))


def write_curve(curve: ErrorCurve, path, *, components: bool = True) -> None:
    """CSV with header ``t,train,test[,g,h,l]`` in full precision."""
    cols = [curve.times, curve.train, curve.test]
    header = ["t", "train", "test"]
    if components and curve.g is not None:
        cols += [curve.g, curve.h, curve.l]
        header += ["g", "h", "l"]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def log_times(t_min: float, t_max: float, count: int) -> np.ndarray:
    """Log-spaced time grid."""
    if t_min <= 0 or t_max < t_min or count < 1:
        raise ValueError("need 0 < t_min <= t_max and count >= 1")
    return np.geomspace(t_min, t_max, count)

