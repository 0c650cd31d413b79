"""Algebraic fixed-point systems for the limiting Stieltjes transforms.

The one-point system links ``(g1, h4, t1)`` at a complex point ``x``; the
two-point system is linear in ``(q1, q2, q4, q5)`` once the one-point
solutions at ``x`` and ``y`` are known.  With ``w = c - 1 - x g1`` the
one-point equations read::

    t1 = mu psi g1 h4
    w (c - mu^2 phi g1 h4) = c h4
    1 = g1 (mu^2 h4 + nu^2 w - x)

Eliminating ``h4`` from the second equation leaves a polynomial of degree
at most four in ``g1``.  Its roots are the candidate solutions; the
physical branch is the one continuously connected to ``g1 ~ -1/x`` at
large ``|x|`` (Nevanlinna signs in the upper half-plane, real positive
values on the negative real axis).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import ModelConfig

__all__ = [
    "OnePointSolution",
    "TwoPointSolution",
    "TransformValues",
    "SolverError",
    "BranchSelectionError",
    "SolverDivergenceError",
    "DegeneratePointError",
    "solve_one_point",
    "solve_one_point_array",
    "solve_negative_real",
    "solve_two_point",
    "solve_two_point_array",
    "evaluate_transforms",
    "continuation_sweep",
    "one_point_residuals",
    "two_point_residuals",
    "two_point_matrix",
    "one_point_derivative",
    "anchor_height",
]

NEWTON_TOL = 1e-12
MAX_ITER = 200
MAX_HALVINGS = 40
# ratio between consecutive imaginary parts on a vertical descent path
DESCENT_RATIO = 0.6
NEGLIGIBLE = 1e-12


class SolverError(RuntimeError):
    """Base class of solver failures."""


class BranchSelectionError(SolverError):
    """No root satisfies the branch rule at the requested point."""


class SolverDivergenceError(SolverError):
    """Newton iteration stagnated; ``last`` holds the final iterate."""

    def __init__(self, msg, last=None):
        super().__init__(msg)
        self.last = last


class DegeneratePointError(SolverError):
    """The two-point linear system is numerically singular."""


@dataclass(frozen=True)
class OnePointSolution:
    x: complex
    g1: complex
    h4: complex
    t1: complex
    c: float
    mu: float

    @property
    def g3(self) -> complex:
        return (self.c - 1.0 - self.x * self.g1) / self.c

    @property
    def h1(self) -> complex:
        return 1.0 - self.mu * self.t1

    def conjugate(self) -> "OnePointSolution":
        return OnePointSolution(
            self.x.conjugate(), self.g1.conjugate(), self.h4.conjugate(),
            self.t1.conjugate(), self.c, self.mu,
        )


@dataclass(frozen=True)
class TwoPointSolution:
    x: complex
    y: complex
    q1: complex
    q2: complex
    q4: complex
    q5: complex

    def as_array(self) -> np.ndarray:
        return np.array([self.q1, self.q2, self.q4, self.q5])


@dataclass(frozen=True)
class TransformValues:
    """Limiting transforms at ``x`` (and ``(x, y)`` when two-point data is given)."""

    K: complex
    L0: complex
    V: complex
    H0: complex | None = None
    W: complex | None = None


def anchor_height(config: ModelConfig) -> float:
    """Imaginary part of the continuation anchor, far above the spectrum."""
    return max(10.0, 10.0 * config.scale * (1.0 + math.sqrt(config.c)) ** 2)


# --- one-point system -------------------------------------------------------


def _quartic(x, config: ModelConfig) -> np.ndarray:
    """Coefficients (highest degree first) of the polynomial in ``g1``.

    Shape ``(..., deg + 1)`` where ``deg`` is 4, 3 or 2 depending on which
    of ``mu``, ``nu`` vanish.
    """
    x = np.asarray(x, dtype=complex)
    mu2, nu2, phi, c = config.mu**2, config.nu**2, config.phi, config.c
    a = c - 1.0
    b = -x
    e1 = phi * (nu2 * a - x)
    e2 = phi * nu2 * b
    k0 = np.full_like(x, -c)
    k1 = mu2 * a * (c - phi) - c * (x - nu2 * a)
    k2 = mu2 * (a * e1 + b * (c - phi)) + c * nu2 * b
    k3 = mu2 * (a * e2 + b * e1)
    k4 = mu2 * b * e2
    coeffs = np.stack([k4, k3, k2, k1, k0], axis=-1)
    # a negligible mu (or nu) only sends the extra roots to infinity; the
    # final Newton polish uses the exact coefficients
    if mu2 <= NEGLIGIBLE * nu2:
        return coeffs[..., 2:]
    if nu2 <= NEGLIGIBLE * mu2:
        return coeffs[..., 1:]
    return coeffs


def _roots(coeffs: np.ndarray) -> np.ndarray:
    """Batched polynomial roots via companion-matrix eigenvalues."""
    deg = coeffs.shape[-1] - 1
    lead = coeffs[..., :1]
    monic = coeffs[..., 1:] / lead
    shape = coeffs.shape[:-1]
    comp = np.zeros(shape + (deg, deg), dtype=complex)
    comp[..., 0, :] = -monic
    if deg > 1:
        idx = np.arange(deg - 1)
        comp[..., idx + 1, idx] = 1.0
    return np.linalg.eigvals(comp)


def _track_roots(coeffs: np.ndarray, previous: np.ndarray, iters: int = 12) -> np.ndarray:
    """Roots continued from ``previous`` by Aberth-Ehrlich iterations.

    Rows that fail to settle fall back to the companion-matrix solve.
    """
    deg = coeffs.shape[-1] - 1
    z = previous.copy()
    done = np.zeros(z.shape[:-1], dtype=bool)
    off_diag = ~np.eye(deg, dtype=bool)
    for _ in range(iters):
        p = np.zeros_like(z)
        dp = np.zeros_like(z)
        for k in range(deg + 1):
            dp = dp * z + p
            p = p * z + coeffs[..., k:k + 1]
        ratio = p / dp
        diff = z[..., :, None] - z[..., None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(off_diag, 1.0 / np.where(off_diag, diff, 1.0), 0.0)
            corr = ratio / (1.0 - ratio * inv.sum(axis=-1))
        corr = np.where(np.isfinite(corr), corr, 0.0)
        z = z - corr
        done = np.all(np.abs(corr) <= 1e-14 * (1.0 + np.abs(z)), axis=-1)
        if done.all():
            break
    bad = ~done | ~np.all(np.isfinite(z), axis=-1)
    if bad.any():
        z[bad] = _roots(coeffs[bad])
    # coincident tracked roots mean two paths merged; recompute those rows
    gaps = np.where(np.eye(deg, dtype=bool), np.inf, np.abs(z[..., :, None] - z[..., None, :]))
    merged = gaps.min(axis=(-1, -2)) < 1e-9 * (1.0 + np.abs(z).max(axis=-1))
    if merged.any():
        z[merged] = _roots(coeffs[merged])
    return z


def _h4_of(g1, x, config: ModelConfig):
    c = config.c
    w = c - 1.0 - x * g1
    return c * w / (c + config.mu**2 * config.phi * g1 * w)


def _reduced(g1, x, config: ModelConfig):
    """Scalar equation F(g1) = 0 after eliminating h4, its derivative and scale.

    The scale ``1 + |g1 * inner|`` turns ``|F|`` into a relative residual.
    """
    c, mu2, nu2, phi = config.c, config.mu**2, config.nu**2, config.phi
    w = c - 1.0 - x * g1
    den = c + mu2 * phi * g1 * w
    h4 = c * w / den
    # dh4/dg1 with dw/dg1 = -x
    dden = mu2 * phi * (w - x * g1)
    dh4 = (c * (-x) * den - c * w * dden) / den**2
    inner = mu2 * h4 + nu2 * w - x
    f = 1.0 - g1 * inner
    df = -inner - g1 * (mu2 * dh4 - nu2 * x)
    return f, df, 1.0 + np.abs(g1) * (np.abs(mu2 * h4) + nu2 * np.abs(w) + np.abs(x))


def _newton(g1, x, config: ModelConfig, *, tol=NEWTON_TOL, maxiter=MAX_ITER):
    """Damped Newton on the reduced scalar equation (vectorized).

    Returns the iterate and its relative residual.
    """
    g1 = np.array(g1, dtype=complex, copy=True)
    x = np.broadcast_to(np.asarray(x, dtype=complex), g1.shape)
    f, df, sc = _reduced(g1, x, config)
    active = np.abs(f) > tol * sc
    for _ in range(maxiter):
        if not active.any():
            break
        step = np.zeros_like(g1)
        step[active] = f[active] / df[active]
        lam = np.ones(g1.shape)
        cur = np.abs(f)
        trial = g1 - step
        ft, dft, st = _reduced(trial, x, config)
        for _ in range(MAX_HALVINGS):
            bad = active & ~(np.abs(ft) < cur) & (np.abs(ft) > tol * st)
            if not bad.any():
                break
            lam[bad] *= 0.5
            trial[bad] = g1[bad] - lam[bad] * step[bad]
            ft[bad], dft[bad], st[bad] = _reduced(trial[bad], x[bad], config)
        accepted = active & ((np.abs(ft) < cur) | (np.abs(ft) <= tol * st))
        g1 = np.where(accepted, trial, g1)
        f = np.where(accepted, ft, f)
        df = np.where(accepted, dft, df)
        sc = np.where(accepted, st, sc)
        # rounding floor: the step is already below machine resolution
        tiny = np.abs(lam * step) <= 4e-16 * np.abs(g1)
        active = accepted & (np.abs(f) > tol * sc) & ~tiny
    return g1, np.abs(f) / sc


def _scaled_one_point_residual(x, g1, h4, t1, config: ModelConfig) -> np.ndarray:
    c, mu, nu, psi, phi = config.c, config.mu, config.nu, config.psi, config.phi
    w = c - 1.0 - x * g1
    r1 = mu * psi * g1 * h4 - t1
    s1 = np.abs(mu * psi * g1 * h4) + np.abs(t1)
    r2 = w * (c - mu**2 * phi * g1 * h4) - c * h4
    s2 = np.abs(w) * (c + np.abs(mu**2 * phi * g1 * h4)) + c * np.abs(h4)
    r3 = 1.0 - g1 * (mu**2 * h4 + w * nu**2 - x)
    s3 = 1.0 + np.abs(g1) * (np.abs(mu**2 * h4) + np.abs(w) * nu**2 + np.abs(x))
    res = np.stack([np.abs(r1) / np.maximum(s1, 1.0), np.abs(r2) / np.maximum(s2, 1.0),
                    np.abs(r3) / np.maximum(s3, 1.0)], axis=-1)
    return res.max(axis=-1)


def one_point_residuals(sol: OnePointSolution, config: ModelConfig) -> np.ndarray:
    """Raw residuals of the three one-point equations."""
    c, mu, nu, psi, phi = config.c, config.mu, config.nu, config.psi, config.phi
    x, g1, h4, t1 = sol.x, sol.g1, sol.h4, sol.t1
    w = c - 1.0 - x * g1
    return np.array([
        mu * psi * g1 * h4 - t1,
        w * (c - mu**2 * phi * g1 * h4) - c * h4,
        1.0 - g1 * (mu**2 * h4 + w * nu**2 - x),
    ])


def _admissible_upper(g1, x, tol):
    # in the upper half-plane: Im g1 >= 0 and Im(x g1) >= 0 (Im g3 <= 0)
    scale = np.maximum(np.abs(g1), 1.0)
    return (g1.imag >= -tol * scale) & ((x * g1).imag >= -tol * scale * np.maximum(np.abs(x), 1.0))


def _select(cands, pred, x, tol):
    """Pick, per row, the admissible candidate closest to ``pred``."""
    ok = _admissible_upper(cands, x[..., None], tol)
    dist = np.abs(cands - pred[..., None])
    dist = np.where(ok, dist, np.inf)
    idx = np.argmin(dist, axis=-1)
    chosen = np.take_along_axis(cands, idx[..., None], axis=-1)[..., 0]
    found = np.isfinite(np.take_along_axis(dist, idx[..., None], axis=-1)[..., 0])
    return chosen, found


def _descent_heights(top: float, bottom: np.ndarray, ratio: float = DESCENT_RATIO):
    bottom = np.asarray(bottom, dtype=float)
    lo = float(bottom.min())
    steps = max(1, int(math.ceil(math.log(top / lo) / math.log(1.0 / ratio))))
    return steps


def solve_one_point_array(
    xs, config: ModelConfig, *, ratio: float = DESCENT_RATIO, tol: float = 1e-10
):
    """Solve the one-point system at many points of the closed upper half-plane.

    Each point is reached by a vertical path from ``Re x + i*anchor``.
    Points with ``Im x < 0`` are handled by Schwarz reflection.  Returns
    arrays ``(g1, h4, t1)`` with the shape of ``xs``.
    """
    xs = np.asarray(xs, dtype=complex)
    shape = xs.shape
    flat = xs.ravel()
    lower = flat.imag < 0
    work = np.where(lower, flat.conj(), flat)
    if np.any(work.imag <= 0):
        raise ValueError("points on the real axis need solve_negative_real or a positive offset")
    top = anchor_height(config)
    g1 = np.empty(work.shape, dtype=complex)
    h4 = np.empty_like(g1)
    t1 = np.empty_like(g1)
    # residual floor set by root clustering: |g1| / (distance to nearest other root)
    cond = np.ones(work.shape)

    high = work.imag >= top
    if high.any():
        g = _polish_from_anchor(work[high], config, tol)
        g1[high] = g
    low = ~high
    if low.any():
        target = work[low]
        re = target.real
        steps = _descent_heights(top, target.imag, ratio)
        # per-point geometric ladder from `top` down to its own Im x
        fr = np.linspace(0.0, 1.0, steps + 1)
        logs = np.log(top) + fr[:, None] * (np.log(target.imag) - np.log(top))[None, :]
        x0 = re + 1j * top
        cands = _roots(_quartic(x0, config))
        g, found = _select(cands, -1.0 / x0, x0, 1e-8)
        if not found.all():
            raise BranchSelectionError("no admissible root at the continuation anchor")
        # first-order predictor on u = x * g1, which stays bounded near x = 0
        x_prev, u_prev, du = x0, x0 * g, None
        for k in range(1, steps + 1):
            xk = re + 1j * np.exp(logs[k])
            cands = _track_roots(_quartic(xk, config), cands)
            u_pred = u_prev if du is None else u_prev + du * (xk - x_prev)
            chosen, found = _select(cands, u_pred / xk, xk, 1e-8)
            if not found.all():
                bad = np.flatnonzero(~found)
                raise BranchSelectionError(
                    f"no admissible root at x={xk[bad[0]]!r} (step {k}/{steps})"
                )
            g = chosen
            du = (xk * g - u_prev) / (xk - x_prev)
            x_prev, u_prev = xk, xk * g
        others = np.where(np.abs(cands - g[:, None]) > 0, np.abs(cands - g[:, None]), np.inf)
        cond[low] = np.maximum(1.0, np.abs(g) / others.min(axis=1))
        g, _ = _newton(g, target, config)
        g1[low] = g
    h4[:] = _h4_of(g1, work, config)
    t1[:] = config.mu * config.psi * g1 * h4
    res = _scaled_one_point_residual(work, g1, h4, t1, config)
    limit = np.maximum(tol, 1e-15 * cond)
    if np.any(res > limit):
        # one more polish for stragglers
        g2, _ = _newton(g1, work, config, tol=1e-15, maxiter=20)
        g1 = np.where(res > limit, g2, g1)
        h4 = _h4_of(g1, work, config)
        t1 = config.mu * config.psi * g1 * h4
        res = _scaled_one_point_residual(work, g1, h4, t1, config)
        if np.any(res > limit):
            i = int(np.argmax(res))
            raise SolverDivergenceError(
                f"residual {res[i]:.2e} at x={work[i]!r}",
                last=(work[i], g1[i], h4[i], t1[i]),
            )
    if np.any(~_admissible_upper(g1, work, 1e-8)):
        i = int(np.flatnonzero(~_admissible_upper(g1, work, 1e-8))[0])
        raise BranchSelectionError(f"solution left the physical branch at x={work[i]!r}")
    g1 = np.where(lower, g1.conj(), g1)
    h4 = np.where(lower, h4.conj(), h4)
    t1 = np.where(lower, t1.conj(), t1)
    return g1.reshape(shape), h4.reshape(shape), t1.reshape(shape)


def _polish_from_anchor(x, config, tol):
    x = np.asarray(x, dtype=complex)
    cands = _roots(_quartic(x, config))
    chosen, found = _select(cands, -1.0 / x, x, 1e-8)
    if not found.all():
        raise BranchSelectionError("no admissible root at the continuation anchor")
    g, _ = _newton(chosen, x, config)
    return g


def solve_negative_real(x, config: ModelConfig):
    """Solve on the negative real axis, where g1 and g3 are real and positive.

    The branch is followed by continuation from far left of the spectrum.
    ``x`` may be a scalar or an array of negative reals.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x >= 0):
        raise ValueError("solve_negative_real needs x < 0")
    shape = x.shape
    flat = x.ravel()
    far = 10.0 * config.spectrum_bound()
    out = np.empty(flat.shape, dtype=complex)
    for i, xi in enumerate(flat):
        start = -max(far, 10.0 * abs(xi))
        steps = max(2, int(math.ceil(math.log(start / xi) / math.log(1.0 / DESCENT_RATIO))))
        path = -np.exp(np.linspace(math.log(-start), math.log(-xi), steps + 1))
        g = -1.0 / path[0]
        for xk in path:
            cands = _roots(_quartic(np.array(xk + 0j), config))
            c = config.c
            g3 = (c - 1.0 - xk * cands) / c
            tolim = 1e-7 * np.maximum(np.abs(cands), 1.0)
            ok = (np.abs(cands.imag) < tolim) & (cands.real > 0) & (g3.real > 0)
            if not ok.any():
                raise BranchSelectionError(f"no real positive root at x={xk!r}")
            dist = np.where(ok, np.abs(cands - g), np.inf)
            g = cands[int(np.argmin(dist))].real + 0j
            g, _ = _newton(np.array([g]), np.array([xk + 0j]), config)
            g = g[0].real + 0j
        out[i] = g
    g1 = out.reshape(shape)
    h4 = _h4_of(g1, x, config)
    t1 = config.mu * config.psi * g1 * h4
    return g1.real, h4.real, t1.real


def solve_one_point(
    x: complex, config: ModelConfig, seed_guess: OnePointSolution | None = None
) -> OnePointSolution:
    """Solve the one-point system at a single complex point.

    Without ``seed_guess`` the point is reached by continuation from the
    asymptotic anchor; with one, Newton starts from the seed and the result
    must stay on the physical branch.  Negative real ``x`` uses the real
    branch.
    """
    x = complex(x)
    if x.imag == 0.0:
        if x.real >= 0:
            raise ValueError("x on the nonnegative real axis is on or near the cut; add an offset")
        g1, h4, t1 = solve_negative_real(x.real, config)
        return OnePointSolution(x, complex(g1), complex(h4), complex(t1), config.c, config.mu)
    if seed_guess is not None:
        work = x if x.imag > 0 else x.conjugate()
        seed = seed_guess.g1 if seed_guess.x.imag * x.imag > 0 else seed_guess.g1.conjugate()
        g, res = _newton(np.array([seed]), np.array([work]), config)
        g = g[0]
        if res[0] <= 1e-10 and _admissible_upper(np.array([g]), np.array([work]), 1e-8)[0]:
            if x.imag < 0:
                g = g.conjugate()
            h4 = complex(_h4_of(g, x, config))
            return OnePointSolution(x, complex(g), h4, config.mu * config.psi * g * h4,
                                    config.c, config.mu)
    g1, h4, t1 = solve_one_point_array(np.array([x]), config)
    return OnePointSolution(x, complex(g1[0]), complex(h4[0]), complex(t1[0]), config.c, config.mu)


def continuation_sweep(points: Sequence[complex], config: ModelConfig, *, max_step: float | None = None):
    """Solve along an ordered path, warm-starting each point from the previous one.

    The first point is solved from the asymptotic anchor.  ``max_step``
    bounds the distance between consecutive points.
    """
    points = [complex(p) for p in points]
    if not points:
        return []
    if max_step is not None:
        for i in range(1, len(points)):
            if abs(points[i] - points[i - 1]) > max_step:
                raise ValueError(f"step {i} exceeds max_step={max_step}")
    out = []
    prev = None
    for i, p in enumerate(points):
        try:
            if prev is None:
                sol = solve_one_point(p, config)
            else:
                sol = _warm_step(p, prev, config)
        except SolverError as exc:
            raise type(exc)(f"continuation failed at index {i}: {exc}") from exc
        out.append(sol)
        prev = sol
    return out


def _warm_step(x, prev: OnePointSolution, config: ModelConfig) -> OnePointSolution:
    if x.imag == 0.0 or prev.x.imag * x.imag <= 0:
        return solve_one_point(x, config)
    work = x if x.imag > 0 else x.conjugate()
    pred = prev.g1 if x.imag > 0 else prev.g1.conjugate()
    cands = _roots(_quartic(np.array([work]), config))
    chosen, found = _select(cands, np.array([pred]), np.array([work]), 1e-8)
    if not found[0]:
        raise BranchSelectionError(f"no admissible root at x={x!r}")
    g, res = _newton(chosen, np.array([work]), config)
    g = complex(g[0])
    if x.imag < 0:
        g = g.conjugate()
    h4 = complex(_h4_of(g, x, config))
    return OnePointSolution(x, g, h4, config.mu * config.psi * g * h4, config.c, config.mu)


def one_point_derivative(sol: OnePointSolution, config: ModelConfig) -> np.ndarray:
    """d(g1, h4, t1)/dx by implicit differentiation of the one-point system."""
    c, mu, nu, psi, phi = config.c, config.mu, config.nu, config.psi, config.phi
    x, g, h4 = sol.x, sol.g1, sol.h4
    w = c - 1.0 - x * g
    inner2 = c - mu**2 * phi * g * h4
    jac = np.array([
        [mu * psi * h4, mu * psi * g, -1.0],
        [-x * inner2 - w * mu**2 * phi * h4, -w * mu**2 * phi * g - c, 0.0],
        [-(mu**2 * h4 + w * nu**2 - x) + g * nu**2 * x, -g * mu**2, 0.0],
    ], dtype=complex)
    dfdx = np.array([0.0, -g * inner2, g * (nu**2 * g + 1.0)], dtype=complex)
    return np.linalg.solve(jac, -dfdx)


# --- two-point system -------------------------------------------------------


def two_point_matrix(x, y, g1x, h4x, t1x, g1y, h4y, t1y, config: ModelConfig):
    """Coefficient matrix ``A`` and right-hand side ``b`` with ``A q = b``.

    Unknown ordering is ``(q1, q2, q4, q5)``; inputs may be arrays.
    """
    mu, nu, psi, phi, c = config.mu, config.nu, config.psi, config.phi, config.c
    x, y = np.asarray(x, dtype=complex), np.asarray(y, dtype=complex)
    g1x, h4x, t1x, g1y, h4y, t1y = np.broadcast_arrays(
        *(np.asarray(v, dtype=complex) for v in (g1x, h4x, t1x, g1y, h4y, t1y))
    )
    x = np.broadcast_to(x, g1x.shape)
    y = np.broadcast_to(y, g1x.shape)
    h1x = 1.0 - mu * t1x
    h1y = 1.0 - mu * t1y
    shape = g1x.shape
    A = np.zeros(shape + (4, 4), dtype=complex)
    b = np.zeros(shape + (4,), dtype=complex)
    zero = np.zeros(shape, dtype=complex)
    wx = c - 1.0 - g1x * x
    wy = c - 1.0 - g1y * y
    # eq 1
    A[..., 0, 0] = mu**2 * h4x - x + nu**2 * wx
    A[..., 0, 1] = -(mu**2) * g1y
    A[..., 0, 2] = -c * nu**2 * g1y
    b[..., 0] = g1y - mu * g1y * (t1x + t1y)
    # eq 2
    k = mu * psi * wx
    A[..., 1, 0] = k * mu * h4y
    A[..., 1, 1] = -k * mu * g1x - 1.0
    A[..., 1, 2] = c * h1y
    b[..., 1] = -k * g1x * t1y
    # eq 3
    A[..., 2, 0] = nu**2 * psi * wy
    A[..., 2, 2] = -(mu**2) * phi * g1x * h1x - nu**2 * phi * g1x - phi
    A[..., 2, 3] = mu**2 * wy
    b[..., 2] = zero
    # eq 4
    A[..., 3, 0] = psi * h1y
    A[..., 3, 2] = psi * mu**2 * phi * g1x * g1y * h1y
    A[..., 3, 3] = -(mu**2) * psi * g1x * wx - 1.0
    b[..., 3] = -(psi**2) * g1x * g1y * h1y
    return A, b


def solve_two_point_array(x, y, g1x, h4x, t1x, g1y, h4y, t1y, config: ModelConfig,
                          *, check: bool = True):
    """Vectorized two-point solve; returns an array ``(..., 4)`` of ``(q1, q2, q4, q5)``.

    Rows and columns are equilibrated first: near the atom at zero the raw
    entries span many orders of magnitude.
    """
    A, b = two_point_matrix(x, y, g1x, h4x, t1x, g1y, h4y, t1y, config)
    rows = np.linalg.norm(A, axis=-1)
    rows = np.where(rows > 0, rows, 1.0)
    As = A / rows[..., :, None]
    cols = np.linalg.norm(As, axis=-2)
    cols = np.where(cols > 0, cols, 1.0)
    As = As / cols[..., None, :]
    if check:
        cond = np.linalg.cond(As)
        if np.any(~np.isfinite(cond) | (cond > 1e14)):
            raise DegeneratePointError(
                "two-point system is singular; move x, y further from the real axis"
            )
    z = np.linalg.solve(As, (b / rows)[..., None])[..., 0]
    return z / cols


def solve_two_point(
    x: complex, y: complex, sol_x: OnePointSolution, sol_y: OnePointSolution, config: ModelConfig
) -> TwoPointSolution:
    """Solve the linear two-point system for ``(q1, q2, q4, q5)``."""
    q = solve_two_point_array(
        x, y, sol_x.g1, sol_x.h4, sol_x.t1, sol_y.g1, sol_y.h4, sol_y.t1, config
    )
    return TwoPointSolution(complex(x), complex(y), *(complex(v) for v in q))


def two_point_residuals(tp: TwoPointSolution, sol_x, sol_y, config: ModelConfig) -> np.ndarray:
    A, b = two_point_matrix(tp.x, tp.y, sol_x.g1, sol_x.h4, sol_x.t1,
                            sol_y.g1, sol_y.h4, sol_y.t1, config)
    return A @ tp.as_array() - b


def evaluate_transforms(
    sol_x: OnePointSolution, two_point: TwoPointSolution | None, config: ModelConfig
) -> TransformValues:
    """Map solutions to the transforms ``K, L0, V`` (and ``H0, W``)."""
    r2, s2, c = config.r**2, config.s**2, config.c
    K = sol_x.t1
    L0 = r2 * sol_x.g1
    V = s2 * (1.0 + sol_x.x * sol_x.g1) + (c - sol_x.h4)
    if two_point is None:
        return TransformValues(K, L0, V)
    H0 = r2 * two_point.q1
    W = s2 * c * two_point.q4 + two_point.q2
    return TransformValues(K, L0, V, H0, W)
