"""Spectral measures recovered from boundary values of the transforms.

One-variable measures are sampled as ``Im F(u + i*offset) / pi`` on a
cosine-stretched grid per spectral band, with a Dirac atom at the origin
estimated from ``eps * Im F(i*eps)``.  Two-variable measures split into a
continuous part, a diagonal ``m(u) delta(u - v)`` part, a corner atom at
``(0, 0)`` and an edge density paired with the atom along each axis.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelConfig
from .stieltjes import (
    SolverError,
    solve_one_point_array,
    solve_two_point_array,
)

__all__ = [
    "SpectralMeasure1D",
    "SpectralMeasure2D",
    "ExtractionError",
    "UnreliableAtomError",
    "EmptySupportError",
    "ONE_POINT_SELECTORS",
    "TWO_POINT_SELECTORS",
    "locate_support",
    "locate_bands",
    "band_grid",
    "one_point_transform",
    "two_point_transform",
    "density_1d",
    "measures_1d",
    "atom_weight",
    "density_2d",
    "measure_pair_2d",
    "write_measure_1d",
    "write_measure_2d",
]

ONE_POINT_SELECTORS = ("g1", "K", "L0", "V")
TWO_POINT_SELECTORS = ("W", "H0")
DENSITY_FLOOR = 1e-8
SCAN_POINTS = 4000
# relative offset used when scanning for the support edges
SCAN_OFFSET = 1e-13
REFINE_POINTS = 64
# a band starting below this fraction of the top edge touches zero
HARD_EDGE = 1e-6
REFINE_ROUNDS = 6


class ExtractionError(ArithmeticError):
    """A recovered measure violates its sanity checks."""


class UnreliableAtomError(ExtractionError):
    """The atom extrapolation did not converge."""


class EmptySupportError(ExtractionError):
    """No spectral mass was found in the scan window."""


@dataclass(frozen=True)
class SpectralMeasure1D:
    """Density samples plus quadrature weights and an atom at zero.

    ``bands`` lists the disjoint intervals making up the support; ``grid``
    and ``weights`` are concatenated over bands so that
    ``weights @ f(grid)`` integrates ``f`` against the continuous part.
    """

    selector: str
    support: tuple[float, float]
    grid: np.ndarray
    density: np.ndarray
    weights: np.ndarray
    atom0: float = 0.0
    bands: tuple[tuple[float, float], ...] = ()
    atom_spread: float = 0.0

    @property
    def mass(self) -> float:
        return float(self.weights @ self.density) + self.atom0

    def integrate(self, f) -> float:
        """Integral of ``f`` against the full measure, atom included."""
        vals = np.asarray(f(self.grid), dtype=float)
        return float(self.weights @ (vals * self.density)) + self.atom0 * float(f(np.zeros(1))[0])


@dataclass(frozen=True)
class SpectralMeasure2D:
    """Two-variable measure on a lattice ``grid_u x grid_v``.

    The ``u`` and ``v`` lattices interleave so that no node sits on the
    diagonal, where the ``delta(u - v)`` component lives.
    """

    selector: str
    grid_u: np.ndarray
    grid_v: np.ndarray
    weights_u: np.ndarray
    weights_v: np.ndarray
    density: np.ndarray
    corner_atom: float = 0.0
    edge_density: np.ndarray = field(default_factory=lambda: np.zeros(0))
    diagonal_density: np.ndarray | None = None
    asymmetry: float = 0.0

    def integrate(self, k) -> float:
        """Integral of ``k(u) k(v)`` against the full measure."""
        ku = np.asarray(k(self.grid_u), dtype=float)
        kv = np.asarray(k(self.grid_v), dtype=float)
        k0 = float(k(np.zeros(1))[0])
        total = float((self.weights_u * ku) @ self.density @ (self.weights_v * kv))
        total += self.corner_atom * k0**2
        if self.edge_density.size:
            total += k0 * float(self.weights_u @ (ku * self.edge_density))
        if self.diagonal_density is not None:
            total += float(self.weights_u @ (ku**2 * self.diagonal_density))
        return total

    @property
    def mass(self) -> float:
        return self.integrate(np.ones_like)


# --- transforms ------------------------------------------------------------


def one_point_transform(selector: str, xs, config: ModelConfig) -> np.ndarray:
    """Evaluate ``g1``, ``K``, ``L0`` or ``V`` at complex points."""
    if selector not in ONE_POINT_SELECTORS:
        raise ValueError(f"unknown selector {selector!r}; expected one of {ONE_POINT_SELECTORS}")
    xs = np.asarray(xs, dtype=complex)
    g1, h4, t1 = solve_one_point_array(xs, config)
    return _one_point_from(selector, xs, g1, h4, t1, config)


def _one_point_from(selector, xs, g1, h4, t1, config):
    if selector == "g1":
        return g1
    if selector == "K":
        return t1
    if selector == "L0":
        return config.r**2 * g1
    return config.s**2 * (1.0 + xs * g1) + (config.c - h4)


def two_point_transform(selector: str, xs, ys, config: ModelConfig, *, check=True) -> np.ndarray:
    """Evaluate ``W`` or ``H0`` on broadcast arrays of points."""
    if selector not in TWO_POINT_SELECTORS:
        raise ValueError(f"unknown selector {selector!r}; expected one of {TWO_POINT_SELECTORS}")
    xs, ys = np.broadcast_arrays(np.asarray(xs, dtype=complex), np.asarray(ys, dtype=complex))
    ox = solve_one_point_array(xs, config)
    oy = solve_one_point_array(ys, config)
    q = solve_two_point_array(xs, ys, *ox, *oy, config, check=check)
    return _two_point_from(selector, q, config)


def _two_point_from(selector, q, config):
    if selector == "H0":
        return config.r**2 * q[..., 0]
    return config.s**2 * config.c * q[..., 2] + q[..., 1]


# --- support ---------------------------------------------------------------


def _atom_estimate(config: ModelConfig, width: float) -> float:
    eps = 1e-7 * width
    g = solve_one_point_array(np.array([1j * eps]), config)[0][0]
    return max(0.0, float(eps * g.imag))


def _bulk_density(u, config: ModelConfig, offset: float, atom: float) -> np.ndarray:
    g1 = solve_one_point_array(u + 1j * offset, config)[0]
    # remove the Poisson tail of the atom at zero
    return (g1.imag - atom * offset / (u**2 + offset**2)) / math.pi


def locate_bands(config: ModelConfig, offset: float | None = None, *,
                 density_floor: float = DENSITY_FLOOR, scan_points: int = SCAN_POINTS):
    """Disjoint intervals carrying the continuous part of the ``g1`` measure.

    The initial window is scanned at a tiny offset; each crossing of
    ``density_floor`` is then refined by nested rescans of its bracket.
    """
    if offset is not None and offset <= 0:
        raise ValueError("offset must be positive")
    if config.scale == 0.0:
        raise EmptySupportError("mu = nu = 0 gives a degenerate spectrum")
    top = config.spectrum_bound()
    off = offset if offset is not None else SCAN_OFFSET * top
    atom = _atom_estimate(config, top)
    u = np.linspace(0.0, top, scan_points + 1)[1:]
    rho = _bulk_density(u, config, off, atom)
    inside = rho > density_floor
    if not inside.any():
        raise EmptySupportError("density floor never exceeded in the scan window")
    if inside[-1]:
        raise ExtractionError("spectrum reaches the end of the scan window")
    flips = np.flatnonzero(np.diff(inside.astype(int)))
    step = u[1] - u[0]
    # brackets (outside, inside) for every edge
    lefts, rights = [], []
    if inside[0]:
        lefts.append((0.0, u[0]))
    for i in flips:
        if inside[i + 1]:
            lefts.append((u[i], u[i + 1]))
        else:
            rights.append((u[i + 1], u[i]))
    brackets = np.array(lefts + rights)
    out_pt, in_pt = brackets[:, 0].copy(), brackets[:, 1].copy()
    # nested rescans of every bracket; each round shrinks it by REFINE_POINTS
    frac = np.linspace(0.0, 1.0, REFINE_POINTS + 1)[1:-1]
    for _ in range(REFINE_ROUNDS):
        pts = out_pt[:, None] + frac[None, :] * (in_pt - out_pt)[:, None]
        ok = np.zeros(pts.shape, dtype=bool)
        pos = pts > 0
        ok[pos] = _bulk_density(pts[pos], config, off, atom) > density_floor
        first = np.where(ok.any(axis=1), ok.argmax(axis=1), frac.size)
        new_in = np.where(first < frac.size, pts[np.arange(len(pts)), np.minimum(first, frac.size - 1)], in_pt)
        prev = first - 1
        new_out = np.where(prev >= 0, pts[np.arange(len(pts)), np.maximum(prev, 0)], out_pt)
        out_pt, in_pt = new_out, new_in
        if np.max(np.abs(in_pt - out_pt)) < 1e-12 * top:
            break
    edges = 0.5 * (out_pt + in_pt)
    nl = len(lefts)
    lo, hi = np.sort(edges[:nl]), np.sort(edges[nl:])
    bands = tuple((float(a), float(b)) for a, b in zip(lo, hi) if b - a > 2 * step * 1e-6)
    return bands


def locate_support(config: ModelConfig, offset: float | None = None, *,
                   density_floor: float = DENSITY_FLOOR) -> tuple[float, float]:
    """Smallest interval containing every band of the ``g1`` measure."""
    bands = locate_bands(config, offset, density_floor=density_floor)
    return bands[0][0], bands[-1][1]


def band_grid(a: float, b: float, n: int, *, staggered: bool = False, hard_left: bool = False):
    """Cosine-stretched nodes on ``[a, b]`` and their quadrature weights.

    The plain grid is composite Simpson in the angle (``n`` forced odd);
    the staggered grid uses angle midpoints with the midpoint rule.
    ``hard_left`` marks a density that blows up like ``(u - a)^(-1/2)``: the
    angular integrand then tends to a nonzero constant at the left end,
    which is extrapolated from the next two nodes.
    """
    if staggered:
        m = n
        theta = (np.arange(m) + 0.5) * math.pi / m
        wt = np.full(m, math.pi / m)
    else:
        m = n if n % 2 == 1 else n + 1
        theta = np.linspace(0.0, math.pi, m)
        h = math.pi / (m - 1)
        wt = np.ones(m)
        wt[1:-1:2] = 4.0
        wt[2:-1:2] = 2.0
        wt *= h / 3.0
    half = 0.5 * (b - a)
    nodes = 0.5 * (a + b) - half * np.cos(theta)
    jac = half * np.sin(theta)
    weights = wt * jac
    if hard_left and not staggered:
        weights[1] += 2.0 * wt[0] * jac[1]
        weights[2] -= wt[0] * jac[2]
    return nodes, weights


def _split_points(bands, total: int) -> list[int]:
    # bands share the nodes equally; widths can differ by orders of magnitude
    return [max(16, total // len(bands))] * len(bands)


def _grids(bands, grid_points, *, staggered=False):
    nodes, weights = [], []
    top = bands[-1][1]
    for (a, b), n in zip(bands, _split_points(bands, grid_points)):
        hard = a < HARD_EDGE * top
        x, w = band_grid(a, b, int(n), staggered=staggered, hard_left=hard)
        nodes.append(x)
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)


# --- one-variable measures -------------------------------------------------


def _extrapolate_atom(eps, vals, scale):
    """Zero-``eps`` limit of ``vals``; tries an even fit, then a hard-edge fit.

    Returns ``(value, spread, ok)``.
    """
    e2 = eps**2
    full = np.polyfit(e2, vals, 1)[1]
    last = vals[-1] - (vals[-1] - vals[-2]) / (e2[-1] - e2[-2]) * e2[-1]
    spread = abs(full - last)
    floor = max(abs(full), 1e-5 * scale)
    if spread <= 0.1 * floor:
        return float(full), float(spread), True
    # a density diverging like u^(-1/2) at zero adds half-integer powers
    k = min(4, eps.size - 1)
    basis = np.stack([eps ** (0.5 * j) for j in range(k)], axis=1)
    coef = np.linalg.lstsq(basis, vals, rcond=None)[0]
    coef_tail = np.linalg.lstsq(basis[-k:], vals[-k:], rcond=None)[0]
    spread = abs(coef[0] - coef_tail[0])
    floor = max(abs(coef[0]), 1e-5 * scale)
    return float(coef[0]), float(spread), spread <= 0.1 * floor


def _default_eps(width):
    return width * np.geomspace(1e-4, 1e-8, 5)


def atom_weight(selector: str, config: ModelConfig, eps_sequence=None, *,
                return_spread: bool = False, width: float | None = None):
    """Weight of the Dirac mass at zero, by extrapolating ``eps * Im F(i eps)``.

    Away from a hard edge at zero the correction is even in ``eps``, so the
    samples are first fitted linearly in ``eps**2``; if that fit is unstable
    a ``1, sqrt(eps), eps`` model is tried.  The spread compares the fit
    over all entries with the fit through the last entries only.
    """
    if eps_sequence is None:
        eps_sequence = _default_eps(width if width is not None else config.spectrum_bound())
    eps = np.asarray(eps_sequence, dtype=float)
    if eps.size < 3:
        raise ValueError("eps_sequence needs at least 3 entries")
    if np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
        raise ValueError("eps_sequence must be positive and decreasing")
    if eps[0] / eps[-1] < 100.0 * (1 - 1e-12):
        raise ValueError("eps_sequence must span at least two decades")
    vals = eps * one_point_transform(selector, 1j * eps, config).imag
    value, spread, ok = _extrapolate_atom(eps, vals, _selector_scale(selector, config))
    if not ok:
        raise UnreliableAtomError(
            f"atom extrapolation for {selector} did not settle: value {value:.3e}, spread {spread:.3e}"
        )
    return (value, spread) if return_spread else value


def _selector_scale(selector: str, config: ModelConfig) -> float:
    if selector == "g1":
        return 1.0
    if selector == "L0":
        return max(config.r**2, 1e-300)
    if selector == "K":
        return max(abs(config.mu) * config.psi, 1e-300)
    return max(config.c * (1.0 + config.s**2), 1e-300)


def measures_1d(config: ModelConfig, selectors=ONE_POINT_SELECTORS, grid_points: int = 200,
                offset: float | None = None, *, bands=None, extrapolate: bool = True,
                check_mass: bool = True) -> dict:
    """Measures of several one-point transforms from one set of solves.

    ``offset`` defaults to ``1e-9`` times the support width; with
    ``extrapolate`` the samples at ``offset`` and ``2*offset`` are combined
    to cancel the first-order bias.
    """
    for sel in selectors:
        if sel not in ONE_POINT_SELECTORS:
            raise ValueError(f"unknown selector {sel!r}; expected one of {ONE_POINT_SELECTORS}")
    if grid_points < 16:
        raise ValueError("grid_points must be at least 16")
    if offset is not None and offset <= 0:
        raise ValueError("offset must be positive")
    if bands is None:
        bands = locate_bands(config)
    width = bands[-1][1] - bands[0][0]
    off = offset if offset is not None else 1e-9 * width
    grid, weights = _grids(bands, grid_points)
    eps = _default_eps(bands[-1][1])

    def solve(xs):
        try:
            return solve_one_point_array(xs, config)
        except SolverError as exc:
            raise type(exc)(f"density extraction failed: {exc}") from exc

    s1 = solve(grid + 1j * off)
    s2 = solve(grid + 2j * off) if extrapolate else None
    se = solve(1j * eps)
    out = {}
    for sel in selectors:
        vals = eps * _one_point_from(sel, 1j * eps, *se, config).imag
        atom, spread, ok = _extrapolate_atom(eps, vals, _selector_scale(sel, config))
        if not ok:
            raise UnreliableAtomError(
                f"atom extrapolation for {sel} did not settle: value {atom:.3e}, spread {spread:.3e}"
            )
        rho = _density_from(sel, grid, off, s1, atom, config)
        if extrapolate:
            rho = 2.0 * rho - _density_from(sel, grid, 2.0 * off, s2, atom, config)
        measure = SpectralMeasure1D(
            selector=sel, support=(bands[0][0], bands[-1][1]), grid=grid, density=rho,
            weights=weights, atom0=atom, bands=tuple(bands), atom_spread=spread,
        )
        if check_mass and sel in ("g1", "L0") and not (sel == "L0" and config.r == 0.0):
            total = _selector_scale(sel, config)
            neg = -np.minimum(rho, 0.0) @ weights
            if neg > 1e-3 * total:
                raise ExtractionError(f"negative mass {neg:.2e} in probability-type measure {sel}")
            if abs(measure.mass - total) > 1e-3 * total:
                raise ExtractionError(
                    f"mass of {sel} measure is {measure.mass:.6f}, expected {total:.6f}"
                )
        out[sel] = measure
    return out


def density_1d(selector: str, config: ModelConfig, grid_points: int = 200,
               offset: float | None = None, **kwargs) -> SpectralMeasure1D:
    """Sample the measure of one transform; see :func:`measures_1d`."""
    return measures_1d(config, (selector,), grid_points, offset, **kwargs)[selector]


def _density_from(selector, grid, offset, sol, atom, config):
    vals = _one_point_from(selector, grid + 1j * offset, *sol, config).imag
    # remove the Poisson tail of the atom at zero
    return (vals - atom * offset / (grid**2 + offset**2)) / math.pi


# --- two-variable measures -------------------------------------------------


def measure_pair_2d(config: ModelConfig, grid_points: int = 200, offsets=None, *,
                    bands=None, selectors=TWO_POINT_SELECTORS, diag_tol: float = 1e-2):
    """Two-variable measures for several selectors sharing one lattice.

    Returns a dict ``selector -> SpectralMeasure2D``.
    """
    if grid_points < 16:
        raise ValueError("grid_points must be at least 16 per axis")
    if bands is None:
        bands = locate_bands(config)
    width = bands[-1][1] - bands[0][0]
    if offsets is None:
        offsets = (1e-10 * width, 1e-10 * width)
    dx, dy = (float(o) for o in offsets)
    if dx <= 0 or dy <= 0:
        raise ValueError("offsets must be positive")
    gu, wu = _grids(bands, grid_points)
    gv, wv = _grids(bands, grid_points, staggered=True)

    def one(points):
        return solve_one_point_array(points, config)

    def lattice(xs_sol, ys_sol, xs, ys):
        X = xs[:, None]
        Y = ys[None, :]
        args = [a[:, None] for a in xs_sol] + [b[None, :] for b in ys_sol]
        return solve_two_point_array(X, Y, *args, config, check=False)

    # one-point data on both grids, both half-planes
    u_up = gu + 1j * dx
    v_up, v_dn = gv + 1j * dy, gv - 1j * dy
    su = one(u_up)
    sv_up = one(v_up)
    sv_dn = tuple(np.conj(a) for a in sv_up)
    q_minus = lattice(su, sv_dn, u_up, v_dn)
    q_plus = lattice(su, sv_up, u_up, v_up)
    # swapped lattice: v on the first axis, u on the second
    v_first = gv + 1j * dx
    u_up2, u_dn2 = gu + 1j * dy, gu - 1j * dy
    sv1 = one(v_first)
    su2 = one(u_up2)
    su2_dn = tuple(np.conj(a) for a in su2)
    qs_minus = lattice(sv1, su2_dn, v_first, u_dn2)
    qs_plus = lattice(sv1, su2, v_first, u_up2)

    # diagonal, corner and edge pieces
    ddiag = 1e-9 * width
    sd = one(gu + 1j * ddiag)
    sd_dn = tuple(np.conj(a) for a in sd)
    qd = solve_two_point_array(gu + 1j * ddiag, gu - 1j * ddiag, *sd, *sd_dn, config, check=False)

    eps_seq = _default_eps(bands[-1][1])
    s_eps = one(1j * eps_seq)
    q_corner = solve_two_point_array(1j * eps_seq, 1j * eps_seq, *s_eps, *s_eps, config, check=False)

    eps_e = 1e-7 * bands[-1][1]
    s_e = one(np.array([1j * eps_e]))
    s_e_b = tuple(np.broadcast_to(a, gu.shape) for a in s_e)
    su_e = one(gu + 1j * dy)
    su_e_dn = tuple(np.conj(a) for a in su_e)
    xe = np.full(gu.shape, 1j * eps_e)
    q_edge_minus = solve_two_point_array(xe, gu - 1j * dy, *s_e_b, *su_e_dn, config, check=False)
    q_edge_plus = solve_two_point_array(xe, gu + 1j * dy, *s_e_b, *su_e, config, check=False)

    out = {}
    for sel in selectors:
        f = lambda q: _two_point_from(sel, q, config)  # noqa: E731
        rho = (f(q_minus) - f(q_plus)).real / (2 * math.pi**2)
        rho_sw = (f(qs_minus) - f(qs_plus)).real / (2 * math.pi**2)
        scale = max(np.abs(rho).max(), np.abs(rho_sw).max(), 1e-300)
        asym = float(np.abs(rho - rho_sw.T).max())
        if asym > 1e-6 * scale:
            warnings.warn(
                f"{sel} lattice asymmetry {asym:.2e} exceeds tolerance; symmetrizing",
                RuntimeWarning, stacklevel=2,
            )
        rho = 0.5 * (rho + rho_sw.T)

        corner_vals = -(eps_seq**2) * f(q_corner).real
        corner = _extrapolate_atom(eps_seq, corner_vals, 1.0)[0]
        edge = eps_e / math.pi * (f(q_edge_minus) - f(q_edge_plus)).real
        m_raw = ddiag / math.pi * f(qd).real
        m = m_raw - corner * ddiag / math.pi / (gu**2 + ddiag**2)

        provisional = SpectralMeasure2D(sel, gu, gv, wu, wv, rho, corner, edge, None, asym)
        budget = _two_point_mass(sel, config)
        deficit = budget - provisional.mass
        diag = None
        if abs(deficit) > diag_tol * max(abs(budget), 1e-300) or np.abs(m).max() > 0:
            diag = m
        if diag is not None and (wu @ np.abs(m)) < 1e-12 * max(abs(budget), 1.0):
            diag = None
        out[sel] = SpectralMeasure2D(sel, gu, gv, wu, wv, rho, corner, edge, diag, asym)
    return out


def density_2d(config: ModelConfig, grid_points: int = 200, offsets=None, *,
               selector: str = "W", bands=None) -> SpectralMeasure2D:
    """Two-variable measure of ``W`` (default) or ``H0``."""
    if selector not in TWO_POINT_SELECTORS:
        raise ValueError(f"unknown selector {selector!r}; expected one of {TWO_POINT_SELECTORS}")
    return measure_pair_2d(config, grid_points, offsets, bands=bands, selectors=(selector,))[selector]


def _two_point_mass(selector: str, config: ModelConfig) -> float:
    """Total mass, read off from ``x y F(x, y)`` far from the spectrum."""
    z = 1e6j * max(1.0, config.spectrum_bound())
    val = two_point_transform(selector, np.array([z]), np.array([z]), config)[0]
    return float((z * z * val).real)


# --- CSV -------------------------------------------------------------------


def write_measure_1d(measure: SpectralMeasure1D, path) -> None:
    """``node,density`` rows preceded by a ``# atom0=...`` header line."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# atom0={measure.atom0!r}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "density"])
        for x, r in zip(measure.grid, measure.density):
            w.writerow([repr(float(x)), repr(float(r))])


def write_measure_2d(measure: SpectralMeasure2D, path) -> list[Path]:
    """Dense matrix CSV plus companion files for the axes and extra pieces."""
    path = Path(path)
    stem = path.with_suffix("")
    np.savetxt(path, measure.density, delimiter=",", fmt="%.17g")
    written = [path]
    for name, arr in (("u", measure.grid_u), ("v", measure.grid_v)):
        p = Path(f"{stem}_{name}.csv")
        np.savetxt(p, arr, fmt="%.17g")
        written.append(p)
    p = Path(f"{stem}_atoms.csv")
    with p.open("w") as fh:
        fh.write(f"# corner_atom={measure.corner_atom!r}\n")
        fh.write("node,edge_density,diagonal_density\n")
        diag = measure.diagonal_density
        for i, u in enumerate(measure.grid_u):
            e = measure.edge_density[i] if measure.edge_density.size else 0.0
            dv = diag[i] if diag is not None else 0.0
            fh.write(f"{float(u)!r},{float(e)!r},{float(dv)!r}\n")
    written.append(p)
    return written
