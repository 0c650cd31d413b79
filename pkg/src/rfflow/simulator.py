"""Finite-dimensional random-feature model and its exact gradient flow.

Random streams come from a Philox counter-based generator keyed by the
seed.  ``sample_instance`` draws, in this order and row-major: ``X``
(n x d), ``Theta`` (N x d), ``beta`` (d), ``xi`` (n), ``a0`` (N) and, when
requested, ``Omega`` (n x N).  Noise and initial weights are drawn as
standard normals and scaled, so the layout does not depend on ``s`` or ``r``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import Activation, ModelConfig, get_activation

__all__ = [
    "Instance",
    "FlowState",
    "MemoryBudgetError",
    "NearSingularResolventError",
    "sample_instance",
    "default_activation",
    "flow_state",
    "exact_flow",
    "euler_flow",
    "ridge_solution",
    "empirical_errors",
    "monte_carlo_test_error",
    "gram_eigenvalues",
    "resolvent_trace",
    "two_resolvent_trace",
    "simulate_curves",
    "aggregate",
    "ridge_sweep",
    "write_runs",
    "write_aggregate",
]

DEFAULT_MEMORY_BUDGET = 3 * 2**30
NULL_THRESHOLD = 1e-12


class MemoryBudgetError(MemoryError):
    """Requested instance does not fit the memory budget."""


class NearSingularResolventError(ArithmeticError):
    """The evaluation point sits on an empirical eigenvalue."""


def default_activation(config: ModelConfig) -> Activation:
    """Quadratic activation whose Hermite coefficients are exactly ``(mu, nu)``."""
    return get_activation(f"hermite2:{config.mu!r},{config.nu!r}")


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed)))


def _dims(d: int, config: ModelConfig) -> tuple[int, int]:
    return int(round(config.phi * d)), int(round(config.psi * d))


@dataclass(frozen=True)
class Instance:
    d: int
    n: int
    N: int
    X: np.ndarray
    Theta: np.ndarray
    beta: np.ndarray
    xi: np.ndarray
    a0: np.ndarray
    Z: np.ndarray
    seed: int
    activation: Activation = field(repr=False)
    Omega: np.ndarray | None = field(default=None, repr=False)

    @property
    def Y(self) -> np.ndarray:
        return self.X @ self.beta / math.sqrt(self.d) + self.xi

    @property
    def b(self) -> np.ndarray:
        """Forcing term ``Z^T Y / sqrt(N)`` of the flow."""
        return self.Z.T @ self.Y / math.sqrt(self.N)

    def recompute_features(self) -> np.ndarray:
        return self.activation(self.X @ self.Theta.T / math.sqrt(self.d))


def sample_instance(d: int, config: ModelConfig, activation: Activation | None = None,
                    seed: int = 0, *, with_omega: bool = False,
                    memory_budget: int = DEFAULT_MEMORY_BUDGET) -> Instance:
    """Draw a model instance with ``n = round(phi d)``, ``N = round(psi d)``."""
    if d < 10:
        raise ValueError("d must be at least 10")
    n, N = _dims(d, config)
    need = 8 * (n * d + N * d + 2 * n * N + (n * N if with_omega else 0))
    if need > memory_budget:
        raise MemoryBudgetError(f"instance needs ~{need / 2**30:.2f} GiB, budget {memory_budget / 2**30:.2f} GiB")
    act = activation if activation is not None else default_activation(config)
    rng = _rng(seed)
    X = rng.standard_normal((n, d))
    Theta = rng.standard_normal((N, d))
    beta = rng.standard_normal(d)
    xi = config.s * rng.standard_normal(n)
    a0 = config.r * rng.standard_normal(N)
    Omega = rng.standard_normal((n, N)) if with_omega else None
    Z = act(X @ Theta.T / math.sqrt(d))
    return Instance(d, n, N, X, Theta, beta, xi, a0, Z, int(seed), act, Omega)


@dataclass(frozen=True)
class FlowState:
    """Spectral data of ``Z^T Z / N`` restricted to its range.

    ``vectors`` has orthonormal columns spanning the retained modes; the
    orthogonal complement carries eigenvalue zero.
    """

    values: np.ndarray
    vectors: np.ndarray
    a0_proj: np.ndarray
    b_proj: np.ndarray
    a0_rest: np.ndarray
    N: int

    @property
    def all_values(self) -> np.ndarray:
        """Eigenvalues including the zeros of the complement."""
        extra = self.N - self.values.size
        return np.concatenate([np.zeros(extra), self.values])


def flow_state(instance: Instance) -> FlowState:
    """Eigen-decomposition of ``Z^T Z / N`` through the smaller Gram matrix."""
    Z, N = instance.Z, instance.N
    if instance.n < N:
        vals, U = np.linalg.eigh(Z @ Z.T / N)
        keep = vals > NULL_THRESHOLD * max(vals.max(), 1e-300)
        vals, U = vals[keep], U[:, keep]
        vecs = Z.T @ U / np.sqrt(N * vals)
    else:
        vals, vecs = np.linalg.eigh(Z.T @ Z / N)
        keep = vals > NULL_THRESHOLD * max(vals.max(), 1e-300)
        vals, vecs = vals[keep], vecs[:, keep]
    a0p = vecs.T @ instance.a0
    bp = vecs.T @ instance.b
    rest = instance.a0 - vecs @ a0p
    return FlowState(vals, vecs, a0p, bp, rest, N)


def exact_flow(instance: Instance, config: ModelConfig, times: Sequence[float],
               state: FlowState | None = None) -> np.ndarray:
    """Weights ``a_t`` for each time, shape ``(len(times), N)``.

    The forcing lies in the range of ``Z^T``, so modes outside it only
    decay at rate ``delta`` (and stay frozen when ``delta = 0``).
    """
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValueError("times must be nonnegative")
    st = state if state is not None else flow_state(instance)
    delta = instance.n / instance.N * config.lam
    rate = st.values + delta
    stat = st.b_proj / rate
    decay = np.exp(-np.outer(times, rate))
    coeff = decay * (st.a0_proj - stat) + stat
    out = coeff @ st.vectors.T
    out += np.exp(-delta * times)[:, None] * st.a0_rest[None, :]
    return out


def ridge_solution(instance: Instance, config: ModelConfig) -> np.ndarray:
    """Stationary point ``(Z^T Z / N + delta I)^{-1} Z^T Y / sqrt(N)``."""
    delta = instance.n / instance.N * config.lam
    if delta <= 0:
        raise ValueError("ridge solution needs lambda > 0")
    A = instance.Z.T @ instance.Z / instance.N
    A[np.diag_indices_from(A)] += delta
    return np.linalg.solve(A, instance.b)


def euler_flow(instance: Instance, config: ModelConfig, times: Sequence[float],
               dt: float | Sequence[tuple[float, float]] = 0.01) -> np.ndarray:
    """Explicit gradient descent on the training loss, sampled at ``times``.

    ``dt`` may be a schedule ``[(t_until, dt), ...]`` to coarsen late steps.
    """
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or np.any(times < 0):
        raise ValueError("times must be nonnegative and sorted")
    schedule = [(math.inf, float(dt))] if np.isscalar(dt) else [(float(a), float(b)) for a, b in dt]
    Z, N = instance.Z, instance.N
    delta = instance.n / N * config.lam
    b = instance.b
    a = instance.a0.copy()
    t = 0.0
    out = np.empty((times.size, N))
    for k, target in enumerate(times):
        while t < target - 1e-12:
            h = next(step for until, step in schedule if t < until - 1e-12)
            h = min(h, target - t)
            a = a - h * (Z.T @ (Z @ a) / N + delta * a - b)
            t += h
        out[k] = a
    return out


def empirical_errors(instance: Instance, config: ModelConfig, weights) -> tuple[np.ndarray, np.ndarray]:
    """Training loss and decomposed test error for each weight vector.

    Returns ``(train, test)``.  The test error uses
    ``1 + s^2 - 2 mu g + mu^2 h + nu^2 l`` with the finite-size overlaps.
    """
    A = np.atleast_2d(np.asarray(weights, dtype=float))
    d, n, N = instance.d, instance.n, instance.N
    Y = instance.Y
    pred = A @ instance.Z.T / math.sqrt(N)
    train = np.sum((Y[None, :] - pred) ** 2, axis=1) / n + config.lam / N * np.sum(A**2, axis=1)
    proj = A @ instance.Theta / math.sqrt(d * N)
    g = proj @ instance.beta / math.sqrt(d)
    h = np.sum(proj**2, axis=1)
    l = np.sum(A**2, axis=1) / N  # noqa: E741
    test = 1.0 + config.s**2 - 2 * config.mu * g + config.mu**2 * h + config.nu**2 * l
    return train, test


def monte_carlo_test_error(instance: Instance, config: ModelConfig, a: np.ndarray,
                           samples: int = 100_000, seed: int = 0, batch: int = 10_000):
    """Monte Carlo test error over fresh inputs; returns ``(mean, std_error)``."""
    rng = _rng(seed)
    d, N = instance.d, instance.N
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < samples:
        m = min(batch, samples - done)
        x0 = rng.standard_normal((m, d))
        y0 = x0 @ instance.beta / math.sqrt(d) + config.s * rng.standard_normal(m)
        yhat = instance.activation(x0 @ instance.Theta.T / math.sqrt(d)) @ a / math.sqrt(N)
        err = (y0 - yhat) ** 2
        total += err.sum()
        total_sq += (err**2).sum()
        done += m
    mean = total / samples
    var = total_sq / samples - mean**2
    return mean, math.sqrt(max(var, 0.0) / samples)


def _check_point(values, x):
    gap = np.min(np.abs(values - x))
    if gap < 1e-10:
        raise NearSingularResolventError(f"x={x!r} is within {gap:.1e} of an eigenvalue")


def gram_eigenvalues(instance: Instance) -> np.ndarray:
    """All ``N`` eigenvalues of ``Z^T Z / N`` (zeros included), without eigenvectors."""
    Z, N = instance.Z, instance.N
    if instance.n < N:
        vals = np.linalg.eigvalsh(Z @ Z.T / N)
        return np.concatenate([np.zeros(N - instance.n), np.clip(vals, 0.0, None)])
    return np.clip(np.linalg.eigvalsh(Z.T @ Z / N), 0.0, None)


def resolvent_trace(instance: Instance, x: complex, state: FlowState | None = None) -> complex:
    """``(1/N) Tr (Z^T Z / N - x I)^{-1}``."""
    vals = state.all_values if state is not None else gram_eigenvalues(instance)
    _check_point(vals, x)
    return complex(np.mean(1.0 / (vals - x)))


def two_resolvent_trace(instance: Instance, x: complex, y: complex,
                        state: FlowState | None = None) -> complex:
    """``(1/N) Tr R(x) (Theta Theta^T / d) R(y)`` with ``R`` the resolvent of ``Z^T Z / N``."""
    st = state if state is not None else flow_state(instance)
    _check_point(st.all_values, x)
    _check_point(st.all_values, y)
    d, N = instance.d, instance.N
    proj = st.vectors.T @ instance.Theta / math.sqrt(d)
    diag = np.sum(proj**2, axis=1)
    total_theta = np.sum(instance.Theta**2) / d
    rest = total_theta - diag.sum()
    val = np.sum(diag / ((st.values - x) * (st.values - y))) + rest / (x * y)
    return complex(val / N)


# --- runs and aggregation --------------------------------------------------


def simulate_curves(config: ModelConfig, d: int, seeds: Sequence[int], times: Sequence[float],
                    activation: Activation | None = None) -> list[dict]:
    """Exact-flow errors for several seeds; one record per (seed, time)."""
    rows = []
    for seed in seeds:
        inst = sample_instance(d, config, activation, seed)
        a_t = exact_flow(inst, config, times)
        train, test = empirical_errors(inst, config, a_t)
        for t, tr, te in zip(times, train, test):
            rows.append({"t": float(t), "train": float(tr), "test": float(te), "seed": int(seed)})
    return rows


def aggregate(rows: list[dict]) -> list[dict]:
    """Mean and sample standard deviation per time across seeds."""
    by_t: dict[float, list[dict]] = {}
    for r in rows:
        by_t.setdefault(r["t"], []).append(r)
    out = []
    for t in sorted(by_t):
        grp = by_t[t]
        tr = np.array([r["train"] for r in grp])
        te = np.array([r["test"] for r in grp])
        ddof = 1 if len(grp) > 1 else 0
        out.append({
            "t": t,
            "train_mean": float(tr.mean()),
            "train_std": float(tr.std(ddof=ddof)),
            "test_mean": float(te.mean()),
            "test_std": float(te.std(ddof=ddof)),
            "n_seeds": len(grp),
        })
    return out


def _write(rows, header, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(r[h]) if isinstance(r[h], float) else r[h] for h in header])


def write_runs(rows: list[dict], path) -> None:
    _write(rows, ["t", "train", "test", "seed"], path)


def write_aggregate(rows: list[dict], path) -> None:
    _write(rows, ["t", "train_mean", "train_std", "test_mean", "test_std", "n_seeds"], path)


def ridge_sweep(config: ModelConfig, phis: Sequence[float], d: int, seed: int,
                activation: Activation | None = None, block: int = 2048) -> list[dict]:
    """Ridge (infinite-time) errors along a sample-size sweep with nested data.

    One draw serves every ``phi``: the samples for a smaller ``phi`` are the
    leading rows of those for a larger one, so the Gram matrix is
    accumulated once.  Streams: ``Theta`` then ``beta`` from the first child
    of ``SeedSequence(seed)``, rows of ``X`` from the second, noise from
    the third.
    """
    phis = np.asarray(phis, dtype=float)
    order = np.argsort(phis)
    ns = np.array([int(round(p * d)) for p in phis])
    N = int(round(config.psi * d))
    act = activation if activation is not None else default_activation(config)
    kids = np.random.SeedSequence(seed).spawn(3)
    g0, g1, g2 = (np.random.Generator(np.random.Philox(k)) for k in kids)
    Theta = g0.standard_normal((N, d))
    beta = g0.standard_normal(d)
    gram = np.zeros((N, N))
    zty = np.zeros(N)
    yy = 0.0
    n_done = 0
    out: dict[int, dict] = {}
    for idx in order:
        n_target = ns[idx]
        while n_done < n_target:
            m = min(block, n_target - n_done)
            Xb = g1.standard_normal((m, d))
            xib = config.s * g2.standard_normal(m)
            Zb = act(Xb @ Theta.T / math.sqrt(d))
            Yb = Xb @ beta / math.sqrt(d) + xib
            gram += Zb.T @ Zb
            zty += Zb.T @ Yb
            yy += float(Yb @ Yb)
            n_done += m
        n = n_target
        delta = n / N * config.lam
        A = gram / N
        A[np.diag_indices_from(A)] += delta
        b = zty / math.sqrt(N)
        a = np.linalg.solve(A, b)
        # training loss from accumulated sufficient statistics
        fit = yy - 2.0 * float(a @ zty) / math.sqrt(N) + float(a @ (gram @ a)) / N
        train = fit / n + config.lam / N * float(a @ a)
        proj = Theta.T @ a / math.sqrt(d * N)
        g = float(proj @ beta) / math.sqrt(d)
        h = float(proj @ proj)
        l = float(a @ a) / N  # noqa: E741
        test = 1.0 + config.s**2 - 2 * config.mu * g + config.mu**2 * h + config.nu**2 * l
        out[int(idx)] = {"phi": float(phis[idx]), "n": n, "train": train, "test": test, "seed": seed}
    return [out[i] for i in range(len(phis))]
