"""Finite-size linear pencil whose inverse block traces encode the two-point system.

The pencil is a 13 x 13 block matrix built from the gaussian-equivalent
features ``Z_lin = mu X Theta^T / sqrt(d) + nu Omega``.  Normalized traces
of seven blocks of its inverse converge to quantities the reduced solver
predicts, which gives an end-to-end check of the algebraic systems.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import linalg

from .model import ModelConfig
from .simulator import Instance, sample_instance
from .stieltjes import solve_one_point, solve_two_point

__all__ = [
    "PencilMatrix",
    "BlockTrace",
    "BlockTraceReport",
    "PencilError",
    "SingularPencilError",
    "TARGET_BLOCKS",
    "block_sizes",
    "build_pencil",
    "block_traces",
    "predicted_traces",
    "verify",
    "write_report",
]

# (row block, column block) -> (normalizing dimension, solver quantity)
TARGET_BLOCKS = {
    (13, 13): ("N", "g1(y)"),
    (7, 12): ("d", "t1(y)"),
    (1, 13): ("N", "q1"),
    (4, 10): ("n", "q4"),
    (2, 12): ("d", "q2"),
    (4, 4): ("n", "g3(x)"),
    (2, 5): ("d", "h4(x)"),
}
_LAYOUT = ("N", "d", "N", "n", "d", "N", "d", "N", "d", "n", "N", "d", "N")
MIN_IMAG = 0.05
MIN_DIM = 100
MAX_FAILURE_RATE = 0.2


class PencilError(RuntimeError):
    pass


class SingularPencilError(PencilError):
    """The pencil could not be factorized; move the points further from the axis."""


def block_sizes(d: int, n: int, N: int) -> list[int]:
    dims = {"d": d, "n": n, "N": N}
    return [dims[k] for k in _LAYOUT]


@dataclass
class PencilMatrix:
    matrix: np.ndarray
    offsets: list[int]
    sizes: list[int]
    x: complex
    y: complex
    dims: dict = field(default_factory=dict)

    def block_range(self, i: int, j: int) -> tuple[slice, slice]:
        """Row and column slices of block ``(i, j)``, 1-based."""
        return (slice(self.offsets[i - 1], self.offsets[i - 1] + self.sizes[i - 1]),
                slice(self.offsets[j - 1], self.offsets[j - 1] + self.sizes[j - 1]))

    def block(self, i: int, j: int) -> np.ndarray:
        rows, cols = self.block_range(i, j)
        return self.matrix[rows, cols]

    @property
    def side(self) -> int:
        return self.matrix.shape[0]


def build_pencil(instance: Instance, x: complex, y: complex, config: ModelConfig) -> PencilMatrix:
    """Assemble the pencil at ``(x, y)`` for one sampled instance."""
    if config.mu == 0 and config.nu == 0:
        raise ValueError("mu = nu = 0 makes the pencil targets trivial")
    if instance.Omega is None:
        raise ValueError("the instance must carry Omega (sample with with_omega=True)")
    if complex(x).imag == 0 or complex(y).imag == 0:
        raise ValueError("x and y must lie off the real axis")
    d, n, N = instance.d, instance.n, instance.N
    if instance.X.shape != (n, d) or instance.Theta.shape != (N, d) or instance.Omega.shape != (n, N):
        raise ValueError("instance dimensions do not match the pencil layout")
    sizes = block_sizes(d, n, N)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).tolist()
    side = int(sum(sizes))
    M = np.zeros((side, side), dtype=complex)
    pm = PencilMatrix(M, offsets, sizes, complex(x), complex(y), {"d": d, "n": n, "N": N})

    mu, nu = config.mu, config.nu
    Th = instance.Theta / math.sqrt(d)
    Xs = instance.X / math.sqrt(N)
    Om = instance.Omega / math.sqrt(N)

    def put(i, j, val):
        rows, cols = pm.block_range(i, j)
        M[rows, cols] = val

    def eye(i, scale=1.0):
        rows, cols = pm.block_range(i, i)
        M[rows, cols] += scale * np.eye(sizes[i - 1])

    eye(1, -complex(x))
    put(1, 2, -mu * Th)
    put(1, 3, -np.eye(N))
    put(1, 7, Th)
    eye(2)
    put(2, 4, Xs.T)
    eye(3)
    put(3, 4, nu * Om.T)
    eye(4)
    put(4, 5, Xs)
    put(4, 6, nu * Om)
    put(5, 1, mu * Th.T)
    eye(5)
    put(6, 1, np.eye(N))
    eye(6)
    eye(7)
    put(7, 13, Th.T)
    eye(8)
    put(8, 10, nu * Om.T)
    eye(9)
    put(9, 10, Xs.T)
    eye(10)
    put(10, 11, nu * Om)
    put(10, 12, Xs)
    eye(11)
    put(11, 13, -np.eye(N))
    eye(12)
    put(12, 13, -mu * Th.T)
    put(13, 8, np.eye(N))
    put(13, 9, mu * Th)
    eye(13, -complex(y))
    return pm


def block_traces(pencil: PencilMatrix, blocks: Sequence[tuple[int, int]] | None = None) -> dict:
    """Normalized traces of the requested inverse blocks (all targets by default).

    The pencil is LU-factorized once and solved only against the block
    columns that the targets touch.
    """
    blocks = list(TARGET_BLOCKS) if blocks is None else list(blocks)
    try:
        lu = linalg.lu_factor(pencil.matrix, check_finite=False)
    except (linalg.LinAlgError, ValueError) as exc:
        raise SingularPencilError(f"pencil factorization failed ({exc}); use a larger imaginary offset") from exc
    if np.min(np.abs(np.diag(lu[0]))) < 1e-14 * np.max(np.abs(np.diag(lu[0]))):
        raise SingularPencilError("pencil is numerically singular; use a larger imaginary offset")
    cols_needed = sorted({j for _, j in blocks})
    col_index = []
    for j in cols_needed:
        _, cols = pencil.block_range(j, j)
        col_index.extend(range(cols.start, cols.stop))
    col_index = np.array(col_index)
    rhs = np.zeros((pencil.side, col_index.size), dtype=complex)
    rhs[col_index, np.arange(col_index.size)] = 1.0
    sol = linalg.lu_solve(lu, rhs, check_finite=False)
    if not np.all(np.isfinite(sol)):
        raise SingularPencilError("non-finite entries in the pencil inverse")
    position = {}
    start = 0
    for j in cols_needed:
        position[j] = start
        start += pencil.sizes[j - 1]
    out = {}
    for i, j in blocks:
        if pencil.sizes[i - 1] != pencil.sizes[j - 1]:
            raise ValueError(f"block ({i},{j}) is not square")
        rows, _ = pencil.block_range(i, j)
        size = pencil.sizes[j - 1]
        diag = sol[rows.start + np.arange(size), position[j] + np.arange(size)]
        norm = TARGET_BLOCKS.get((i, j), ("N",))[0]
        out[(i, j)] = complex(diag.sum() / pencil.dims[norm])
    return out


def predicted_traces(config: ModelConfig, x: complex, y: complex) -> dict:
    """Solver values for every target block."""
    sx = solve_one_point(x, config)
    sy = solve_one_point(y, config)
    two = solve_two_point(x, y, sx, sy, config)
    return {
        (13, 13): complex(sy.g1),
        (7, 12): complex(sy.t1),
        (1, 13): complex(two.q1),
        (4, 10): complex(two.q4),
        (2, 12): complex(two.q2),
        (4, 4): complex(sx.g3),
        (2, 5): complex(sx.h4),
    }


@dataclass(frozen=True)
class BlockTrace:
    block: tuple[int, int]
    measured: complex
    predicted: complex

    @property
    def abs_err(self) -> float:
        return abs(self.measured - self.predicted)

    @property
    def rel_err(self) -> float:
        return self.abs_err / max(abs(self.predicted), 1e-300)


@dataclass(frozen=True)
class BlockTraceReport:
    entries: tuple[BlockTrace, ...]
    d: int
    seeds: int
    failures: int
    x: complex
    y: complex
    per_seed: tuple[dict, ...] = field(default=(), repr=False)

    def __getitem__(self, block) -> BlockTrace:
        for e in self.entries:
            if e.block == tuple(block):
                return e
        raise KeyError(block)

    @property
    def max_rel_err(self) -> float:
        return max(e.rel_err for e in self.entries)

    @property
    def median_rel_err(self) -> float:
        return float(np.median([e.rel_err for e in self.entries]))


def _seed_traces(config, x, y, d, seed):
    inst = sample_instance(d, config, seed=seed, with_omega=True)
    return block_traces(build_pencil(inst, x, y, config))


def verify(config: ModelConfig, x: complex, y: complex, d: int, seeds: int | Sequence[int],
           *, threads: int = 1) -> BlockTraceReport:
    """Average block traces over seeds and compare with the solver."""
    if d < MIN_DIM:
        raise ValueError(f"d must be at least {MIN_DIM}")
    if complex(x).imag < MIN_IMAG or complex(y).imag < MIN_IMAG:
        raise ValueError(f"Im x and Im y must be at least {MIN_IMAG}")
    seed_list = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    predicted = predicted_traces(config, x, y)
    results: list[dict] = []
    failures = 0

    def run(seed):
        try:
            return _seed_traces(config, x, y, d, seed)
        except SingularPencilError:
            return None

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, seed_list))
    else:
        outcomes = [run(s) for s in seed_list]
    for res in outcomes:
        if res is None:
            failures += 1
        else:
            results.append(res)
    if failures > MAX_FAILURE_RATE * len(seed_list) or not results:
        raise PencilError(f"{failures} of {len(seed_list)} seeds failed to invert")
    entries = tuple(
        BlockTrace(block, complex(np.mean([r[block] for r in results])), predicted[block])
        for block in TARGET_BLOCKS
    )
    return BlockTraceReport(entries, d, len(results), failures, complex(x), complex(y), tuple(results))


def write_report(report: BlockTraceReport, path) -> None:
    """CSV ``block,measured_re,measured_im,predicted_re,predicted_im,rel_err``."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block", "measured_re", "measured_im", "predicted_re", "predicted_im", "rel_err"])
        for e in report.entries:
            w.writerow([f"{e.block[0]}-{e.block[1]}", repr(e.measured.real), repr(e.measured.imag),
                        repr(e.predicted.real), repr(e.predicted.imag), repr(e.rel_err)])
