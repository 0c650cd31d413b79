"""Command-line entry point: ``rfflow <command> [options]``."""
from __future__ import annotations

import argparse
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import curves, density, pencil, simulator
from .config import ConfigError, RunConfig, load_config
from .model import NonCenteredActivationError, QuadratureError, get_activation, hermite_coefficients
from .stieltjes import SolverError, evaluate_transforms, solve_one_point, solve_two_point

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_EXTRACTION = 4
EXIT_SIMULATION = 5
EXIT_MESH = 6
MESH_FAILURE_LIMIT = 0.05


class MeshFailure(RuntimeError):
    pass


def _num(v) -> str:
    if isinstance(v, complex):
        return f"{v.real!r}{'+' if v.imag >= 0 or math.isnan(v.imag) else '-'}{abs(v.imag)!r}j"
    return repr(float(v))


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    p.add_argument("--config", help="INI run configuration", **kw)
    p.add_argument("--out", help="output directory (overrides [output] directory)", **kw)
    p.add_argument("--threads", type=int, help="worker processes for seeds and mesh rows", **kw)
    p.add_argument("--seed", type=int, help="base seed for simulations", **kw)
    p.add_argument("--dump-config", action="store_true", help="print the effective configuration and exit", **kw)


def _model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model overrides")
    g.add_argument("--mu", type=float)
    g.add_argument("--nu", type=float)
    g.add_argument("--activation")
    g.add_argument("--psi", type=float)
    g.add_argument("--phi", type=float)
    g.add_argument("--r", type=float)
    g.add_argument("--s", type=float)
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--times", help="logspace(a, b, k) or a comma-separated list")
    g.add_argument("--grid-points", type=int)
    g.add_argument("--grid-points-2d", type=int)
    g.add_argument("--offset", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rfflow", description="Random-feature gradient-flow error curves")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    _model_flags(common)

    p = sub.add_parser("coeffs", parents=[common], help="Hermite coefficients of an activation")
    p.add_argument("--digits", type=int, help="round the printed values")
    p = sub.add_parser("solve", parents=[common], help="solve the algebraic systems at a point")
    p.add_argument("--x", type=complex, required=True)
    p.add_argument("--y", type=complex)
    p = sub.add_parser("density", parents=[common], help="write a spectral measure")
    p.add_argument("--selector", default="g1",
                   choices=density.ONE_POINT_SELECTORS + density.TWO_POINT_SELECTORS)
    sub.add_parser("curve", parents=[common], help="write analytic error curves")
    sub.add_parser("limit", parents=[common], help="print infinite-time errors")
    sub.add_parser("heatmap", parents=[common], help="errors over a parameter sweep and time")
    p = sub.add_parser("simulate", parents=[common], help="finite-size gradient-flow runs")
    p.add_argument("--d", type=int)
    p.add_argument("--seeds", type=int)
    p.add_argument("--dt", type=float, help="Euler step; 0 uses the exact flow")
    p = sub.add_parser("verify-pencil", parents=[common], help="linear-pencil block traces vs solver")
    p.add_argument("--x", type=complex)
    p.add_argument("--y", type=complex)
    p.add_argument("--d", type=int)
    p.add_argument("--seeds", type=int)
    return parser


def _run_config(args) -> RunConfig:
    base = load_config(args.config) if getattr(args, "config", None) else None
    overrides = {k: getattr(args, k, None) for k in
                 ("mu", "nu", "activation", "psi", "phi", "r", "s", "lam", "times", "offset")}
    overrides["grid_points"] = getattr(args, "grid_points", None)
    overrides["grid_points_2d"] = getattr(args, "grid_points_2d", None)
    overrides["directory"] = getattr(args, "out", None)
    if args.command == "simulate":
        overrides.update(d=args.d, seeds=args.seeds, dt=args.dt)
    if args.command == "verify-pencil":
        overrides.update(pencil_x=args.x, pencil_y=args.y, pencil_d=args.d, pencil_seeds=args.seeds)
    if base is None:
        clean = {k: v for k, v in overrides.items() if v is not None}
        if "activation" not in clean and "mu" not in clean and "nu" not in clean:
            clean["activation"] = "relu-centered"
        return RunConfig(**clean)
    return base.with_overrides(**overrides)


def _out_path(rc: RunConfig, name: str) -> Path:
    out = Path(rc.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out / f"{rc.prefix}_{name}"


# -- commands ---------------------------------------------------------------


def cmd_coeffs(args) -> int:
    name = getattr(args, "activation", None) or "relu-centered"
    mu, nu, _ = hermite_coefficients(get_activation(name))
    if args.digits is not None:
        print(f"mu={round(mu, args.digits):g} nu={round(nu, args.digits):g}")
    else:
        print(f"mu={mu!r} nu={nu!r}")
    return EXIT_OK


def cmd_solve(rc: RunConfig, args) -> int:
    cfg = rc.model()
    sx = solve_one_point(args.x, cfg)
    lines = [("g1", sx.g1), ("h4", sx.h4), ("t1", sx.t1), ("g3", sx.g3)]
    two = None
    if args.y is not None:
        sy = solve_one_point(args.y, cfg)
        two = solve_two_point(args.x, args.y, sx, sy, cfg)
        lines += [("q1", two.q1), ("q2", two.q2), ("q4", two.q4), ("q5", two.q5)]
    tv = evaluate_transforms(sx, two, cfg)
    lines += [("K", tv.K), ("L0", tv.L0), ("V", tv.V)]
    if two is not None:
        lines += [("H0", tv.H0), ("W", tv.W)]
    for name, val in lines:
        print(f"{name}={_num(complex(val))}")
    return EXIT_OK


def cmd_density(rc: RunConfig, args) -> int:
    cfg = rc.model()
    sel = args.selector
    path = _out_path(rc, f"density_{sel}.csv")
    if sel in density.TWO_POINT_SELECTORS:
        m2 = density.density_2d(cfg, rc.grid_points_2d, selector=sel)
        density.write_measure_2d(m2, path)
        print(f"corner_atom={_num(m2.corner_atom)} mass={_num(m2.mass)}")
    else:
        m1 = density.density_1d(sel, cfg, rc.grid_points, rc.offset)
        density.write_measure_1d(m1, path)
        print(f"atom0={_num(m1.atom0)} mass={_num(m1.mass)}")
        if rc.eps is not None:
            print(f"atom0_eps={_num(density.atom_weight(sel, cfg, rc.eps))}")
    print(f"wrote {path}")
    return EXIT_OK


def _curve_times(rc: RunConfig) -> np.ndarray:
    if rc.sweep_parameter == "t":
        return rc.sweep_values()
    return rc.time_grid()


def cmd_curve(rc: RunConfig, args) -> int:
    cfg = rc.model()
    try:
        measures = curves.extract_measures(cfg, rc.grid_points, rc.grid_points_2d, rc.offset)
        curve = curves.error_curve(_curve_times(rc), cfg, measures)
    except SolverError as exc:
        raise SolverError(f"{exc} at {cfg.as_dict()}") from exc
    except density.ExtractionError as exc:
        raise density.ExtractionError(f"{exc} at {cfg.as_dict()}") from exc
    path = _out_path(rc, "curve.csv")
    curves.write_curve(curve, path)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_limit(rc: RunConfig, args) -> int:
    cfg = rc.model()
    if rc.sweep_parameter in ("psi", "phi", "lambda"):
        path = _out_path(rc, "limit.csv")
        with path.open("w", newline="") as fh:
            fh.write(f"{rc.sweep_parameter},test_inf,train_inf\n")
            for v in rc.sweep_values():
                lim = curves.limit_errors(cfg.replace(**{rc.sweep_parameter: float(v)}))
                fh.write(f"{float(v)!r},{lim.test_inf!r},{lim.train_inf!r}\n")
        print(f"wrote {path}")
        return EXIT_OK
    lim = curves.limit_errors(cfg)
    print(f"test_inf={lim.test_inf!r}")
    print(f"train_inf={lim.train_inf!r}")
    print(f"dV={lim.dV!r} dV_fd={lim.dV_fd!r} rel_gap={lim.dV_gap!r}")
    return EXIT_OK


def _heatmap_row(args):
    cfg_dict, param, value, times, gp, gp2, offset = args
    from .model import ModelConfig

    try:
        cfg = ModelConfig(**cfg_dict).replace(**{param: value})
        m = curves.extract_measures(cfg, gp, gp2, offset)
        c = curves.error_curve(times, cfg, m)
        return c.test, c.train, None
    except (SolverError, density.ExtractionError, ValueError, ArithmeticError) as exc:
        nan = np.full(len(times), np.nan)
        return nan, nan, f"{param}={value!r}: {exc}"


def _pool_map(fn, items, threads: int):
    if threads and threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def cmd_heatmap(rc: RunConfig, args) -> int:
    if rc.sweep_parameter not in ("psi", "phi", "lambda"):
        raise ConfigError("heatmap needs a [sweep] over psi, phi or lambda")
    cfg = rc.model()
    values = rc.sweep_values()
    times = rc.time_grid()
    if values.size * times.size > rc.max_mesh:
        raise ConfigError(f"mesh {values.size}x{times.size} exceeds max_mesh={rc.max_mesh}")
    param = "lam" if rc.sweep_parameter == "lambda" else rc.sweep_parameter
    jobs = [(cfg.as_dict(), param, float(v), times, rc.grid_points, rc.grid_points_2d, rc.offset)
            for v in values]
    rows = _pool_map(_heatmap_row, jobs, getattr(args, "threads", None) or 1)
    test = np.array([r[0] for r in rows])
    train = np.array([r[1] for r in rows])
    bad = ~(np.isfinite(test) & np.isfinite(train))
    errors = [r[2] for r in rows if r[2]]
    for msg in errors:
        print(f"failed: {msg}", file=sys.stderr)
    fail_rate = bad.sum() / bad.size
    print(f"failed cells: {int(bad.sum())} of {bad.size}")
    if fail_rate > MESH_FAILURE_LIMIT:
        raise MeshFailure(f"{fail_rate:.1%} of mesh cells failed (limit {MESH_FAILURE_LIMIT:.0%})")
    test[bad] = np.nan
    train[bad] = np.nan
    written = []
    for name, mat in (("test", test), ("train", train)):
        path = _out_path(rc, f"heatmap_{name}.csv")
        with path.open("w", newline="") as fh:
            for row in mat:
                fh.write(",".join("nan" if not np.isfinite(v) else repr(float(v)) for v in row) + "\n")
        written.append(path)
    axis_p = _out_path(rc, f"heatmap_{rc.sweep_parameter}.txt")
    axis_p.write_text("".join(f"{float(v)!r}\n" for v in values))
    axis_t = _out_path(rc, "heatmap_t.txt")
    axis_t.write_text("".join(f"{float(v)!r}\n" for v in times))
    script = _out_path(rc, "heatmap.gp")
    script.write_text(_gnuplot_script(rc, written, values, times))
    print(f"wrote {', '.join(str(p) for p in written + [axis_p, axis_t, script])}")
    return EXIT_OK


def _gnuplot_script(rc: RunConfig, files, values, times) -> str:
    ylog = "set logscale y\n" if rc.sweep_log else ""
    parts = [
        "# rows: sweep values, columns: times (log-scaled axis)\n",
        "set datafile separator ','\n",
        "set datafile missing 'nan'\n",
        "set logscale x\n",
        ylog,
        "set xlabel 't'\n",
        f"set ylabel '{rc.sweep_parameter}'\n",
        "set view map\n",
        f"times = system(\"cat {Path(files[0]).name.replace('heatmap_test.csv', 'heatmap_t.txt')}\")\n",
        f"params = system(\"cat {Path(files[0]).name.replace('heatmap_test.csv', f'heatmap_{rc.sweep_parameter}.txt')}\")\n",
    ]
    for f in files:
        name = Path(f).name
        parts.append(f"set title '{name}'\n")
        parts.append(
            f"splot '{name}' matrix using (real(word(times, $1+1))):(real(word(params, $2+1))):3 "
            "with pm3d notitle\n"
        )
        parts.append("pause -1\n")
    return "".join(parts)


def _simulate_seed(job):
    cfg_dict, activation, d, seed, times, dt = job
    from .model import ModelConfig

    cfg = ModelConfig(**cfg_dict)
    act = get_activation(activation)
    inst = simulator.sample_instance(d, cfg, act, seed)
    if dt > 0:
        weights = simulator.euler_flow(inst, cfg, times, dt)
    else:
        weights = simulator.exact_flow(inst, cfg, times)
    train, test = simulator.empirical_errors(inst, cfg, weights)
    return [{"t": float(t), "train": float(a), "test": float(b), "seed": seed}
            for t, a, b in zip(times, train, test)]


def cmd_simulate(rc: RunConfig, args) -> int:
    cfg = rc.model()
    times = _curve_times(rc)
    act_name = rc.activation if rc.activation is not None else f"hermite2:{rc.mu!r},{rc.nu!r}"
    base = getattr(args, "seed", None) or 0
    jobs = [(cfg.as_dict(), act_name, rc.d, base + k, times, rc.dt) for k in range(rc.seeds)]
    runs = [row for rows in _pool_map(_simulate_seed, jobs, getattr(args, "threads", None) or 1) for row in rows]
    p_runs = _out_path(rc, "runs.csv")
    p_agg = _out_path(rc, "aggregate.csv")
    simulator.write_runs(runs, p_runs)
    simulator.write_aggregate(simulator.aggregate(runs), p_agg)
    print(f"wrote {p_runs}, {p_agg}")
    return EXIT_OK


def cmd_verify_pencil(rc: RunConfig, args) -> int:
    cfg = rc.model()
    base = getattr(args, "seed", None) or 0
    seeds = list(range(base, base + rc.pencil_seeds))
    report = pencil.verify(cfg, rc.pencil_x, rc.pencil_y, rc.pencil_d, seeds,
                           threads=getattr(args, "threads", None) or 1)
    path = _out_path(rc, "pencil.csv")
    pencil.write_report(report, path)
    print(f"max_rel_err={report.max_rel_err!r} median_rel_err={report.median_rel_err!r} "
          f"seeds={report.seeds} failures={report.failures}")
    print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "density": cmd_density,
    "curve": cmd_curve,
    "limit": cmd_limit,
    "heatmap": cmd_heatmap,
    "simulate": cmd_simulate,
    "verify-pencil": cmd_verify_pencil,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "coeffs" and not getattr(args, "dump_config", False):
            return cmd_coeffs(args)
        rc = _run_config(args)
        if getattr(args, "dump_config", False):
            sys.stdout.write(rc.to_ini())
            return EXIT_OK
        if args.command == "coeffs":
            return cmd_coeffs(args)
        return COMMANDS[args.command](rc, args)
    except (ConfigError, NonCenteredActivationError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SolverError, QuadratureError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except density.ExtractionError as exc:
        print(f"extraction error: {exc}", file=sys.stderr)
        return EXIT_EXTRACTION
    except (simulator.MemoryBudgetError, pencil.PencilError) as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except MeshFailure as exc:
        print(f"heatmap aborted: {exc}", file=sys.stderr)
        return EXIT_MESH
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
