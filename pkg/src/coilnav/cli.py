"""Command-line interface.

Subcommands:
  sample-grids    sample unit-current oracle grids to JSON files
  fit-field       fit grid files to an analytic field model (+ CSV report)
  validate-field  gradient/divergence checks of a model file
  run             one closed-loop experiment from a JSON config
  sweep           rate/noise sweep across controllers and seeds
  report          figure-analog CSV data from sweep results
  bench           compiled vs pure-Python kernel benchmark
  backends        show which rollout engine is active
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import field_oracle as fo
from . import zernike as zk
from ._kernels import compiled_available, default_backend, make_engine
from .dynamics import RobotParams, RobotState
from .harness import (
    DEFAULT_SEEDS,
    SWEEP_CONTROLLERS,
    ExperimentConfig,
    build_trajectory,
    report,
    run_closed_loop,
    sweep,
    write_csv,
    write_run_outputs,
)
from .nmpc import NmpcConfig, NmpcSolver
from .system import build_system


def _cmd_sample_grids(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for spec in fo.default_coil_specs():
        if spec.size_class not in args.classes or spec.stack_face not in args.faces:
            continue
        grid = fo.sample_grid(spec, spacing=args.spacing,
                              nx=int(100 / args.spacing) + 1, ny=int(100 / args.spacing) + 1)
        path = out / f"grid_{spec.stack_face}_{spec.size_class}.json"
        grid.save(path)
        print(f"wrote {path}")
    return 0


def _cmd_fit_field(args) -> int:
    coils = {}
    reports = []
    for path, order in zip(args.grids, args.orders):
        grid = fo.FieldSampleGrid.load(path)
        meta = grid.meta or {}
        size = meta.get("size_class")
        if size is None:
            print(f"error: {path} carries no coil metadata", file=sys.stderr)
            return 2
        cls = fo.COIL_CLASS_DEFAULTS[size]
        frame = zk.DiskFrame(center=(0.0, meta["center_offset"]), rho_max=cls["rho_max"])
        coeffs, rep = zk.fit(grid, frame, order)
        coils[size] = (coeffs, frame, order)
        reports.append(
            {
                "coil_class": size,
                "order": order,
                "mae_T": rep.mae,
                "r2_bx": rep.r_squared[0],
                "r2_by": rep.r_squared[1],
                "max_abs_error_T": rep.max_abs_error,
                "divergence_rms_ratio": rep.divergence_rms_ratio,
                "condition": rep.condition,
            }
        )
        print(f"{size}: order {order}, R2 = {rep.r_squared}, MAE = {rep.mae:.3e} T")
    model = zk.model_from_class_fits(coils)
    model.save(args.out)
    print(f"wrote {args.out}")
    if args.report:
        write_csv(args.report, reports)
        print(f"wrote {args.report}")
    return 0


def _cmd_validate_field(args) -> int:
    model = zk.ZernikeFieldModel.load(args.model)
    worst = zk.gradient_fd_check(model, n_points=args.points, seed=args.seed)
    ratio = zk.divergence_stats(model, n_points=args.points, seed=args.seed)
    print(f"analytic gradient vs finite differences, worst relative error: {worst:.3e}")
    print(f"divergence RMS / gradient RMS: {ratio:.4f}")
    ok = worst <= 1e-6 and ratio <= 0.05
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def _cmd_run(args) -> int:
    if args.config:
        cfg = ExperimentConfig.from_dict(json.loads(Path(args.config).read_text()))
    else:
        cfg = ExperimentConfig()
    overrides = {
        "controller": args.controller,
        "trajectory": args.trajectory,
        "rate_hz": args.rate,
        "sigma_mm": args.sigma,
        "seed": args.seed,
    }
    for key, val in overrides.items():
        if val is not None:
            cfg = ExperimentConfig(**{**cfg.to_dict(), key: val})
    metrics, rows = run_closed_loop(cfg)
    write_run_outputs(args.out_dir, cfg, metrics, rows)
    print(
        f"{cfg.controller} on {cfg.trajectory}: rms = {metrics.rms_position_mm:.3f} mm / "
        f"{metrics.rms_orientation_deg:.2f} deg over {metrics.n_steps} steps"
        + (" [FAULT]" if metrics.fault else "")
    )
    print(f"outputs in {args.out_dir}")
    return 1 if metrics.fault else 0


def _cmd_sweep(args) -> int:
    base = ExperimentConfig()
    if args.config:
        base = ExperimentConfig.from_dict(json.loads(Path(args.config).read_text()))
    rows = sweep(
        axis=args.axis,
        values=args.values,
        controllers=args.controllers,
        seeds=args.seeds,
        base=base,
        workers=args.workers,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "sweep_long.csv", rows)
    report(rows, out)
    faults = sum(int(r["fault"]) for r in rows)
    print(f"{len(rows)} runs, {faults} faults; results in {out}")
    return 1 if faults else 0


def _cmd_report(args) -> int:
    with open(args.results) as f:
        rows = [dict(r) for r in csv.DictReader(f)]
    for r in rows:
        r["value"] = float(r["value"])
        r["rms_position_mm"] = float(r["rms_position_mm"])
        r["rms_orientation_deg"] = float(r["rms_orientation_deg"])
    log_rows = None
    trajectory = None
    if args.log:
        with open(args.log) as f:
            log_rows = [dict(r) for r in csv.DictReader(f)]
        for r in log_rows:
            for k in ("target_x", "target_y", "truth_x", "truth_y"):
                r[k] = float(r[k])
        trajectory = build_trajectory(args.trajectory)
    written = report(rows, args.out_dir, log_rows=log_rows, trajectory=trajectory)
    for p in written:
        print(f"wrote {p}")
    return 0


def _cmd_bench(args) -> int:
    if not compiled_available():
        print("compiled backend not built; nothing to compare")
        return 1
    system = build_system()
    packed = system.packed()
    params = RobotParams.magnet_robot()
    cfg = NmpcConfig()
    rng = np.random.default_rng(args.seed)
    state = RobotState(x=-20.0, y=-20.0, theta=0.0)
    target = np.array([-15.0, -18.0, 0.3])

    rows = []
    for backend in ("compiled", "python"):
        engine = make_engine(packed, backend=backend)
        s0 = state.to_si()
        I = rng.uniform(-3, 3, (cfg.horizon, packed.n_coils))
        targets = np.tile([target[0] * 1e-3, target[1] * 1e-3, target[2]], (cfg.horizon + 1, 1))
        w = cfg.kernel_weights()
        p = params.to_kernel()
        reps = args.reps if backend == "compiled" else max(1, args.reps // 20)
        t0 = time.perf_counter()
        for _ in range(reps):
            engine.tracking_loss_grad(p, s0, I, cfg.dt, targets, w)
        per_grad = (time.perf_counter() - t0) / reps
        solver = NmpcSolver(packed, params, cfg, backend=backend)
        t0 = time.perf_counter()
        n_solves = max(1, reps // 10)
        for _ in range(n_solves):
            solver.solve(state, target)
        per_solve = (time.perf_counter() - t0) / n_solves
        rows.append((backend, per_grad * 1e3, per_solve * 1e3))
    print(f"{'backend':<10} {'loss+grad (ms)':>15} {'cold solve (ms)':>16}")
    for backend, g, s in rows:
        print(f"{backend:<10} {g:>15.3f} {s:>16.2f}")
    speedup = rows[1][1] / rows[0][1]
    print(f"compiled speedup on loss+grad: {speedup:.0f}x")
    return 0


def _cmd_backends(args) -> int:
    print(f"compiled extension available: {compiled_available()}")
    print(f"active backend: {default_backend()}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="coilnav", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample-grids", help="sample oracle grids to JSON")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--classes", nargs="+", default=["small", "large"])
    p.add_argument("--faces", nargs="+", default=["north"])
    p.add_argument("--spacing", type=float, default=2.0)
    p.set_defaults(func=_cmd_sample_grids)

    p = sub.add_parser("fit-field", help="fit grids to a field model")
    p.add_argument("--grids", nargs="+", required=True)
    p.add_argument("--orders", nargs="+", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=_cmd_fit_field)

    p = sub.add_parser("validate-field", help="gradient/divergence checks")
    p.add_argument("--model", required=True)
    p.add_argument("--points", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_validate_field)

    p = sub.add_parser("run", help="one closed-loop experiment")
    p.add_argument("--config")
    p.add_argument("--controller")
    p.add_argument("--trajectory")
    p.add_argument("--rate", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", default="runs/out")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="axis sweep across controllers")
    p.add_argument("--axis", choices=["rate", "noise", "rate_at_fixed_noise"], required=True)
    p.add_argument("--values", nargs="+", type=float)
    p.add_argument("--controllers", nargs="+", default=list(SWEEP_CONTROLLERS))
    p.add_argument("--seeds", nargs="+", type=int, default=list(DEFAULT_SEEDS))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--config")
    p.add_argument("--out-dir", default="runs/sweep")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", help="figure data from sweep results")
    p.add_argument("--results", required=True)
    p.add_argument("--out-dir", default="runs/report")
    p.add_argument("--log", help="trajectory_log.csv for the overlay figure")
    p.add_argument("--trajectory", default="s")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("bench", help="compiled vs python kernel benchmark")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("backends", help="show engine availability")
    p.set_defaults(func=_cmd_backends)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
