"""Command-line front end: ``ddnn {solve,train,sweep,gradcheck,plot}``.

Exit codes: 0 success, 1 numerical or run failure, 2 usage or config error.
Diagnostics go to stderr; each command prints one summary line on stdout.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from ddnn import io, svg
from ddnn.adjoint import interpolate_many
from ddnn.datagen import (
    TOY_HISTORY,
    delay_logistic_rhs,
    gen_toy_linear_dde,
    gen_two_circles,
    toy_rhs,
)
from ddnn.errors import DDNNError
from ddnn.gradcheck import gradcheck
from ddnn.solver import HistorySpec, SolverConfig, solve_dde
from ddnn.trainer import RunConfig, TrajectoryProblem, delay_sweep, train_classifier, train_trajectory

SEED_ENV = "DDNN_SEED"
GRADCHECK_TOL = 1e-3


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"ddnn: {msg}", file=sys.stderr)


# -- solve ------------------------------------------------------------------


def cmd_solve(args) -> int:
    if not args.t_end > 0:
        raise UsageError("--t-end must be positive")
    if args.fixed_h is not None and (args.rtol is not None or args.atol is not None):
        raise UsageError("--fixed-h excludes --rtol/--atol")
    if args.system == "delay-logistic":
        if not args.a > 0:
            raise UsageError("--a must be positive")
        rhs, history = delay_logistic_rhs(args.a), HistorySpec([0.1])
    else:
        rhs, history = toy_rhs(), HistorySpec(TOY_HISTORY)
    if args.fixed_h is not None and not 0 < args.fixed_h <= rhs.tau:
        raise UsageError(f"--fixed-h must lie in (0, {rhs.tau}]")
    try:
        cfg = SolverConfig(
            rtol=1e-6 if args.rtol is None else args.rtol,
            atol=1e-6 if args.atol is None else args.atol,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    traj = solve_dde(rhs, history, 0.0, args.t_end, cfg, fixed_h=args.fixed_h)
    io.write_trajectory_csv(args.out, traj.times, traj.states)
    print(f"wrote {len(traj)} knots to {args.out}")
    return 0


# -- train ------------------------------------------------------------------


def _load_run_config(path) -> RunConfig:
    cfg = io.load_config(path)
    seed = os.environ.get(SEED_ENV)
    if seed is not None:
        try:
            value = int(seed)
            if not 0 <= value < 2**64:
                raise ValueError
        except ValueError:
            raise io.ConfigError(SEED_ENV, f"not a 64-bit unsigned integer: {seed!r}") from None
        cfg = replace(cfg, seed=value)
    return cfg


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    cfg = _load_run_config(args.config)
    if len(cfg.taus) != 1:
        raise io.ConfigError("config.taus", "train takes exactly one delay; use sweep for several")
    out = _out_dir(args.out_dir)
    start = time.perf_counter()
    if cfg.dataset == "two_circles":
        data = gen_two_circles(cfg.n_points, cfg.seed)
        report = train_classifier(cfg, data)
        spec = cfg.field_spec()
    else:
        data = gen_toy_linear_dde(cfg.n_samples)
        report = train_trajectory(cfg, data)
        problem = TrajectoryProblem(cfg, data, report.tau)
        spec = problem.spec
        if not report.diverged:
            _write_predictions(out, problem, report.theta, data)
    io.write_json(out / "model.json", io.model_to_dict(spec, report.theta, {"config": io.config_to_dict(cfg)}))
    io.write_json(out / "report.json", report.summary())
    io.write_json(out / "timing.json", {"wall_seconds": time.perf_counter() - start})
    line = f"tau={report.tau:g} train_mse={report.final_train_loss:.6g}"
    if report.train_accuracy is not None:
        line = f"tau={report.tau:g} train_loss={report.final_train_loss:.6g} train_accuracy={report.train_accuracy:.4f}"
    else:
        line += f" val_mse={report.val_loss:.6g} test_mse={report.test_loss:.6g}"
    print(line)
    if report.diverged:
        _err("training diverged (non-finite loss); report written")
        return 1
    return 0


def _write_predictions(out: Path, problem: TrajectoryProblem, theta, data) -> None:
    _, traj = problem.evaluate(theta)
    pred = np.vstack([problem.history.value[None, :], interpolate_many(traj, problem.later.times)])
    io.write_trajectory_csv(out / "predicted.csv", data.times, pred)
    io.write_trajectory_csv(out / "true.csv", data.times, data.values)


# -- sweep ------------------------------------------------------------------


def cmd_sweep(args) -> int:
    cfg = _load_run_config(args.config)
    if cfg.dataset != "toy":
        raise io.ConfigError("config.dataset", "sweep supports the toy dataset only")
    if len(cfg.taus) < 2:
        raise io.ConfigError("config.taus", "a sweep needs at least two delay candidates")
    if args.parallel < 1:
        raise UsageError("--parallel must be >= 1")
    out = _out_dir(args.out_dir)
    start = time.perf_counter()
    data = gen_toy_linear_dde(cfg.n_samples)
    result = delay_sweep(cfg, data, parallel=args.parallel)
    io.write_csv(out / "sweep.csv", ["tau", "val_mse", "test_mse"], result.rows)
    taus = [r[0] for r in result.rows]
    vals = [r[1] for r in result.rows]
    (out / "sweep.svg").write_text(
        svg.line_chart([("val_mse", taus, vals)], "tau", "validation MSE", "delay sweep"),
        encoding="utf-8",
        newline="",
    )
    io.write_json(out / "timing.json", {"wall_seconds": time.perf_counter() - start})
    finished = [r for r in result.reports if not r.diverged]
    for r in result.reports:
        if r.diverged:
            _err(f"run tau={r.tau:g} diverged; recorded as inf")
    if not finished:
        _err("every run diverged")
        return 1
    print(f"best tau={result.best_tau:g}")
    return 0


def read_sweep_csv(path) -> list[tuple[float, float, float]]:
    header, rows = io.read_csv(path)
    if header != ["tau", "val_mse", "test_mse"]:
        raise ValueError(f"{path}: unexpected header {header}")
    return [tuple(float(x) for x in row) for row in rows]


# -- gradcheck --------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    if not 0 < args.h <= 2.5:
        raise UsageError("--h must lie in (0, 2.5]")
    results = [gradcheck(args.mode, seed, args.h) for seed in range(args.seeds)]
    for r in results:
        print(f"seed {r.seed}: max_rel {r.max_rel:.3e} median_rel {r.median_rel:.3e}", file=sys.stderr)
    worst = max(r.max_rel for r in results)
    median = float(np.median([r.max_rel for r in results]))
    ok = worst < GRADCHECK_TOL
    print(f"mode={args.mode} h={args.h:g} seeds={args.seeds} max_rel={worst:.3e} "
          f"median_rel={median:.3e} {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


# -- plot -------------------------------------------------------------------


def cmd_plot(args) -> int:
    if args.phase:
        x_col, y_cols = "z0", ["z1"]
    else:
        if not args.x or not args.y:
            raise UsageError("--x and --y are required unless --phase is given")
        x_col, y_cols = args.x, [c for c in args.y.split(",") if c]
    series = []
    for path in args.csv:
        try:
            header, rows = io.read_csv(path)
        except OSError as exc:
            raise UsageError(f"cannot read {path}: {exc.strerror}") from None
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        for col in [x_col] + y_cols:
            if col not in header:
                raise UsageError(f"{path}: no column {col!r} (have {','.join(header)})")
        xs = rows[:, header.index(x_col)]
        for col in y_cols:
            name = f"{Path(path).stem}:{col}" if len(args.csv) > 1 or len(y_cols) > 1 else col
            series.append((name, xs, rows[:, header.index(col)]))
    y_label = "z1" if args.phase else ",".join(y_cols)
    text = svg.line_chart(series, x_col, y_label, "phase portrait" if args.phase else "")
    Path(args.out).write_text(text, encoding="utf-8", newline="")
    print(f"wrote {args.out}")
    return 0


# -- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddnn", description="Delay differential neural networks.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="integrate a reference delay system to CSV")
    s.add_argument("--system", required=True, choices=["delay-logistic", "toy-2d"])
    s.add_argument("--a", type=float, default=1.4, help="logistic rate (default 1.4)")
    s.add_argument("--t-end", type=float, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--rtol", type=float)
    s.add_argument("--atol", type=float)
    s.add_argument("--fixed-h", type=float)
    s.set_defaults(func=cmd_solve)

    t = sub.add_parser("train", help="train one model from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out-dir", required=True)
    t.set_defaults(func=cmd_train)

    w = sub.add_parser("sweep", help="train one model per delay candidate")
    w.add_argument("--config", required=True)
    w.add_argument("--out-dir", required=True)
    w.add_argument("--parallel", type=int, default=1)
    w.set_defaults(func=cmd_sweep)

    g = sub.add_parser("gradcheck", help="adjoint gradient versus finite differences")
    g.add_argument("--mode", required=True, choices=["concat", "convex"])
    g.add_argument("--seeds", type=int, default=20)
    g.add_argument("--h", type=float, default=1e-3)
    g.set_defaults(func=cmd_gradcheck)

    q = sub.add_parser("plot", help="render CSV columns as an SVG line chart")
    q.add_argument("--csv", action="append", required=True)
    q.add_argument("--x")
    q.add_argument("--y")
    q.add_argument("--out", required=True)
    q.add_argument("--phase", action="store_true", help="plot z0 against z1")
    q.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on bad flags
    try:
        return args.func(args)
    except (UsageError, io.ConfigError) as exc:
        _err(str(exc))
        return 2
    except (DDNNError, FloatingPointError) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
