"""Command line interface for the cpdtv project.

Subcommands: ``phantom``, ``solve``, ``metrics``, ``sweep``, ``export``,
``average`` and ``gate``. Every invocation ends with ``ok`` or ``error: <reason>`` on stderr
and exits 0 (success), 2 (usage), 3 (I/O) or 4 (numerical failure).
"""

from __future__ import annotations

import argparse
import itertools
import logging
import shutil
import sys
from pathlib import Path
from typing import Callable

from .config import InitStrategy, Settings, StepPolicy, TvVariant, get_settings
from .exceptions import Ct3FormatError, NumericalFailureError, UsageError
from .fileio import (
    export_slice,
    grid_from_metadata,
    metadata_path,
    read_ct3,
    read_metadata,
    write_ct3,
    write_metadata,
    write_trace,
)
from .metrics import motion_average, nrmse, psnr, rank_sweep
from .phantom import GATING_ACCEPTANCE, PhantomConfig, hard_gating, simulate
from .solver import solve_cpdtv


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def _parse_list(value: str | None, cast: Callable[[str], object], what: str) -> list | None:
    if value is None:
        return None
    try:
        items = [cast(item.strip()) for item in value.split(",") if item.strip()]
    except ValueError:
        raise UsageError(f"could not parse {what}: {value!r}") from None
    if not items:
        raise UsageError(f"no {what} given")
    return items


def _parse_grid(value: str) -> tuple[int, int, int]:
    grid = _parse_list(value, int, "grid")
    if grid is None or len(grid) != 3 or min(grid) < 1:  # type: ignore[type-var]
        raise UsageError(f"--grid expects three positive counts nx,ny,nz, got {value!r}")
    return tuple(grid)  # type: ignore[return-value]


def _parse_window(value: str) -> tuple[float, float] | None:
    if value == "auto":
        return None
    bounds = _parse_list(value, float, "window")
    if bounds is None or len(bounds) != 2:
        raise UsageError(f"--window expects 'auto' or lo,hi, got {value!r}")
    return bounds[0], bounds[1]  # type: ignore[return-value]


def _threads(args: argparse.Namespace, settings: Settings) -> int:
    if args.threads is None:
        return settings.worker_count()
    if args.threads < 1:
        raise UsageError(f"--threads expects a positive count, got {args.threads}")
    return args.threads


def _configure_logging(level: str | None) -> None:
    if level is None:
        return
    numeric_level = getattr(logging, level.upper(), None)
    if not isinstance(numeric_level, int):
        raise UsageError(f"unknown log level: {level}")
    logging.basicConfig(
        level=numeric_level,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        force=True,
    )


def _copy_metadata(source: Path, target: Path) -> None:
    sidecar = metadata_path(source)
    if sidecar.exists():
        shutil.copyfile(sidecar, metadata_path(target))


def _add_solver_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--variant", choices=[v.value for v in TvVariant], default=None)
    parser.add_argument("--max-iters", type=int, default=None, help="Outer iteration budget")
    parser.add_argument("--tol", type=float, default=None, help="Relative objective change")
    parser.add_argument("--restarts", type=int, default=None, help="Independent initializations")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--init", choices=[s.value for s in InitStrategy], default=None)
    parser.add_argument("--step", choices=[s.value for s in StepPolicy], default=None)
    parser.add_argument("--step-size", type=float, default=None, help="Fixed or initial step")
    parser.add_argument("--epsilon", type=float, default=None, help="TV smoothing")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads")


def _add_log_level(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--log-level", default=None, help="Logging level, e.g. INFO or DEBUG")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="cpdtv", description="CPD-TV artifact removal utilities")
    subparsers = parser.add_subparsers(dest="command", required=True)

    phantom_parser = subparsers.add_parser("phantom", help="Simulate ground truth and input")
    phantom_parser.add_argument("--out", required=True, help="Undersampled tensor Y")
    phantom_parser.add_argument("--truth-out", required=True, help="Ground truth tensor")
    phantom_parser.add_argument("--grid", default="32,32,8", help="nx,ny,nz")
    phantom_parser.add_argument("--echoes", type=int, default=6)
    phantom_parser.add_argument("--states", type=int, default=6)
    phantom_parser.add_argument("--accel", type=float, default=6.0)
    phantom_parser.add_argument("--seed", type=int, default=0)
    phantom_parser.add_argument("--motion-amp", type=float, default=1.5, help="Voxels")
    phantom_parser.add_argument("--threads", type=int, default=None, help="FFT workers")
    _add_log_level(phantom_parser)

    solve_parser = subparsers.add_parser("solve", help="Run CPD-TV on a tensor")
    solve_parser.add_argument("--in", dest="input", required=True)
    solve_parser.add_argument("--out", required=True)
    solve_parser.add_argument("--rank", type=int, default=None)
    solve_parser.add_argument("--lambda-e", type=float, default=None)
    solve_parser.add_argument("--lambda-t", type=float, default=None)
    solve_parser.add_argument("--trace-out", default=None, help="CSV objective trace")
    _add_solver_flags(solve_parser)
    _add_log_level(solve_parser)

    metrics_parser = subparsers.add_parser("metrics", help="Compare a tensor to a reference")
    metrics_parser.add_argument("--test", required=True)
    metrics_parser.add_argument("--ref", required=True)
    _add_log_level(metrics_parser)

    sweep_parser = subparsers.add_parser("sweep", help="Rank (and lambda) sweep")
    sweep_parser.add_argument("--in", dest="input", required=True)
    sweep_parser.add_argument("--truth", required=True)
    sweep_parser.add_argument("--ranks", default="5,10,13,20,30")
    sweep_parser.add_argument("--lambda-e", default=None, help="Comma separated values")
    sweep_parser.add_argument("--lambda-t", default=None, help="Comma separated values")
    sweep_parser.add_argument("--out", required=True)
    _add_solver_flags(sweep_parser)
    _add_log_level(sweep_parser)

    export_parser = subparsers.add_parser("export", help="Write a magnitude slice as PGM")
    export_parser.add_argument("--in", dest="input", required=True)
    export_parser.add_argument("--echo", type=int, default=0)
    export_parser.add_argument("--state", type=int, default=0)
    export_parser.add_argument("--out", required=True)
    export_parser.add_argument("--window", default="auto", help="'auto' or lo,hi")
    export_parser.add_argument("--grid", default=None, help="nx,ny,nz; defaults to sidecar")
    _add_log_level(export_parser)

    gate_parser = subparsers.add_parser("gate", help="Hard-gated baseline from the ground truth")
    gate_parser.add_argument("--truth", required=True)
    gate_parser.add_argument("--out", required=True)
    gate_parser.add_argument("--accel", type=float, default=None, help="Defaults to the sidecar value")
    gate_parser.add_argument("--acceptance", type=float, default=GATING_ACCEPTANCE)
    gate_parser.add_argument("--state", type=int, default=0, help="Gated motion state")
    gate_parser.add_argument("--seed", type=int, default=None, help="Defaults to the sidecar value")
    gate_parser.add_argument("--grid", default=None, help="nx,ny,nz; defaults to sidecar")
    gate_parser.add_argument("--threads", type=int, default=None, help="FFT workers")
    _add_log_level(gate_parser)

    average_parser = subparsers.add_parser("average", help="Motion-averaged baseline")
    average_parser.add_argument("--in", dest="input", required=True)
    average_parser.add_argument("--out", required=True)
    _add_log_level(average_parser)

    return parser


def _cmd_phantom(args: argparse.Namespace, settings: Settings) -> None:
    cfg = PhantomConfig(
        grid=_parse_grid(args.grid),
        echoes=args.echoes,
        states=args.states,
        acceleration=args.accel,
        seed=args.seed,
        motion_amplitude=args.motion_amp,
    )
    X_true, Y = simulate(cfg, workers=_threads(args, settings))
    nx, ny, nz = cfg.grid
    metadata = {
        "nx": nx,
        "ny": ny,
        "nz": nz,
        "te_first": cfg.te_first,
        "delta_te": cfg.delta_te,
        "acceleration": cfg.acceleration,
        "seed": cfg.seed,
    }
    for tensor, path in ((Y, args.out), (X_true, args.truth_out)):
        write_ct3(tensor, path)
        write_metadata(path, metadata)
    logger.info("phantom %s written to %s and %s", Y.shape, args.out, args.truth_out)


def _solver_overrides(args: argparse.Namespace) -> dict[str, object]:
    return {
        "tv_variant": args.variant,
        "max_outer_iters": args.max_iters,
        "rel_tol": args.tol,
        "n_restarts": args.restarts,
        "seed": args.seed,
        "init": args.init,
        "step_policy": args.step,
        "step_size": args.step_size,
        "epsilon": args.epsilon,
    }


def _cmd_solve(args: argparse.Namespace, settings: Settings) -> None:
    threads = _threads(args, settings)
    Y = read_ct3(args.input)
    cfg = settings.solver_config(
        rank=args.rank,
        lambda_e=args.lambda_e,
        lambda_t=args.lambda_t,
        threads=threads,
        **_solver_overrides(args),
    )
    result = solve_cpdtv(Y, cfg)
    write_ct3(result.estimate, args.out)
    _copy_metadata(Path(args.input), Path(args.out))
    if args.trace_out:
        write_trace(result.diagnostics.objective_trace, args.trace_out)
    logger.info(
        "solve finished: termination=%s iterations=%s objective=%s",
        result.diagnostics.termination.value,
        result.diagnostics.iterations,
        result.diagnostics.objective_trace[-1] if result.diagnostics.objective_trace else None,
    )


def _format_value(value: float) -> str:
    return f"{value:.6g}"


def _cmd_metrics(args: argparse.Namespace, settings: Settings) -> None:
    test = read_ct3(args.test)
    reference = read_ct3(args.ref)
    print(f"nrmse={_format_value(nrmse(test, reference))} psnr={_format_value(psnr(test, reference))}")


def _cmd_sweep(args: argparse.Namespace, settings: Settings) -> None:
    ranks = _parse_list(args.ranks, int, "ranks")
    lambda_e = _parse_list(args.lambda_e, float, "lambda-e") or [settings.lambda_e]
    lambda_t = _parse_list(args.lambda_t, float, "lambda-t") or [settings.lambda_t]
    threads = _threads(args, settings)
    Y = read_ct3(args.input)
    X_true = read_ct3(args.truth)
    cfg = settings.solver_config(threads=1, **_solver_overrides(args))
    result = rank_sweep(
        Y,
        X_true,
        ranks,  # type: ignore[arg-type]
        cfg,
        lambdas=list(itertools.product(lambda_e, lambda_t)),
        threads=threads,
    )
    result.to_csv(args.out)
    if result.errors:
        logger.warning("%s of %s sweep rows failed", len(result.errors), len(result.rows))


def _resolve_grid(path: str, grid: str | None) -> tuple[int, int, int]:
    if grid is not None:
        return _parse_grid(grid)
    if metadata_path(path).exists():
        return grid_from_metadata(read_metadata(path))
    raise UsageError(f"no grid for {path}: pass --grid or provide {metadata_path(path)}")


def _cmd_export(args: argparse.Namespace, settings: Settings) -> None:
    grid = _resolve_grid(args.input, args.grid)
    window = _parse_window(args.window)
    X = read_ct3(args.input)
    export_slice(X, args.echo, args.state, args.out, grid, window)


def _cmd_average(args: argparse.Namespace, settings: Settings) -> None:
    write_ct3(motion_average(read_ct3(args.input)), args.out)
    _copy_metadata(Path(args.input), Path(args.out))


def _cmd_gate(args: argparse.Namespace, settings: Settings) -> None:
    workers = _threads(args, settings)
    grid = _resolve_grid(args.truth, args.grid)
    metadata = read_metadata(args.truth) if metadata_path(args.truth).exists() else {}
    acceleration = args.accel
    if acceleration is None:
        if "acceleration" not in metadata:
            raise UsageError(f"no acceleration for {args.truth}: pass --accel")
        acceleration = float(metadata["acceleration"])
    seed = args.seed if args.seed is not None else int(metadata.get("seed", 0))
    gated = hard_gating(
        read_ct3(args.truth),
        grid,
        acceleration,
        seed,
        acceptance=args.acceptance,
        state=args.state,
        workers=workers,
    )
    write_ct3(gated, args.out)
    _copy_metadata(Path(args.truth), Path(args.out))


_COMMANDS: dict[str, Callable[[argparse.Namespace, Settings], None]] = {
    "phantom": _cmd_phantom,
    "solve": _cmd_solve,
    "metrics": _cmd_metrics,
    "sweep": _cmd_sweep,
    "export": _cmd_export,
    "average": _cmd_average,
    "gate": _cmd_gate,
}


def _fail(code: int, exc: BaseException) -> int:
    reason = " ".join(str(exc).split()) or type(exc).__name__
    print(f"error: {reason}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        settings = get_settings()
        _configure_logging(args.log_level or settings.log_level)
        _COMMANDS[args.command](args, settings)
    except NumericalFailureError as exc:
        logger.debug("numerical failure", exc_info=True)
        return _fail(EXIT_NUMERICAL, exc)
    except (OSError, Ct3FormatError) as exc:
        return _fail(EXIT_IO, exc)
    except ValueError as exc:
        return _fail(EXIT_USAGE, exc)
    print("ok", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
