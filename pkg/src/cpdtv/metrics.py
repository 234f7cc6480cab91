"""Reconstruction quality metrics and the rank sweep experiment."""

from __future__ import annotations

import csv
import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import astuple, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import SolverConfig
from .solver import solve_cpdtv
from .tensor import ComplexTensor3, frobenius_norm


logger = logging.getLogger(__name__)


def _check_same_dims(estimate: ComplexTensor3, reference: ComplexTensor3) -> None:
    if estimate.shape != reference.shape:
        raise ValueError(f"dims differ: {estimate.shape} != {reference.shape}")


def nrmse(estimate: ComplexTensor3, reference: ComplexTensor3) -> float:
    _check_same_dims(estimate, reference)
    reference_norm = frobenius_norm(reference)
    if reference_norm == 0:
        raise ValueError("nrmse is undefined for an all-zero reference")
    return frobenius_norm(estimate - reference) / reference_norm


def psnr(estimate: ComplexTensor3, reference: ComplexTensor3) -> float:
    """Peak SNR in dB of the complex difference; ``math.inf`` for identical tensors."""
    _check_same_dims(estimate, reference)
    rmse = math.sqrt(float(np.mean(np.abs(estimate - reference) ** 2)))
    if rmse == 0.0:
        return math.inf
    peak = float(np.max(np.abs(reference)))
    if peak == 0.0:
        return -math.inf
    return 20.0 * math.log10(peak / rmse)


def motion_average(Y: ComplexTensor3) -> ComplexTensor3:
    """Motion-averaged baseline: every state replaced by the mean over states."""
    mean = np.mean(Y, axis=2, keepdims=True)
    return np.asfortranarray(np.broadcast_to(mean, Y.shape).copy())


@dataclass(slots=True)
class SweepRow:
    rank: int
    lambda_e: float
    lambda_t: float
    nrmse_output: float
    nrmse_input: float
    psnr_output: float
    iterations: int
    wall_seconds: float


SWEEP_HEADER: tuple[str, ...] = tuple(f.name for f in fields(SweepRow))


@dataclass(slots=True)
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)
    errors: dict[int, str] = field(default_factory=dict)
    traces: dict[int, list[float]] = field(default_factory=dict)

    def failed(self, index: int) -> bool:
        return index in self.errors

    def best_row(self) -> SweepRow | None:
        candidates = [row for i, row in enumerate(self.rows) if not self.failed(i)]
        if not candidates:
            return None
        return min(candidates, key=lambda row: row.nrmse_output)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(SWEEP_HEADER)
            for row in self.rows:
                writer.writerow([_format_cell(value) for value in astuple(row)])


def _format_cell(value: object) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _sweep_row(
    Y: ComplexTensor3,
    X_true: ComplexTensor3,
    cfg: SolverConfig,
    input_error: float,
) -> tuple[SweepRow, str | None, list[float]]:
    started = time.perf_counter()
    try:
        result = solve_cpdtv(Y, cfg)
    except Exception as exc:
        logger.warning(
            "sweep row rank=%s lambda_e=%s lambda_t=%s failed",
            cfg.rank,
            cfg.lambda_e,
            cfg.lambda_t,
            exc_info=True,
        )
        row = SweepRow(
            cfg.rank, cfg.lambda_e, cfg.lambda_t, math.nan, input_error, math.nan, 0,
            time.perf_counter() - started,
        )
        return row, str(exc), []
    row = SweepRow(
        rank=cfg.rank,
        lambda_e=cfg.lambda_e,
        lambda_t=cfg.lambda_t,
        nrmse_output=nrmse(result.estimate, X_true),
        nrmse_input=input_error,
        psnr_output=psnr(result.estimate, X_true),
        iterations=result.diagnostics.iterations,
        wall_seconds=time.perf_counter() - started,
    )
    logger.info(
        "sweep row rank=%s lambda_e=%s lambda_t=%s: nrmse=%.5f (input %.5f) iterations=%s",
        row.rank,
        row.lambda_e,
        row.lambda_t,
        row.nrmse_output,
        row.nrmse_input,
        row.iterations,
    )
    return row, None, result.diagnostics.objective_trace


def rank_sweep(
    Y: ComplexTensor3,
    X_true: ComplexTensor3,
    ranks: Sequence[int],
    cfg_base: SolverConfig,
    *,
    lambdas: Iterable[tuple[float, float]] | None = None,
    threads: int = 1,
) -> SweepResult:
    """Solve once per (rank, (lambda_e, lambda_t)) and score against ``X_true``.

    Rows follow the request order (rank-major). A failing solve yields a row
    with ``nan`` metrics and an entry in ``SweepResult.errors``. The objective
    trace of every row is kept in ``SweepResult.traces`` (empty for failures).
    """
    if not ranks:
        raise ValueError("ranks must not be empty")
    _check_same_dims(Y, X_true)
    pairs = list(lambdas) if lambdas is not None else [(cfg_base.lambda_e, cfg_base.lambda_t)]
    configs = [
        cfg_base.model_copy(update={"rank": int(rank), "lambda_e": le, "lambda_t": lt})
        for rank, (le, lt) in itertools.product(ranks, pairs)
    ]
    input_error = nrmse(Y, X_true)

    def run(cfg: SolverConfig) -> tuple[SweepRow, str | None, list[float]]:
        return _sweep_row(Y, X_true, cfg, input_error)

    if threads > 1 and len(configs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, configs))
    else:
        outcomes = [run(cfg) for cfg in configs]

    result = SweepResult()
    for index, (row, error, trace) in enumerate(outcomes):
        result.rows.append(row)
        result.traces[index] = trace
        if error is not None:
            result.errors[index] = error
    return result


__all__ = [
    "SWEEP_HEADER",
    "SweepResult",
    "SweepRow",
    "motion_average",
    "nrmse",
    "psnr",
    "rank_sweep",
]
