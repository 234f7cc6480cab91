"""TV-regularized CP decomposition by alternating gradient descent.

The objective is ``0.5 * ||Y - X||_F^2 + lambda_e * TV_e(X) + lambda_t * TV_t(X)``
with ``X = cpd_synthesize(F)``. Gradients are taken with respect to the real and
imaginary parts of a factor jointly (``dF/dRe + i dF/dIm``) so a descent step is
``factor - alpha * gradient``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

from .config import InitStrategy, SolverConfig, StepPolicy
from .exceptions import NumericalFailureError
from .regularization import tv_gradient, tv_value
from .tensor import (
    ComplexMatrix,
    ComplexTensor3,
    FactorSet,
    cpd_synthesize,
    frobenius_norm,
    khatri_rao,
    mode_khatri_rao,
    random_factors,
    unfold,
)


logger = logging.getLogger(__name__)

_EPSILON_SCALE = 1e-8
_MODES = (1, 2, 3)


class Termination(str, Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    STALLED = "stalled"


@dataclass(slots=True)
class Diagnostics:
    objective_trace: list[float] = field(default_factory=list)
    step_trace: list[float] = field(default_factory=list)
    termination: Termination = Termination.MAX_ITERS
    iterations: int = 0
    best_restart: int = 0
    initial_objective: float = math.nan
    restart_objectives: list[float] = field(default_factory=list)


class CpdTvResult(NamedTuple):
    factors: FactorSet
    estimate: ComplexTensor3
    diagnostics: Diagnostics


def resolve_epsilon(Y: ComplexTensor3, cfg: SolverConfig) -> float:
    """TV smoothing for ``cfg``; derived from the data scale when unset."""
    if cfg.epsilon is not None:
        return cfg.epsilon
    scale = float(np.mean(np.abs(Y)))
    return _EPSILON_SCALE * scale if scale > 0 else _EPSILON_SCALE


def _check_dims(Y: ComplexTensor3, F: FactorSet) -> None:
    if Y.shape != F.dims:
        raise ValueError(f"tensor dims {Y.shape} do not match factor dims {F.dims}")


def _objective_of(Y: ComplexTensor3, X: ComplexTensor3, cfg: SolverConfig, eps: float) -> float:
    value = 0.5 * frobenius_norm(Y - X) ** 2
    if cfg.lambda_e > 0:
        value += cfg.lambda_e * tv_value(X, "echo", cfg.tv_variant, eps)
    if cfg.lambda_t > 0:
        value += cfg.lambda_t * tv_value(X, "motion", cfg.tv_variant, eps)
    return value


def objective(
    Y: ComplexTensor3, F: FactorSet, cfg: SolverConfig, *, epsilon: float | None = None
) -> float:
    """CPD-TV objective; the smoothed TV is used for ``TvVariant.SMOOTHED_L1``."""
    _check_dims(Y, F)
    eps = epsilon if epsilon is not None else resolve_epsilon(Y, cfg)
    return _objective_of(Y, cpd_synthesize(F), cfg, eps)


def _tensor_gradient(
    Y: ComplexTensor3, X: ComplexTensor3, cfg: SolverConfig, eps: float
) -> ComplexTensor3:
    G = X - Y
    if cfg.lambda_e > 0:
        G = G + cfg.lambda_e * tv_gradient(X, "echo", cfg.tv_variant, eps)
    if cfg.lambda_t > 0:
        G = G + cfg.lambda_t * tv_gradient(X, "motion", cfg.tv_variant, eps)
    return G


def _chain(G: ComplexTensor3, F: FactorSet, mode: int) -> ComplexMatrix:
    return unfold(G, mode) @ np.conj(mode_khatri_rao(F, mode))


def factor_gradient(
    Y: ComplexTensor3,
    F: FactorSet,
    mode: int,
    cfg: SolverConfig,
    *,
    epsilon: float | None = None,
) -> ComplexMatrix:
    """Gradient of :func:`objective` with respect to factor ``mode`` (1=A, 2=B, 3=C)."""
    _check_dims(Y, F)
    if mode not in _MODES:
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")
    eps = epsilon if epsilon is not None else resolve_epsilon(Y, cfg)
    return _chain(_tensor_gradient(Y, cpd_synthesize(F), cfg, eps), F, mode)


def _unit_columns(M: ComplexMatrix) -> ComplexMatrix:
    norms = np.linalg.norm(M, axis=0)
    return M / np.where(norms > 0, norms, 1.0)


def initialize_factors(
    Y: ComplexTensor3,
    R: int,
    strategy: InitStrategy = InitStrategy.SEEDED_RANDOM,
    seed: int | Sequence[int] = 0,
) -> FactorSet:
    """Starting point for the descent.

    ``seeded_random`` draws unit-norm complex normal columns and scales C so the
    synthesized tensor has the norm of Y. ``svd_leading`` takes the leading left
    singular vectors of each unfolding (random unit columns beyond the mode's
    dimension) and scales each component of C by its projection onto Y.
    """
    if R < 1:
        raise ValueError(f"rank must be positive, got {R}")
    rng = np.random.default_rng(seed)
    base = random_factors(Y.shape, R, rng)
    factors = [_unit_columns(base.A), _unit_columns(base.B), _unit_columns(base.C)]

    if InitStrategy(strategy) is InitStrategy.SVD_LEADING:
        for index, mode in enumerate(_MODES):
            U, _, _ = np.linalg.svd(unfold(Y, mode), full_matrices=False)
            keep = min(R, U.shape[1])
            factors[index][:, :keep] = U[:, :keep]
        A, B, C = factors
        projections = np.sum(
            np.conj(A) * (unfold(Y, 1) @ np.conj(khatri_rao(C, B))), axis=0
        )
        return FactorSet(A, B, C * projections)

    F = FactorSet(*factors)
    synth_norm = frobenius_norm(cpd_synthesize(F))
    target = frobenius_norm(Y)
    if synth_norm > 0:
        F = F.replace(3, F.C * (target / synth_norm))
    return F


def normalize_factors(F: FactorSet) -> FactorSet:
    """Give A and B unit columns, absorbing the scale into C. Zero columns are kept."""
    a_norms = np.linalg.norm(F.A, axis=0)
    b_norms = np.linalg.norm(F.B, axis=0)
    a_scale = np.where(a_norms > 0, a_norms, 1.0)
    b_scale = np.where(b_norms > 0, b_norms, 1.0)
    return FactorSet(F.A / a_scale, F.B / b_scale, F.C * (a_scale * b_scale))


@dataclass(slots=True)
class _RestartOutcome:
    restart: int
    factors: FactorSet
    objective: float
    diagnostics: Diagnostics


class CpdTvSolver:
    """Runs one CPD-TV solve for a fixed input tensor and configuration."""

    def __init__(self, Y: ComplexTensor3, cfg: SolverConfig) -> None:
        if Y.ndim != 3 or min(Y.shape) < 1:
            raise ValueError(f"expected a non-empty 3-way tensor, got shape {Y.shape}")
        self.Y = Y
        self.cfg = cfg
        self.epsilon = resolve_epsilon(Y, cfg)

    def solve(self) -> CpdTvResult:
        cfg = self.cfg
        restarts = range(cfg.n_restarts)
        if cfg.threads > 1 and cfg.n_restarts > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                outcomes = list(pool.map(self._run_restart, restarts))
        else:
            outcomes = [self._run_restart(restart) for restart in restarts]

        best = min(outcomes, key=lambda outcome: (outcome.objective, outcome.restart))
        diagnostics = best.diagnostics
        diagnostics.best_restart = best.restart
        diagnostics.restart_objectives = [outcome.objective for outcome in outcomes]
        logger.info(
            "best restart %s of %s: objective=%.6g termination=%s iterations=%s",
            best.restart,
            cfg.n_restarts,
            best.objective,
            diagnostics.termination.value,
            diagnostics.iterations,
        )
        return CpdTvResult(best.factors, cpd_synthesize(best.factors), diagnostics)

    def _evaluate(self, F: FactorSet) -> tuple[ComplexTensor3, float]:
        X = cpd_synthesize(F)
        return X, _objective_of(self.Y, X, self.cfg, self.epsilon)

    def _trial(
        self, F: FactorSet, mode: int, updated: ComplexMatrix
    ) -> tuple[FactorSet | None, ComplexTensor3 | None, float]:
        if not np.all(np.isfinite(updated)):
            return None, None, math.inf
        candidate = F.replace(mode, updated)
        X, value = self._evaluate(candidate)
        return candidate, X, value

    def _run_restart(self, restart: int) -> _RestartOutcome:
        cfg = self.cfg
        F = initialize_factors(self.Y, cfg.rank, cfg.init, seed=[cfg.seed, restart])
        F = normalize_factors(F)
        X, current = self._evaluate(F)
        if not math.isfinite(current):
            raise NumericalFailureError(0, current, restart=restart)

        diagnostics = Diagnostics(initial_objective=current)
        last_steps = {mode: cfg.step_size for mode in _MODES}
        logger.info(
            "restart %s: rank=%s lambda_e=%s lambda_t=%s initial objective=%.6g",
            restart,
            cfg.rank,
            cfg.lambda_e,
            cfg.lambda_t,
            current,
        )

        for iteration in range(1, cfg.max_outer_iters + 1):
            previous = current
            exhausted = 0
            for mode in _MODES:
                F, X, current, step, accepted = self._update(
                    F, X, current, mode, last_steps[mode], iteration, restart
                )
                if step > 0:
                    last_steps[mode] = step
                elif not accepted:
                    exhausted += 1
                diagnostics.step_trace.append(step)
                F = normalize_factors(F)

            diagnostics.objective_trace.append(current)
            diagnostics.iterations = iteration
            logger.debug(
                "restart %s iteration %s: objective=%.10g steps=%s",
                restart,
                iteration,
                current,
                diagnostics.step_trace[-3:],
            )

            if exhausted == len(_MODES):
                logger.warning(
                    "restart %s stalled at iteration %s: no step satisfied the Armijo condition",
                    restart,
                    iteration,
                )
                diagnostics.termination = Termination.STALLED
                break
            if previous == 0.0 or abs(previous - current) < cfg.rel_tol * abs(previous):
                diagnostics.termination = Termination.CONVERGED
                break
        else:
            diagnostics.termination = Termination.MAX_ITERS

        logger.info(
            "restart %s finished: objective=%.6g termination=%s iterations=%s",
            restart,
            current,
            diagnostics.termination.value,
            diagnostics.iterations,
        )
        return _RestartOutcome(restart, F, current, diagnostics)

    def _update(
        self,
        F: FactorSet,
        X: ComplexTensor3,
        current: float,
        mode: int,
        last_step: float,
        iteration: int,
        restart: int,
    ) -> tuple[FactorSet, ComplexTensor3, float, float, bool]:
        """One gradient step on factor ``mode``.

        Returns the new factors, their synthesis, objective, the step taken and
        whether the step counts as accepted (a zero gradient is accepted with
        step 0; exhausting the backtracking is not).
        """
        cfg = self.cfg
        gradient = _chain(_tensor_gradient(self.Y, X, cfg, self.epsilon), F, mode)
        decrease = float(np.vdot(gradient, gradient).real)
        if decrease == 0.0:
            return F, X, current, 0.0, True
        factor = F.factor(mode)

        if cfg.step_policy is StepPolicy.FIXED:
            step = cfg.step_size
            candidate, X_new, value = self._trial(F, mode, factor - step * gradient)
            if candidate is None or not math.isfinite(value):
                raise NumericalFailureError(iteration, value, restart=restart)
            return candidate, X_new, value, step, True

        step = min(cfg.step_size, 2.0 * last_step)
        for _ in range(cfg.max_backtracks + 1):
            candidate, X_new, value = self._trial(F, mode, factor - step * gradient)
            sufficient = value <= current - cfg.armijo_c * step * decrease
            if candidate is not None and math.isfinite(value) and sufficient:
                return candidate, X_new, value, step, True
            step *= cfg.shrink
        logger.debug(
            "restart %s iteration %s mode %s: backtracking exhausted", restart, iteration, mode
        )
        return F, X, current, 0.0, False


def solve_cpdtv(Y: ComplexTensor3, cfg: SolverConfig) -> CpdTvResult:
    """Fit a rank-``cfg.rank`` CPD-TV model to ``Y``; best of ``cfg.n_restarts``."""
    return CpdTvSolver(Y, cfg).solve()


__all__ = [
    "CpdTvResult",
    "CpdTvSolver",
    "Diagnostics",
    "Termination",
    "factor_gradient",
    "initialize_factors",
    "normalize_factors",
    "objective",
    "resolve_epsilon",
    "solve_cpdtv",
]
