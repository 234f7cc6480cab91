from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from cpdtv.config import InitStrategy, SolverConfig, StepPolicy, TvVariant
from cpdtv.exceptions import NumericalFailureError
from cpdtv.solver import (
    Termination,
    factor_gradient,
    initialize_factors,
    normalize_factors,
    objective,
    resolve_epsilon,
    solve_cpdtv,
)
from cpdtv.tensor import FactorSet, cpd_synthesize, frobenius_norm, random_factors


def _complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def _objective_by_loops(Y, F: FactorSet, lambda_e, lambda_t, epsilon=None):
    N, E, T = Y.shape

    def x(i, j, k):
        return sum(F.A[i, r] * F.B[j, r] * F.C[k, r] for r in range(F.rank))

    def modulus(z):
        if epsilon is None:
            return abs(z)
        return math.sqrt(abs(z) ** 2 + epsilon**2) - epsilon

    X = {(i, j, k): x(i, j, k) for i, j, k in itertools.product(range(N), range(E), range(T))}
    fit = 0.5 * sum(abs(Y[key] - value) ** 2 for key, value in X.items())
    tv_e = sum(
        modulus(X[i, j + 1, k] - X[i, j, k])
        for i, j, k in itertools.product(range(N), range(E - 1), range(T))
    )
    tv_t = sum(
        modulus(X[i, j, k + 1] - X[i, j, k])
        for i, j, k in itertools.product(range(N), range(E), range(T - 1))
    )
    return fit + lambda_e * tv_e + lambda_t * tv_t


def _numeric_gradient(Y, F, mode, cfg, h=1e-6):
    M = F.factor(mode)
    numeric = np.zeros_like(M)
    for index in np.ndindex(M.shape):
        for unit in (1.0, 1j):
            plus = M.copy()
            minus = M.copy()
            plus[index] += unit * h
            minus[index] -= unit * h
            slope = (
                objective(Y, F.replace(mode, plus), cfg) - objective(Y, F.replace(mode, minus), cfg)
            ) / (2 * h)
            numeric[index] += unit * slope
    return numeric


def _assert_non_increasing(trace):
    assert all(later <= earlier for earlier, later in zip(trace, trace[1:]))


def test_objective_of_exact_fit_is_zero(small_factors):
    Y = cpd_synthesize(small_factors)
    assert objective(Y, small_factors, SolverConfig(rank=2)) == pytest.approx(0.0, abs=1e-24)


def test_objective_of_zero_factors_is_half_squared_norm(rng, small_factors):
    Y = _complex(rng, (4, 3, 2))
    zero = FactorSet(*(np.zeros_like(small_factors.factor(m)) for m in (1, 2, 3)))
    assert objective(Y, zero, SolverConfig(rank=2)) == pytest.approx(0.5 * frobenius_norm(Y) ** 2)


def test_objective_matches_independent_evaluation(rng):
    for _ in range(50):
        dims = tuple(int(d) for d in rng.integers(1, [6, 5, 4]))
        F = random_factors(dims, int(rng.integers(1, 4)), rng)
        Y = _complex(rng, dims)
        paper = SolverConfig(rank=F.rank, lambda_e=0.1, lambda_t=0.1, tv_variant=TvVariant.PAPER)
        expected = _objective_by_loops(Y, F, 0.1, 0.1)
        assert objective(Y, F, paper) == pytest.approx(expected, rel=1e-12)

        smoothed = paper.model_copy(update={"tv_variant": TvVariant.SMOOTHED_L1, "epsilon": 0.05})
        expected = _objective_by_loops(Y, F, 0.1, 0.1, epsilon=0.05)
        assert objective(Y, F, smoothed) == pytest.approx(expected, rel=1e-12)


def test_objective_rejects_dimension_mismatch(rng, small_factors):
    with pytest.raises(ValueError):
        objective(_complex(rng, (5, 3, 2)), small_factors, SolverConfig(rank=2))


def test_objective_invariant_to_permutation_and_rescaling(rng, small_factors):
    Y = _complex(rng, (4, 3, 2))
    cfg = SolverConfig(rank=2, lambda_e=0.1, lambda_t=0.2, epsilon=1e-3)
    base = objective(Y, small_factors, cfg)
    order = [1, 0]
    permuted = FactorSet(small_factors.A[:, order], small_factors.B[:, order], small_factors.C[:, order])
    assert objective(Y, permuted, cfg) == pytest.approx(base, rel=1e-12)
    s = np.array([2.0 - 1.5j, 0.3j])
    rescaled = FactorSet(small_factors.A * s, small_factors.B, small_factors.C / s)
    assert objective(Y, rescaled, cfg) == pytest.approx(base, rel=1e-12)


def test_gradient_vanishes_at_exact_fit(small_factors):
    Y = cpd_synthesize(small_factors)
    cfg = SolverConfig(rank=2)
    for mode in (1, 2, 3):
        gradient = factor_gradient(Y, small_factors, mode, cfg)
        assert np.linalg.norm(gradient) <= 1e-12 * np.linalg.norm(small_factors.factor(mode))


@pytest.mark.parametrize("mode", [1, 2, 3])
def test_data_gradient_matches_finite_differences(rng, small_factors, mode):
    Y = _complex(rng, (4, 3, 2))
    cfg = SolverConfig(rank=2)
    analytic = factor_gradient(Y, small_factors, mode, cfg)
    numeric = _numeric_gradient(Y, small_factors, mode, cfg)
    assert np.linalg.norm(analytic - numeric) <= 1e-5 * np.linalg.norm(numeric)


def test_full_gradient_matches_finite_differences(rng):
    for _ in range(50):
        dims = tuple(int(d) for d in rng.integers(2, [7, 5, 4]))
        F = random_factors(dims, int(rng.integers(1, 4)), rng)
        Y = _complex(rng, dims)
        cfg = SolverConfig(rank=F.rank, lambda_e=0.1, lambda_t=0.1, epsilon=1e-2)
        for mode in (1, 2, 3):
            analytic = factor_gradient(Y, F, mode, cfg)
            numeric = _numeric_gradient(Y, F, mode, cfg)
            assert np.linalg.norm(analytic - numeric) <= 1e-4 * np.linalg.norm(numeric)


def test_factor_gradient_rejects_bad_mode(rng, small_factors):
    with pytest.raises(ValueError):
        factor_gradient(_complex(rng, (4, 3, 2)), small_factors, 4, SolverConfig(rank=2))


def test_resolve_epsilon_tracks_data_scale(rng):
    Y = _complex(rng, (4, 3, 2))
    assert resolve_epsilon(Y, SolverConfig()) == pytest.approx(1e-8 * np.mean(np.abs(Y)))
    assert resolve_epsilon(Y * 0, SolverConfig()) == 1e-8
    assert resolve_epsilon(Y, SolverConfig(epsilon=0.5)) == 0.5


@pytest.mark.parametrize("strategy", list(InitStrategy))
def test_initialize_factors_is_deterministic(rng, strategy):
    Y = _complex(rng, (6, 4, 3))
    first = initialize_factors(Y, 3, strategy, seed=7)
    second = initialize_factors(Y, 3, strategy, seed=7)
    for mode in (1, 2, 3):
        np.testing.assert_array_equal(first.factor(mode), second.factor(mode))


def test_seeded_random_initialization_scaling(rng):
    Y = _complex(rng, (6, 4, 3))
    F = initialize_factors(Y, 3, InitStrategy.SEEDED_RANDOM, seed=1)
    np.testing.assert_allclose(np.linalg.norm(F.A, axis=0), 1.0, atol=1e-12)
    assert frobenius_norm(cpd_synthesize(F)) == pytest.approx(frobenius_norm(Y), rel=1e-12)


def test_svd_initialization_of_rank_one_tensor(rng):
    F_true = random_factors((6, 4, 3), 1, rng)
    Y = cpd_synthesize(F_true)
    F = initialize_factors(Y, 1, InitStrategy.SVD_LEADING, seed=0)
    error = frobenius_norm(cpd_synthesize(F) - Y) / frobenius_norm(Y)
    assert error < 0.5


def test_svd_initialization_caps_rank_at_mode_dimension(rng):
    Y = _complex(rng, (6, 2, 3))
    F = initialize_factors(Y, 4, InitStrategy.SVD_LEADING, seed=0)
    assert F.rank == 4
    assert F.dims == (6, 2, 3)


def test_initialize_factors_rejects_zero_rank(rng):
    with pytest.raises(ValueError):
        initialize_factors(_complex(rng, (2, 2, 2)), 0)


def test_normalize_factors_preserves_synthesis(small_factors):
    normalized = normalize_factors(small_factors)
    np.testing.assert_allclose(np.linalg.norm(normalized.A, axis=0), 1.0, atol=1e-14)
    np.testing.assert_allclose(np.linalg.norm(normalized.B, axis=0), 1.0, atol=1e-14)
    before = cpd_synthesize(small_factors)
    after = cpd_synthesize(normalized)
    assert frobenius_norm(after - before) <= 1e-13 * frobenius_norm(before)

    again = normalize_factors(normalized)
    for mode in (1, 2, 3):
        np.testing.assert_allclose(again.factor(mode), normalized.factor(mode), atol=1e-15)


def test_normalize_factors_undoes_rescaling(small_factors):
    A = small_factors.A.copy()
    C = small_factors.C.copy()
    A[:, 0] *= 10
    C[:, 0] *= 0.1
    scaled = FactorSet(A, small_factors.B, C)
    np.testing.assert_allclose(
        cpd_synthesize(normalize_factors(scaled)), cpd_synthesize(small_factors), atol=1e-13
    )


def test_normalize_factors_keeps_zero_columns(small_factors):
    A = small_factors.A.copy()
    A[:, 1] = 0
    normalized = normalize_factors(FactorSet(A, small_factors.B, small_factors.C))
    assert not np.any(normalized.A[:, 1])


def test_rank_one_recovery(rng):
    Y = cpd_synthesize(random_factors((8, 4, 3), 1, rng))
    cfg = SolverConfig(rank=1, max_outer_iters=3000, rel_tol=1e-14, n_restarts=3)
    result = solve_cpdtv(Y, cfg)
    assert frobenius_norm(result.estimate - Y) / frobenius_norm(Y) < 1e-6
    _assert_non_increasing(result.diagnostics.objective_trace)


def test_plain_cpd_never_worse_than_initialization(rng):
    Y = _complex(rng, (6, 4, 3))
    cfg = SolverConfig(rank=3, max_outer_iters=50)
    result = solve_cpdtv(Y, cfg)
    diagnostics = result.diagnostics
    assert diagnostics.objective_trace[-1] <= diagnostics.initial_objective
    _assert_non_increasing(diagnostics.objective_trace)
    assert len(diagnostics.step_trace) == 3 * diagnostics.iterations
    assert diagnostics.termination in set(Termination)


def test_tv_solve_trace_is_non_increasing(rng):
    Y = _complex(rng, (10, 4, 4))
    for variant in TvVariant:
        cfg = SolverConfig(rank=2, lambda_e=0.2, lambda_t=0.2, tv_variant=variant, max_outer_iters=40)
        _assert_non_increasing(solve_cpdtv(Y, cfg).diagnostics.objective_trace)


def test_max_iters_termination(rng):
    Y = _complex(rng, (6, 4, 3))
    result = solve_cpdtv(Y, SolverConfig(rank=2, max_outer_iters=3, rel_tol=1e-300))
    assert result.diagnostics.iterations == 3
    assert result.diagnostics.termination is Termination.MAX_ITERS


def test_exhausted_line_search_stalls(rng):
    Y = _complex(rng, (6, 4, 3))
    cfg = SolverConfig(rank=2, step_size=1e8, max_backtracks=0, max_outer_iters=20)
    result = solve_cpdtv(Y, cfg)
    diagnostics = result.diagnostics
    assert diagnostics.termination is Termination.STALLED
    assert diagnostics.iterations == 1
    assert diagnostics.step_trace == [0.0, 0.0, 0.0]
    assert diagnostics.objective_trace == [diagnostics.initial_objective]
    assert np.all(np.isfinite(result.estimate))


def test_zero_input_converges_immediately():
    Y = np.zeros((4, 3, 2), dtype=np.complex128, order="F")
    result = solve_cpdtv(Y, SolverConfig(rank=2))
    assert result.diagnostics.termination is Termination.CONVERGED
    assert not np.any(result.estimate)


def test_solve_is_deterministic(rng):
    Y = _complex(rng, (8, 4, 3))
    cfg = SolverConfig(rank=2, lambda_e=0.05, lambda_t=0.05, max_outer_iters=30, n_restarts=2)
    first = solve_cpdtv(Y, cfg)
    second = solve_cpdtv(Y, cfg)
    assert first.diagnostics.objective_trace == second.diagnostics.objective_trace
    assert first.diagnostics.best_restart == second.diagnostics.best_restart
    np.testing.assert_array_equal(first.estimate, second.estimate)


def test_threaded_restarts_match_serial(rng):
    Y = _complex(rng, (8, 4, 3))
    cfg = SolverConfig(rank=2, max_outer_iters=30, n_restarts=3)
    serial = solve_cpdtv(Y, cfg)
    threaded = solve_cpdtv(Y, cfg.model_copy(update={"threads": 3}))
    assert threaded.diagnostics.best_restart == serial.diagnostics.best_restart
    np.testing.assert_allclose(
        threaded.diagnostics.objective_trace, serial.diagnostics.objective_trace, rtol=1e-10
    )
    np.testing.assert_allclose(
        threaded.diagnostics.restart_objectives, serial.diagnostics.restart_objectives, rtol=1e-10
    )


def test_best_restart_has_lowest_objective(rng):
    Y = _complex(rng, (8, 4, 3))
    result = solve_cpdtv(Y, SolverConfig(rank=2, max_outer_iters=20, n_restarts=4))
    objectives = result.diagnostics.restart_objectives
    assert len(objectives) == 4
    assert objectives[result.diagnostics.best_restart] == min(objectives)


def test_divergent_fixed_step_reports_iteration(rng):
    Y = _complex(rng, (6, 4, 3))
    cfg = SolverConfig(rank=2, step_policy=StepPolicy.FIXED, step_size=1e6, max_outer_iters=500)
    with np.errstate(all="ignore"), pytest.raises(NumericalFailureError) as excinfo:
        solve_cpdtv(Y, cfg)
    assert excinfo.value.iteration >= 1
    assert "iteration" in str(excinfo.value)


def test_solver_rejects_empty_tensor():
    with pytest.raises(ValueError):
        solve_cpdtv(np.zeros((0, 2, 2), dtype=np.complex128), SolverConfig())


@pytest.mark.slow
def test_exact_rank_recovery_with_restarts(rng):
    Y = cpd_synthesize(random_factors((32, 6, 6), 3, rng))
    cfg = SolverConfig(rank=3, n_restarts=10, max_outer_iters=200, rel_tol=1e-12)
    result = solve_cpdtv(Y, cfg)
    assert frobenius_norm(result.estimate - Y) / frobenius_norm(Y) < 1e-3
    _assert_non_increasing(result.diagnostics.objective_trace)
