"""Tests for relaxed GMRES in dense and TT mode."""

from typing import List, Tuple

import numpy as np
import pytest

from ttkry.arith import linear_combination
from ttkry.krylov import (
    DenseSpace,
    TTSpace,
    arnoldi_step,
    gram_matrix,
    hessenberg_lsq,
    operator_closure,
    relax_schedule,
    relaxed_gmres,
)
from ttkry.models.solver import SolverConfig
from ttkry.models.truncation import TruncationSpec
from ttkry.operators import compose, conv_diff_3d, conv_diff_rhs, inv_laplace_expsum
from ttkry.oracle import DenseOperator, condition_number, dense_from_tt, dense_gmres, dense_vector
from ttkry.rounding import MatrixOperator
from ttkry.tensor import TTMatrix, TTTensor, identity, random_tt, random_tt_matrix, zeros


def _dense_apply(matrix: np.ndarray):  # type: ignore[no-untyped-def]
    return lambda v, tolerance: matrix @ v


def _inexact_apply(  # type: ignore[no-untyped-def]
    matrix: np.ndarray, error: np.ndarray, exact_below: float
):
    """Products with a loose tolerance use ``matrix + error``; true residuals stay exact."""
    return lambda v, tolerance: matrix @ v if tolerance <= exact_below else (matrix + error) @ v


def _spd(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return q @ np.diag(np.linspace(1.0, 10.0, n)) @ q.T


def _near_identity(shape: tuple, seed: int) -> TTMatrix:
    """I + E with ||E||_2 = 0.5 so the system is well conditioned."""
    perturbation = random_tt_matrix(shape, 2, np.random.default_rng(seed))
    size = float(np.linalg.norm(dense_from_tt(perturbation).matrix, 2))
    eye = identity(shape)
    combined = linear_combination([1.0, 0.5 / size], [eye.as_tensor(), perturbation.as_tensor()])
    return TTMatrix.from_tensor(combined, shape, shape)


def _tt_basis(a: TTMatrix, start: TTTensor, deltas: List[float]) -> Tuple[List[TTTensor], List[np.ndarray]]:
    space = TTSpace()
    apply = operator_closure(MatrixOperator(a))
    basis = [space.scale(start, 1.0 / space.norm(start))]
    columns = []
    for delta in deltas:
        step = arnoldi_step(apply, space, basis, delta)
        assert step.vector is not None
        columns.append(step.column)
        basis.append(step.vector)
    return basis, columns


class TestRelaxSchedule:
    """Tests for the product tolerance schedule."""

    def test_relaxed(self) -> None:
        cfg = SolverConfig(eps=1e-5)
        assert relax_schedule(1e-5, 1e-2, cfg) == pytest.approx(1e-3)

    def test_capped(self) -> None:
        cfg = SolverConfig(eps=1e-5, delta_cap=0.1)
        assert relax_schedule(1e-5, 1e-5, cfg) == 0.1
        assert relax_schedule(1e-5, 0.0, cfg) == 0.1

    def test_off(self) -> None:
        cfg = SolverConfig(eps=1e-5, relaxation=False)
        assert relax_schedule(1e-5, 1e-3, cfg) == 1e-5

    def test_fixed(self) -> None:
        cfg = SolverConfig(eps=1e-5, fixed_delta=1e-14)
        assert relax_schedule(1e-5, 1e-3, cfg) == 1e-14
        assert cfg.residual_tol == 1e-14

    def test_cap_below_eps(self) -> None:
        with pytest.raises(ValueError, match="delta_cap"):
            SolverConfig(eps=0.5, delta_cap=0.1)

    def test_default_cap_follows_restart_length(self) -> None:
        assert relax_schedule(1e-5, 1e-6, SolverConfig(eps=1e-5)) == pytest.approx(1 / 80)
        cfg = SolverConfig(eps=1e-5, restart_m=10, cond_estimate=4.0)
        assert relax_schedule(1e-5, 1e-7, cfg) == pytest.approx(1 / 40)
        assert relax_schedule(1e-5, 1e-2, cfg) == pytest.approx(1e-3)

    def test_default_cap_never_below_eps(self) -> None:
        assert SolverConfig(eps=0.1).effective_delta_cap == 0.1

    def test_true_residual_bound(self) -> None:
        assert SolverConfig(eps=1e-5).true_residual_bound == pytest.approx(3e-5)
        assert SolverConfig(eps=1e-5, cond_estimate=3.0).true_residual_bound == pytest.approx(5e-5)
        assert SolverConfig(eps=1e-5, accept_factor=1.0).true_residual_bound == 1e-5


class TestHessenbergLsq:
    """Tests for the reduced least-squares problem."""

    def test_matches_lstsq(self) -> None:
        rng = np.random.default_rng(0)
        h = np.triu(rng.standard_normal((5, 4)), k=-1)
        solution = hessenberg_lsq(h, 2.0)
        rhs = np.zeros(5)
        rhs[0] = 2.0
        expected, *_ = np.linalg.lstsq(h, rhs, rcond=None)
        np.testing.assert_allclose(solution.y, expected, atol=1e-12)
        assert solution.residual == pytest.approx(float(np.linalg.norm(rhs - h @ expected)), abs=1e-12)
        assert not solution.rank_deficient
        assert solution.sigma_min is not None and solution.sigma_min > 0

    def test_rank_deficient(self) -> None:
        h = np.array([[1.0, 1.0], [0.0, 0.0], [0.0, 0.0]])
        solution = hessenberg_lsq(h, 1.0)
        assert solution.rank_deficient
        assert solution.residual == pytest.approx(0.0, abs=1e-12)

    def test_shape(self) -> None:
        with pytest.raises(ValueError, match="expected a"):
            hessenberg_lsq(np.zeros((3, 3)), 1.0)


class TestArnoldi:
    """Tests for one Arnoldi step."""

    def test_dense_orthonormal(self) -> None:
        a = _spd(10, 1)
        space = DenseSpace()
        v = np.ones(10) / np.sqrt(10)
        basis = [v]
        for _ in range(4):
            step = arnoldi_step(_dense_apply(a), space, basis, 0.0)
            assert step.vector is not None
            basis.append(step.vector)
        np.testing.assert_allclose(gram_matrix(space, basis), np.eye(5), atol=1e-12)

    def test_tt_column_matches_dense(self) -> None:
        rng = np.random.default_rng(2)
        shape = (3, 3, 3)
        a = random_tt_matrix(shape, 2, rng)
        dense_a = dense_from_tt(a).matrix
        start = random_tt(shape, 2, rng)
        space = TTSpace()
        tt_basis = [space.scale(start, 1.0 / space.norm(start))]
        dense_basis = [dense_vector(tt_basis[0])]
        apply_tt = operator_closure(MatrixOperator(a))
        for _ in range(3):
            tt_step = arnoldi_step(apply_tt, space, tt_basis, 1e-14)
            dense_step = arnoldi_step(_dense_apply(dense_a), DenseSpace(), dense_basis, 0.0)
            np.testing.assert_allclose(tt_step.column, dense_step.column, rtol=1e-8, atol=1e-8)
            assert tt_step.vector is not None and dense_step.vector is not None
            tt_basis.append(tt_step.vector)
            dense_basis.append(dense_step.vector)

    def test_breakdown(self) -> None:
        space = DenseSpace()
        step = arnoldi_step(_dense_apply(np.eye(4)), space, [np.eye(4)[0]], 0.0)
        assert step.breakdown
        assert step.vector is None
        assert step.column[-1] == 0.0


class TestInexactArnoldiTT:
    """Invariants of the Arnoldi process under rounded products."""

    @pytest.mark.parametrize("delta", [1e-2, 1e-4])
    def test_gram_drift_bounded(self, delta: float) -> None:
        shape = (4, 4, 4)
        a = _near_identity(shape, 41)
        basis, _ = _tt_basis(a, random_tt(shape, 2, np.random.default_rng(40)), [delta] * 8)
        space = TTSpace()
        for j in range(2, len(basis) + 1):
            drift = np.linalg.norm(gram_matrix(space, basis[:j]) - np.eye(j), 2)
            assert drift <= 10 * j * delta

    @pytest.mark.parametrize("delta", [1e-3, 1e-6])
    def test_reduction_identity(self, delta: float) -> None:
        shape = (4, 4, 4)
        a = _near_identity(shape, 42)
        dense_a = dense_from_tt(a).matrix
        basis, columns = _tt_basis(a, random_tt(shape, 2, np.random.default_rng(43)), [delta] * 6)
        vectors = [dense_vector(v) for v in basis]
        for j, column in enumerate(columns):
            applied = dense_a @ vectors[j]
            reduced = sum(h * v for h, v in zip(column, vectors[: j + 2]))
            assert np.linalg.norm(applied - reduced) <= 2 * delta * np.linalg.norm(applied) + 1e-12


class TestTTSpace:
    """Tests for rounded linear combinations."""

    def test_single_rounding_below_limit(self) -> None:
        rng = np.random.default_rng(3)
        vectors = [random_tt((3, 3, 3), 2, rng) for _ in range(3)]
        result = TTSpace().combine([1.0, -2.0, 0.5], vectors, 1e-10)
        expected = dense_vector(vectors[0]) - 2 * dense_vector(vectors[1]) + 0.5 * dense_vector(vectors[2])
        np.testing.assert_allclose(dense_vector(result), expected, atol=1e-8)

    def test_chunked_sum(self) -> None:
        rng = np.random.default_rng(4)
        vectors = [random_tt((4, 4, 4), 3, rng) for _ in range(6)]
        coefficients = [1.0, 0.5, -1.0, 2.0, -0.25, 1.5]
        tol = 1e-6
        result = TTSpace(formal_rank_limit=6).combine(coefficients, vectors, tol)
        expected = sum(c * dense_vector(v) for c, v in zip(coefficients, vectors))
        bound = tol * np.sqrt(sum((c * np.linalg.norm(dense_vector(v))) ** 2 for c, v in zip(coefficients, vectors)))
        assert np.linalg.norm(dense_vector(result) - expected) <= bound * (1 + 1e-8)

    def test_exact_when_untruncated(self) -> None:
        rng = np.random.default_rng(5)
        vectors = [random_tt((2, 2), 1, rng) for _ in range(2)]
        result = TTSpace().combine([1.0, 1.0], vectors, None)
        assert result.ranks == [1, 2, 1]


class TestRelaxedGmresDense:
    """Dense-mode runs checked against direct solves and the textbook solver."""

    def test_identity_one_iteration(self) -> None:
        b = np.arange(1.0, 6.0)
        x, record = relaxed_gmres(_dense_apply(np.eye(5)), b, np.zeros(5), SolverConfig(eps=1e-10))
        assert record.converged
        assert record.iteration_count == 1
        np.testing.assert_allclose(x, b, atol=1e-12)

    def test_spd_system(self) -> None:
        a = _spd(50, 6)
        b = np.random.default_rng(7).standard_normal(50)
        x, record = relaxed_gmres(_dense_apply(a), b, np.zeros(50), SolverConfig(eps=1e-10))
        assert record.converged
        assert np.linalg.norm(a @ x - b) / np.linalg.norm(b) <= 1.01e-10

    def test_two_eigenvalues(self) -> None:
        a = np.diag([1.0] * 5 + [3.0] * 5)
        b = np.random.default_rng(8).standard_normal(10)
        _, record = relaxed_gmres(_dense_apply(a), b, np.zeros(10), SolverConfig(eps=1e-10))
        assert record.converged
        assert record.iteration_count == 2

    def test_matches_textbook_history(self) -> None:
        a = _spd(30, 9) + np.triu(np.ones((30, 30)), 1) * 0.05
        b = np.random.default_rng(10).standard_normal(30)
        cfg = SolverConfig(eps=1e-8, restart_m=10, max_restarts=5, fixed_delta=1e-14)
        _, record = relaxed_gmres(_dense_apply(a), b, np.zeros(30), cfg)
        _, reference = dense_gmres(DenseOperator((30,), a), b, None, cfg)
        assert record.iteration_count == reference.iteration_count
        np.testing.assert_allclose(record.computed_history(), reference.computed_history(), atol=1e-8)

    def test_not_converged_returns_best(self) -> None:
        a = _spd(40, 11)
        b = np.ones(40)
        cfg = SolverConfig(eps=1e-12, restart_m=2, max_restarts=1)
        x, record = relaxed_gmres(_dense_apply(a), b, np.zeros(40), cfg)
        assert not record.converged
        best = min(row.resid_true_rel for row in record.restarts)
        assert np.linalg.norm(b - a @ x) / np.linalg.norm(b) == pytest.approx(best, rel=1e-8)

    def test_record_layout(self) -> None:
        a = _spd(20, 12)
        b = np.ones(20)
        cfg = SolverConfig(eps=1e-8, restart_m=3, max_restarts=20)
        _, record = relaxed_gmres(_dense_apply(a), b, np.zeros(20), cfg, clock=None)
        first = record.iterations[0]
        assert first.iter == 0 and first.resid_true_rel == pytest.approx(1.0)
        assert all(row.wall_ms is None for row in record.iterations)
        restart_iters = {row.iter for row in record.restarts}
        for row in record.iterations:
            assert (row.resid_true_rel is not None) == (row.iter in restart_iters)

    def test_small_computed_residual_is_not_convergence(self) -> None:
        a = _spd(20, 30)
        e = 0.05 * np.random.default_rng(31).standard_normal((20, 20))
        b = np.random.default_rng(32).standard_normal(20)
        cfg = SolverConfig(eps=1e-8, relaxation=False, restart_m=30, max_restarts=0)
        x, record = relaxed_gmres(_inexact_apply(a, e, cfg.residual_tol), b, np.zeros(20), cfg)
        computed, true = record.final_computed_residual, record.final_true_residual
        assert computed is not None and true is not None
        assert computed <= cfg.eps
        assert true > cfg.true_residual_bound
        assert not record.converged
        assert np.linalg.norm(b - a @ x) / np.linalg.norm(b) == pytest.approx(true, rel=1e-6)

    def test_restarts_until_true_residual_is_small(self) -> None:
        a = _spd(20, 30)
        e = 0.01 * np.random.default_rng(31).standard_normal((20, 20))
        b = np.random.default_rng(32).standard_normal(20)
        cfg = SolverConfig(eps=1e-8, relaxation=False, restart_m=30, max_restarts=40)
        x, record = relaxed_gmres(_inexact_apply(a, e, cfg.residual_tol), b, np.zeros(20), cfg)
        assert record.converged
        assert len(record.restarts) > 2
        assert np.linalg.norm(b - a @ x) / np.linalg.norm(b) <= cfg.true_residual_bound

    def test_relaxation_carries_over_restart(self) -> None:
        """The first step after a restart is relaxed by the residual relative to ||b||."""
        a = _spd(40, 11)
        b = np.ones(40)
        cfg = SolverConfig(eps=1e-10, restart_m=3, max_restarts=4)
        _, record = relaxed_gmres(_dense_apply(a), b, np.zeros(40), cfg)
        first_cycle = record.restarts[1]
        following = [row for row in record.iterations if row.iter == first_cycle.iter + 1]
        assert len(following) == 1
        expected = min(cfg.effective_delta_cap, cfg.eps / first_cycle.resid_true_rel)
        assert following[0].delta == pytest.approx(expected, rel=1e-8)
        assert following[0].delta > cfg.eps

    def test_zero_rhs(self) -> None:
        with pytest.raises(ValueError, match="nonzero"):
            relaxed_gmres(_dense_apply(np.eye(3)), np.zeros(3), np.zeros(3), SolverConfig())


class TestRelaxedGmresTT:
    """TT-mode runs."""

    def test_matches_dense_solver_on_convdiff(self) -> None:
        n = 8
        m = inv_laplace_expsum(n, 3, 36)
        a = conv_diff_3d(n, 1.0)
        b = conv_diff_rhs(n, 1.0)
        system = compose([MatrixOperator(m), MatrixOperator(a)])
        rhs = MatrixOperator(m).apply(b, TruncationSpec(eps=1e-14))
        cfg = SolverConfig(eps=1e-8, fixed_delta=1e-14)
        _, record = relaxed_gmres(operator_closure(system), rhs, zeros(rhs.shape), cfg)

        dense_m = dense_from_tt(m).matrix
        dense_system = DenseOperator((n, n, n), dense_m @ dense_from_tt(a).matrix)
        _, reference = dense_gmres(dense_system, dense_m @ dense_vector(b), None, cfg)
        assert record.converged and reference.converged
        assert record.iteration_count == reference.iteration_count
        np.testing.assert_allclose(record.computed_history(), reference.computed_history(), atol=1e-8)

    @pytest.mark.parametrize("eps", [1e-4, 1e-6])
    @pytest.mark.parametrize("seed", range(50))
    def test_residual_gap_bound(self, eps: float, seed: int) -> None:
        shape = (6, 6, 6)
        a = _near_identity(shape, seed)
        b = random_tt(shape, 2, np.random.default_rng(100 + seed))
        cfg = SolverConfig(eps=eps, cond_estimate=condition_number(dense_from_tt(a)))
        _, record = relaxed_gmres(operator_closure(MatrixOperator(a)), b, zeros(shape), cfg)
        computed = record.iterations[-1].resid_computed_rel
        true = record.final_true_residual
        assert true is not None
        assert abs(true - computed) <= cfg.gap_bound
        assert true <= cfg.eps + cfg.gap_bound

    @pytest.mark.parametrize("seed", range(3))
    def test_computed_residual_non_increasing_within_cycle(self, seed: int) -> None:
        shape = (5, 5, 5)
        a = _near_identity(shape, 50 + seed)
        b = random_tt(shape, 3, np.random.default_rng(60 + seed))
        cfg = SolverConfig(eps=1e-6, cond_estimate=3.0)
        _, record = relaxed_gmres(operator_closure(MatrixOperator(a)), b, zeros(shape), cfg)
        restart_iters = {row.iter for row in record.restarts}
        previous = record.iterations[0].resid_computed_rel
        for row in record.iterations[1:]:
            assert row.resid_computed_rel <= previous * (1 + 1e-10)
            if row.iter in restart_iters:
                assert row.resid_true_rel is not None
                previous = row.resid_true_rel
            else:
                previous = row.resid_computed_rel

    def test_rank_cap_flag(self) -> None:
        shape = (6, 6, 6)
        a = _near_identity(shape, 20)
        b = random_tt(shape, 3, np.random.default_rng(21))
        cfg = SolverConfig(eps=1e-6, rmax=2, max_restarts=1)
        _, record = relaxed_gmres(operator_closure(MatrixOperator(a), rmax=2), b, zeros(shape), cfg)
        assert record.rank_cap_hit
        assert record.rank_solution_max <= 2
