"""Tests for the benchmark operators against dense first-principles assembly."""

from typing import List
from unittest.mock import patch

import numpy as np
import pytest

from ttkry.arith import scale
from ttkry.models.grid import Grid1D, KLCoefficient
from ttkry.models.truncation import TruncationSpec
from ttkry.operators import (
    NewtonDivergenceError,
    conv_diff_3d,
    conv_diff_rhs,
    conv_diff_terms,
    expsum_terms,
    grad_1d,
    inv_laplace_expsum,
    inv_laplace_operator,
    kl_coefficient,
    kl_stiffness,
    laplace_1d,
    laplace_eigen,
    newton_reciprocal,
    p2_parts,
    p2_preconditioner,
    parametric_inv_laplace,
    quantize_spatial,
    stiffness_from_coefficient,
)
from ttkry.oracle import (
    DenseOperator,
    condition_number,
    dense_from_tt,
    dense_vector,
    kron_dense,
    kron_sum_dense,
    relative_error,
)
from ttkry.rounding import MatrixOperator, round_absolute
from ttkry.tensor import TTTensor, element, full, ones, random_tt, zeros


def _laplace_3d(n: int) -> np.ndarray:
    lap, eye = laplace_1d(Grid1D(n=n)), np.eye(n)
    return kron_dense([lap, eye, eye]) + kron_dense([eye, lap, eye]) + kron_dense([eye, eye, lap])


def _ghost_rhs(n: int, alpha: float) -> np.ndarray:
    """Eliminate u = 1 on an explicit ghost layer at y = 1 from the dense stencil."""
    g = Grid1D(n=n)
    x = g.nodes()
    lap, grad, eye = laplace_1d(g), grad_1d(g), np.eye(n)
    ghost = np.zeros((n, 1))
    ghost[-1, 0] = 1.0

    def extend(factor: np.ndarray, coupling: float = 0.0) -> np.ndarray:
        return np.hstack([factor, coupling * ghost])

    conv_y = np.diag(1.0 - x**2)
    terms = [
        alpha * kron_dense([lap, extend(eye), eye]),
        alpha * kron_dense([eye, extend(lap, -1.0 / g.h**2), eye]),
        alpha * kron_dense([eye, extend(eye), lap]),
        kron_dense([np.diag(1.0 - x**2) @ grad, extend(np.diag(2.0 * x)), eye]),
        kron_dense([np.diag(-2.0 * x), extend(conv_y @ grad, (1.0 - x[-1] ** 2) * 0.5 / g.h), eye]),
    ]
    extended = sum(terms)
    layer = np.zeros((n, n + 1, n))
    layer[:, n, :] = 1.0
    return -extended @ layer.reshape(-1, order="F")


class TestStencils:
    """Tests for the 1D stencils."""

    def test_laplace_entries(self) -> None:
        lap = laplace_1d(Grid1D(n=3))
        assert lap[0, 0] == pytest.approx(32.0)
        assert lap[0, 1] == pytest.approx(-16.0)
        np.testing.assert_array_equal(lap, lap.T)

    def test_laplace_smallest_eigenvalue(self) -> None:
        g = Grid1D(n=31)
        smallest = np.linalg.eigvalsh(laplace_1d(g))[0]
        assert smallest == pytest.approx((2 / g.h**2) * (1 - np.cos(np.pi * g.h)), rel=1e-10)

    def test_analytic_eigenpairs(self) -> None:
        g = Grid1D(n=7)
        vectors, values = laplace_eigen(g)
        np.testing.assert_allclose(laplace_1d(g) @ vectors, vectors * values, atol=1e-10)
        np.testing.assert_allclose(vectors.T @ vectors, np.eye(7), atol=1e-12)

    def test_grad_entries(self) -> None:
        grad = grad_1d(Grid1D(n=3))
        assert grad[0, 1] == pytest.approx(2.0)
        np.testing.assert_array_equal(grad + grad.T, np.zeros((3, 3)))

    def test_grad_exact_on_linear_samples(self) -> None:
        g = Grid1D(n=9)
        slope = grad_1d(g) @ g.nodes()
        np.testing.assert_allclose(slope[1:-1], slope[1], rtol=1e-12)

    def test_grid_minimum(self) -> None:
        with pytest.raises(ValueError):
            Grid1D(n=1)


class TestConvectionDiffusion:
    """Tests for the 3D convection-diffusion problem."""

    def test_matches_kronecker_sum(self) -> None:
        expected = kron_sum_dense(conv_diff_terms(4, 1.0))
        actual = dense_from_tt(conv_diff_3d(4, 1.0)).matrix
        assert relative_error(actual, expected) <= 1e-11

    def test_ranks_bounded(self) -> None:
        assert conv_diff_3d(8, 0.1).max_rank <= 4

    def test_diffusion_dominates(self) -> None:
        alpha = 1e6
        actual = dense_from_tt(conv_diff_3d(4, alpha)).matrix / alpha
        assert relative_error(actual, _laplace_3d(4)) <= 1e-5

    def test_rhs_matches_ghost_elimination(self) -> None:
        expected = _ghost_rhs(4, 0.5)
        np.testing.assert_allclose(dense_vector(conv_diff_rhs(4, 0.5)), expected, rtol=1e-13, atol=1e-12)

    def test_rhs_only_touches_face_layer(self) -> None:
        b = full(conv_diff_rhs(5, 1.0)).array()
        assert not b[:, :-1, :].any()
        assert conv_diff_rhs(5, 1.0).max_rank <= 2

    def test_alpha_must_be_positive(self) -> None:
        with pytest.raises(ValueError, match="alpha"):
            conv_diff_3d(4, 0.0)


class TestExponentialSum:
    """Tests for the inverse-Laplacian quadrature."""

    def test_nodes_and_weights(self) -> None:
        t, c = expsum_terms(4)
        assert len(t) == 9
        eta = np.pi / 2
        assert t[4] == pytest.approx(1.0)
        np.testing.assert_allclose(c, eta * t)

    def test_error_decays_with_m(self) -> None:
        inverse = np.linalg.inv(_laplace_3d(8))
        errors = []
        for m in (16, 25, 36):
            approx = dense_from_tt(inv_laplace_expsum(8, 3, m)).matrix
            errors.append(np.linalg.norm(approx - inverse, 2) / np.linalg.norm(inverse, 2))
        assert errors[0] > errors[1] > errors[2]
        assert errors[2] <= 1e-4

    def test_one_dimension(self) -> None:
        inverse = np.linalg.inv(laplace_1d(Grid1D(n=8)))
        approx = dense_from_tt(inv_laplace_expsum(8, 1, 36)).matrix
        assert np.linalg.norm(approx - inverse, 2) / np.linalg.norm(inverse, 2) <= 1e-4

    def test_termwise_operator(self) -> None:
        op = inv_laplace_operator(6, 3, 25)
        x = random_tt((6, 6, 6), 2, np.random.default_rng(0))
        expected = dense_from_tt(inv_laplace_expsum(6, 3, 25)).matrix @ dense_vector(x)
        y = op.apply(x, TruncationSpec(eps=1e-8))
        assert relative_error(dense_vector(y), expected) <= 1e-7

    def test_termwise_chunks(self) -> None:
        op = inv_laplace_operator(6, 3, 16)
        chunked = type(op)(op.terms, formal_rank_limit=4)
        x = random_tt((6, 6, 6), 2, np.random.default_rng(1))
        spec = TruncationSpec(eps=1e-6)
        assert relative_error(dense_vector(chunked.apply(x, spec)), dense_vector(op.apply(x, spec))) <= 1e-5

    def test_termwise_shape_check(self) -> None:
        with pytest.raises(ValueError, match="acts on"):
            inv_laplace_operator(4, 2, 4).apply(ones((4, 4, 4)), TruncationSpec())


class TestKLCoefficient:
    """Tests for the parametric coefficient."""

    def test_single_parameter_value(self) -> None:
        a = kl_coefficient(5, 3, 1)
        assert full(a)[4, 2] == pytest.approx(1.125, abs=1e-12)

    def test_zero_parameters_give_one(self) -> None:
        a = full(kl_coefficient(6, 5, 2)).array()
        np.testing.assert_allclose(a[:, 2, 2], 1.0, atol=1e-12)

    def test_matches_pointwise(self) -> None:
        kl = KLCoefficient(d=3, nx=8, ny=4)
        a = full(kl_coefficient(8, 4, 3)).array()
        xs, ys = kl.grid.midpoints(), kl.parameter_grid()
        for idx in np.ndindex(*a.shape):
            expected = kl.evaluate(xs[idx[0]], [ys[i] for i in idx[1:]])
            assert a[idx] == pytest.approx(expected, abs=1e-11)

    def test_amplitudes_decrease(self) -> None:
        amplitudes = KLCoefficient(d=5, nx=4).amplitudes
        assert amplitudes[0] == pytest.approx(0.125)
        assert all(a > b > 0 for a, b in zip(amplitudes, amplitudes[1:]))

    def test_evaluate_arity(self) -> None:
        with pytest.raises(ValueError, match="expected 2"):
            KLCoefficient(d=2, nx=4).evaluate(0.0, [0.1])


class TestStiffness:
    """Tests for the conservative stiffness Gamma(a)."""

    def test_constant_coefficient_is_laplacian(self) -> None:
        stiffness = dense_from_tt(kl_stiffness(8, 4, 0)).matrix
        np.testing.assert_allclose(stiffness, laplace_1d(Grid1D(n=8)), rtol=1e-13, atol=1e-10)

    def test_matches_pointwise_assembly(self) -> None:
        nx, ny, d = 8, 4, 2
        kl = KLCoefficient(d=d, nx=nx, ny=ny)
        xs, ys = kl.grid.midpoints(), kl.parameter_grid()
        h = kl.grid.h
        diff = np.eye(nx + 1, nx) - np.eye(nx + 1, nx, k=-1)
        expected = np.zeros((nx * ny * ny, nx * ny * ny))
        for p1 in range(ny):
            for p2 in range(ny):
                a = np.array([kl.evaluate(x, [ys[p1], ys[p2]]) for x in xs])
                block = diff.T @ np.diag(a) @ diff / h**2
                e1, e2 = np.zeros((ny, ny)), np.zeros((ny, ny))
                e1[p1, p1] = e2[p2, p2] = 1.0
                expected += kron_dense([block, e1, e2])
        actual = dense_from_tt(kl_stiffness(nx, ny, d)).matrix
        assert relative_error(actual, expected) <= 1e-11
        np.testing.assert_allclose(actual, actual.T, atol=1e-10)

    def test_rank_bound(self) -> None:
        assert kl_stiffness(8, 4, 3).max_rank <= 4


class TestNewtonReciprocal:
    """Tests for the elementwise reciprocal."""

    def test_ones(self) -> None:
        result = newton_reciprocal(ones((3, 3)), TruncationSpec(eps=1e-8))
        assert result.converged
        assert result.iterations == 1
        np.testing.assert_allclose(dense_vector(result.tensor), 1.0)

    def test_kl_coefficient(self) -> None:
        a = kl_coefficient(8, 4, 2)
        result = newton_reciprocal(a, TruncationSpec(eps=1e-6))
        assert result.converged
        assert result.residual <= 1e-6
        np.testing.assert_allclose(dense_vector(result.tensor), 1.0 / dense_vector(a), atol=1e-5)

    def test_divergence(self) -> None:
        with pytest.raises(NewtonDivergenceError):
            newton_reciprocal(scale(ones((3, 3)), 100.0), TruncationSpec(eps=1e-6))

    def test_maxit_flag(self) -> None:
        a = kl_coefficient(8, 4, 2)
        result = newton_reciprocal(a, TruncationSpec(eps=1e-12), maxit=1)
        assert not result.converged
        assert result.iterations == 1
        assert len(result.history) == 2

    def test_correction_loses_rank(self) -> None:
        a = kl_coefficient(16, 4, 4)
        corrections: List[int] = []

        def record(t: TTTensor, tolerance: float, spec: TruncationSpec) -> TTTensor:
            rounded = round_absolute(t, tolerance, spec)
            corrections.append(rounded.max_rank)
            return rounded

        with patch("ttkry.operators.round_absolute", side_effect=record):
            result = newton_reciprocal(a, TruncationSpec(eps=1e-6))
        assert result.converged
        assert len(corrections) == result.iterations
        assert corrections[-1] < result.tensor.max_rank

    @pytest.mark.slow
    def test_parametric_benchmark_scale(self) -> None:
        a = kl_coefficient(64, 16, 10)
        result = newton_reciprocal(a, TruncationSpec(eps=1e-5))
        assert result.converged
        assert result.residual <= 1e-5
        assert result.tensor.max_rank <= 128
        rng = np.random.default_rng(0)
        for _ in range(20):
            idx = [int(rng.integers(n)) for n in a.shape]
            assert element(result.tensor, idx) == pytest.approx(1.0 / element(a, idx), rel=1e-3)


class TestP2Preconditioner:
    """Tests for P2 = Delta^-1 Gamma(1/a) Delta^-1."""

    def test_constant_coefficient_limit(self) -> None:
        nx = 8
        p2 = p2_preconditioner(nx, 4, 0, TruncationSpec(eps=1e-8), m=25)
        v = random_tt((nx,), 1, np.random.default_rng(2))
        expected = np.linalg.solve(laplace_1d(Grid1D(n=nx)), dense_vector(v))
        actual = dense_vector(p2.apply(v, TruncationSpec(eps=1e-10)))
        assert relative_error(actual, expected) <= 1e-3

    def test_improves_conditioning(self) -> None:
        nx, ny, d = 32, 4, 1
        parts = p2_parts(nx, ny, d, TruncationSpec(eps=1e-8))
        inv = dense_from_tt(parts.inv_laplace).matrix
        p2 = inv @ dense_from_tt(parts.reciprocal_stiffness).matrix @ inv
        stiffness = dense_from_tt(kl_stiffness(nx, ny, d)).matrix
        plain = condition_number(DenseOperator((nx, ny), stiffness))
        preconditioned = condition_number(DenseOperator((nx, ny), p2 @ stiffness))
        assert preconditioned * 10 <= plain

    def test_zero_vector(self) -> None:
        p2 = p2_preconditioner(8, 4, 1, TruncationSpec(eps=1e-6), m=16)
        y = p2.apply(zeros((8, 4)), TruncationSpec(eps=1e-6))
        assert not dense_vector(y).any()

    def test_quantized_parts(self) -> None:
        inv = parametric_inv_laplace(8, 4, 1, 16)
        q = quantize_spatial(inv)
        assert q.row_shape == (2, 2, 2, 4)
        np.testing.assert_allclose(dense_from_tt(q).matrix, dense_from_tt(inv).matrix, atol=1e-10)

    def test_operator_factory(self) -> None:
        p2 = p2_preconditioner(8, 4, 1, TruncationSpec(eps=1e-6), m=16, operator=MatrixOperator)
        assert p2.shape == (8, 4)

    def test_stiffness_of_general_coefficient(self) -> None:
        c = ones((9, 3))
        stiffness = dense_from_tt(stiffness_from_coefficient(c)).matrix
        expected = kron_dense([laplace_1d(Grid1D(n=8)), np.eye(3)])
        np.testing.assert_allclose(stiffness, expected, rtol=1e-13, atol=1e-10)
