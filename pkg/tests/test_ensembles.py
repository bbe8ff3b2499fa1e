from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tensornet.ensembles import (
    WeightEnsemble,
    check_assumptions,
    haar_orthogonal,
    make_centered_identity,
    make_constrained_student,
    make_identity,
    make_random_isotropic,
    make_simplex,
    simplex_basis,
)
from tensornet.errors import InfeasibleError, PreconditionError


class TestIdentity:
    def test_constants_d3(self):
        W = make_identity(3)
        np.testing.assert_array_equal(W.W, np.eye(3))
        rep = check_assumptions(W)
        assert (rep.delta, rep.eta_avg, rep.eta_var) == (0.0, 1.0, 0.0)

    def test_d1(self):
        np.testing.assert_array_equal(make_identity(1).W, [[1.0]])

    def test_feasible(self):
        assert check_assumptions(make_identity(4)).feasible_thm2

    @pytest.mark.parametrize("d", range(2, 65))
    def test_exact_constants_all_d(self, d):
        rep = check_assumptions(make_identity(d))
        assert (rep.delta, rep.eta_avg, rep.eta_var) == (0.0, 1.0, 0.0)


class TestCenteredIdentity:
    def test_rows_sum_to_zero(self):
        for d in (2, 5, 17):
            np.testing.assert_allclose(make_centered_identity(d).W.sum(axis=0), 0, atol=1e-12)

    def test_d2_rows(self):
        W = make_centered_identity(2).W
        np.testing.assert_allclose(W, [[1 / math.sqrt(2), -1 / math.sqrt(2)], [-1 / math.sqrt(2), 1 / math.sqrt(2)]], atol=1e-15)

    def test_measured_constants_are_exact_values(self):
        # <w_i, w_j> = -1/(d-1) and W^T W = d/(d-1) (I - J/d), so the operator
        # norm of W^T W - I is exactly 1: delta = 1/(d-1), eta_var = 1.
        d = 10
        rep = check_assumptions(make_centered_identity(d))
        np.testing.assert_allclose(rep.delta, 1 / (d - 1), atol=1e-12)
        np.testing.assert_allclose(rep.eta_var, 1.0, atol=1e-12)
        assert rep.eta_avg < 1e-12

    @pytest.mark.parametrize("d", [8, 10, 16, 32])
    def test_stated_constants_are_upper_bounds(self, d):
        rep = check_assumptions(make_centered_identity(d))
        assert rep.delta <= (d + 1) / (d * (d - 1))
        assert rep.eta_var <= 2.0
        assert rep.feasible_thm2

    def test_needs_two_dims(self):
        with pytest.raises(ValueError):
            make_centered_identity(1)


class TestSimplex:
    def test_single_block_constants(self):
        rep = check_assumptions(make_simplex(9, 10, seed=3))
        np.testing.assert_allclose([rep.delta, rep.eta_avg, rep.eta_var], [1 / 9, 0, 0], atol=1e-8)

    def test_two_blocks_isotropic(self):
        rep = check_assumptions(make_simplex(9, 20, seed=3))
        np.testing.assert_allclose([rep.eta_avg, rep.eta_var], [0, 0], atol=1e-8)

    def test_triangle(self):
        W = make_simplex(2, 3, seed=0).W
        G = W @ W.T
        np.testing.assert_allclose(G[~np.eye(3, dtype=bool)], -0.5, atol=1e-12)
        assert check_assumptions(W).delta == pytest.approx(0.5)

    def test_r_must_be_multiple(self):
        with pytest.raises(ValueError):
            make_simplex(4, 7, seed=0)

    def test_basis_is_orthonormal_complement_of_ones(self):
        V = simplex_basis(6)
        np.testing.assert_allclose(V.T @ V, np.eye(6), atol=1e-13)
        np.testing.assert_allclose(V.T @ np.ones(7), 0, atol=1e-13)

    @given(st.integers(2, 12), st.integers(1, 3), st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_blocks_have_regular_gram(self, d, blocks, seed):
        W = make_simplex(d, blocks * (d + 1), seed).W
        np.testing.assert_allclose(np.linalg.norm(W, axis=1), 1, atol=1e-10)
        for b in range(blocks):
            B = W[b * (d + 1) : (b + 1) * (d + 1)]
            G = B @ B.T
            np.testing.assert_allclose(G[~np.eye(d + 1, dtype=bool)], -1 / d, atol=1e-9)


class TestRandomIsotropic:
    def test_unit_rows(self):
        W = make_random_isotropic(7, 30, seed=1)
        np.testing.assert_allclose(W.row_norms(), 1, atol=1e-12)
        assert W.is_unit_norm()

    def test_centering_before_normalisation(self):
        rng = np.random.default_rng(4)
        g = rng.standard_normal((30, 7)) / math.sqrt(7)
        c = g - g.mean(axis=0)
        np.testing.assert_allclose(c.sum(axis=0), 0, atol=1e-10)
        W = make_random_isotropic(7, 30, seed=4).W
        np.testing.assert_allclose(W, c / np.linalg.norm(c, axis=1, keepdims=True), atol=1e-14)

    def test_two_rows_antipodal(self):
        W = make_random_isotropic(5, 2, seed=9).W
        np.testing.assert_allclose(W[0], -W[1], atol=1e-15)

    def test_separation_scale(self):
        d = 50
        hits = sum(check_assumptions(make_random_isotropic(d, 350, s)).delta < 6 * math.sqrt(math.log(d) / d) for s in range(20))
        assert hits == 20

    def test_deterministic(self):
        a = make_random_isotropic(6, 10, seed=123).W
        b = make_random_isotropic(6, 10, seed=123).W
        assert a.tobytes() == b.tobytes()
        assert make_simplex(6, 14, 5).W.tobytes() == make_simplex(6, 14, 5).W.tobytes()


class TestHaar:
    def test_orthogonal(self):
        Q = haar_orthogonal(8, np.random.default_rng(0))
        np.testing.assert_allclose(Q.T @ Q, np.eye(8), atol=1e-13)

    def test_first_entry_is_uniform_on_sphere(self):
        # For Haar Q, Q[0,0]^2 ~ Beta(1/2, (d-1)/2) with mean 1/d.
        rng = np.random.default_rng(1)
        d = 5
        vals = np.array([haar_orthogonal(d, rng)[0, 0] ** 2 for _ in range(20000)])
        se = vals.std() / math.sqrt(vals.size)
        assert abs(vals.mean() - 1 / d) < 4 * se
        # sign symmetry of the positive-diagonal convention
        signs = np.array([haar_orthogonal(d, rng)[0, 0] > 0 for _ in range(4000)])
        assert abs(signs.mean() - 0.5) < 4 * 0.5 / math.sqrt(signs.size)


class TestAssumptionReport:
    @given(st.integers(1, 8), st.integers(1, 12), st.integers(0, 1000))
    @settings(max_examples=50, deadline=None)
    def test_nonnegative_and_bounded(self, d, r, seed):
        rng = np.random.default_rng(seed)
        W = rng.standard_normal((r, d))
        W /= np.linalg.norm(W, axis=1, keepdims=True)
        rep = check_assumptions(W)
        assert min(rep.delta, rep.eta_avg, rep.eta_var, rep.unit_norm_residual) >= 0
        assert rep.delta <= 1 + 1e-10


class TestConstrainedStudent:
    def test_single_axis(self):
        S = make_constrained_student(np.eye(3)[:1], 1, 0.1, seed=0)
        assert abs(S.W[0, 0]) <= 0.1 + 1e-12
        np.testing.assert_allclose(np.linalg.norm(S.W), 1.0, atol=1e-12)

    def test_boundary_epsilon_for_identity(self):
        d = 5
        S = make_constrained_student(np.eye(d), 1, 1 / math.sqrt(d), seed=0)
        assert np.abs(S.W @ np.eye(d)).max() <= 1 / math.sqrt(d) + 1e-12

    def test_spanning_teacher_epsilon_zero(self):
        with pytest.raises(InfeasibleError):
            make_constrained_student(np.eye(4), 1, 0.0, seed=0)

    def test_simplex_floor(self):
        # Every unit vector has a correlation of at least 1/sqrt(d) with some vertex.
        T = make_simplex(16, 17, seed=2)
        with pytest.raises(InfeasibleError):
            make_constrained_student(T, 1, 0.2, seed=0, max_attempts=5)

    def test_epsilon_range(self):
        with pytest.raises(PreconditionError):
            make_constrained_student(np.eye(3), 1, 1.0, seed=0)

    @given(st.integers(4, 20), st.integers(1, 6), st.floats(0.05, 0.9), st.integers(0, 10**6))
    @settings(max_examples=40, deadline=None)
    def test_constraint_holds_for_centered_teachers(self, d, R, eps, seed):
        T = make_centered_identity(d)
        S = make_constrained_student(T, R, eps, seed)
        assert S.r == R
        np.testing.assert_allclose(np.linalg.norm(S.W, axis=1), 1, atol=1e-12)
        assert np.abs(T.W @ S.W.T).max() <= eps + 1e-12


class TestWeightEnsemble:
    def test_read_only(self):
        W = make_identity(2)
        with pytest.raises(ValueError):
            W.W[0, 0] = 3.0

    def test_kind_validated(self):
        with pytest.raises(ValueError):
            WeightEnsemble(np.eye(2), kind="bogus")

    def test_shape_properties(self):
        W = make_simplex(3, 8, 0)
        assert (W.r, W.d) == (8, 3)
        assert np.asarray(W).shape == (8, 3)
