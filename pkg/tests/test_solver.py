import numpy as np
import pytest
from oracles import objective_direct, pgd_nonneg_lasso

from hmua.core import DimensionMismatch, InvalidParameter, SolverParams
from hmua.solver import default_mu, objective, solve_coarse, solve_regularized

TIGHT = SolverParams(max_iters=100_000, tol=1e-10)


def random_instance(rng, L=8, P=5, N=4):
    A = rng.uniform(0, 1, (L, P))
    X = rng.uniform(0, 1, (P, N)) * (rng.uniform(size=(P, N)) < 0.5)
    return A, A @ X + 0.05 * rng.standard_normal((L, N))


class TestClosedForms:
    def test_single_atom(self):
        # aTy = 2 with a unit norm -> x = max(0, 2 - 0.5)
        a = np.array([[0.6], [0.8]])
        y = 2.0 * a
        r = solve_coarse(y, a, 0.5, TIGHT)
        assert r.X.data[0, 0] == pytest.approx(1.5, abs=1e-8)

    def test_identity_library_no_penalty(self):
        y = np.array([[1.5, -2.0], [0.0, 3.0]])
        r = solve_coarse(y, np.eye(2), 0.0, TIGHT)
        np.testing.assert_allclose(r.X.data, np.maximum(y, 0), atol=1e-8)

    def test_large_lambda_gives_zero(self):
        rng = np.random.default_rng(3)
        A = rng.uniform(0.1, 1, (6, 4))
        A /= np.linalg.norm(A, axis=0)
        y = rng.uniform(0, 1, (6, 3))
        lam = float((A.T @ y).max()) + 1e-3
        r = solve_coarse(y, A, lam, TIGHT)
        assert np.all(r.X.data == 0.0)
        np.testing.assert_array_equal(pgd_nonneg_lasso(y, A, lam), 0.0)

    def test_regularized_scalar(self):
        # stationarity (x - 2) + 0.5 + (x - 4) = 0 -> x = 2.75
        r = solve_regularized([[2.0]], [[1.0]], [[4.0]], 0.5, 1.0, TIGHT)
        assert r.X.data[0, 0] == pytest.approx(2.75, abs=1e-8)

    def test_scalar_optimum_beats_grid(self):
        grid = np.arange(0, 5.001, 0.01)
        f = [objective("regularized", [[2.0]], [[1.0]], [[x]], 0.5, 1.0, [[4.0]]) for x in grid]
        assert objective("regularized", [[2.0]], [[1.0]], [[2.75]], 0.5, 1.0, [[4.0]]) <= min(f)


class TestObjective:
    def test_zero_iterate(self):
        y = np.array([[1.0, 2.0], [3.0, 0.0]])
        assert objective("coarse", y, np.eye(2), np.zeros((2, 2)), 0.3) == pytest.approx(7.0)

    def test_l1_term_additive(self):
        rng = np.random.default_rng(0)
        A, Y = random_instance(rng)
        X = rng.uniform(size=(5, 4))
        assert objective("coarse", Y, A, X, 0.2) == pytest.approx(objective("coarse", Y, A, X, 0.0) + 0.2 * X.sum())

    def test_shape_checks(self):
        with pytest.raises(DimensionMismatch):
            objective("coarse", np.ones((3, 2)), np.ones((4, 2)), np.ones((2, 2)), 0.1)
        with pytest.raises(DimensionMismatch):
            solve_coarse(np.ones((3, 2)), np.ones((4, 2)), 0.1)
        with pytest.raises(DimensionMismatch):
            solve_regularized(np.ones((4, 2)), np.ones((4, 2)), np.ones((3, 2)), 0.1, 1.0)

    def test_negative_weights(self):
        with pytest.raises(InvalidParameter):
            solve_coarse(np.ones((2, 1)), np.eye(2), -0.1)
        with pytest.raises(InvalidParameter):
            solve_regularized(np.ones((2, 1)), np.eye(2), np.ones((2, 1)), 0.1, -1.0)


class TestAdmm:
    def test_matches_oracle(self):
        rng = np.random.default_rng(5)
        for lam in (0.0, 0.01, 0.1):
            A, Y = random_instance(rng)
            f_ref = objective_direct(Y, A, pgd_nonneg_lasso(Y, A, lam), lam)
            assert solve_coarse(Y, A, lam, TIGHT).objective == pytest.approx(f_ref, rel=1e-6)
            Xd = rng.uniform(size=(5, 4))
            f_ref = objective_direct(Y, A, pgd_nonneg_lasso(Y, A, lam, 2.0, Xd), lam, 2.0, Xd)
            assert solve_regularized(Y, A, Xd, lam, 2.0, TIGHT).objective == pytest.approx(f_ref, rel=1e-6)

    def test_beta_zero_equals_coarse(self):
        rng = np.random.default_rng(6)
        A, Y = random_instance(rng)
        a = solve_coarse(Y, A, 0.05)
        b = solve_regularized(Y, A, np.full((5, 4), 7.0), 0.05, 0.0)
        np.testing.assert_array_equal(a.X.data, b.X.data)

    def test_large_beta_tracks_prior(self):
        rng = np.random.default_rng(7)
        A, Y = random_instance(rng)
        Xd = rng.normal(size=(5, 4))
        target = np.maximum(Xd, 0)
        gaps = [np.linalg.norm(solve_regularized(Y, A, Xd, 0.0, b, TIGHT).X.data - target) for b in (10, 100, 1000)]
        assert gaps[0] > gaps[1] > gaps[2]

    def test_nonnegative_and_result_fields(self):
        rng = np.random.default_rng(8)
        A, Y = random_instance(rng)
        r = solve_coarse(Y - 1.0, A, 0.01, SolverParams(max_iters=50))
        assert r.X.data.min() >= 0.0
        assert r.converged == (max(r.primal_residual, r.dual_residual) <= 1e-6)
        assert r.converged or r.iterations == 50

    def test_objective_decreases_overall(self):
        rng = np.random.default_rng(9)
        for _ in range(5):
            A, Y = random_instance(rng)
            h = solve_coarse(Y, A, 0.05, SolverParams(max_iters=300), record=True).history
            assert h[-1] <= h[0]
            assert h.size >= 2

    @pytest.mark.parametrize("seed", range(5))
    def test_sparsity_monotone_in_lambda_orthonormal(self, seed):
        # with orthonormal atoms x = max(0, a^T y - lam), so support shrinks with lam
        rng = np.random.default_rng(seed)
        A = np.linalg.qr(rng.normal(size=(10, 8)))[0]
        Y = rng.normal(size=(10, 6))
        nnz = [int((solve_coarse(Y, A, lam, TIGHT).X.data > 1e-8).sum()) for lam in (0.001, 0.01, 0.1, 1.0)]
        assert nnz == sorted(nnz, reverse=True)

    def test_support_matches_oracle_on_correlated_atoms(self):
        # correlated atoms can re-enter the support as lam grows; the solver must
        # reproduce exactly what the reference gives, monotone or not
        rng = np.random.default_rng(10)
        A, Y = random_instance(rng, L=10, P=8, N=6)
        for lam in (0.001, 0.01, 0.1, 1.0):
            ours = solve_coarse(Y, A, lam, TIGHT).X.data > 1e-6
            ref = pgd_nonneg_lasso(Y, A, lam) > 1e-6
            assert (ours != ref).sum() <= 1

    def test_column_independence(self):
        rng = np.random.default_rng(11)
        A, Y = random_instance(rng)
        params = SolverParams(mu=1.0, max_iters=200, tol=1e-12)
        both = solve_coarse(Y, A, 0.01, params).X.data
        alone = solve_coarse(Y[:, :1], A, 0.01, params).X.data
        np.testing.assert_allclose(both[:, :1], alone, atol=1e-12)

    def test_default_mu(self):
        assert default_mu(np.array([[-2.0, 4.0]])) == pytest.approx(0.3)
        assert default_mu(np.zeros((2, 2))) == 1.0

    def test_deterministic(self):
        rng = np.random.default_rng(12)
        A, Y = random_instance(rng)
        a = solve_coarse(Y, A, 0.01).X.data
        b = solve_coarse(Y, A, 0.01).X.data
        assert a.tobytes() == b.tobytes()
