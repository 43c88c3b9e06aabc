"""Tests for the nuclear-norm solvers."""

import numpy as np
import pytest

from core.basis_families import make_basis, make_edg_basis, make_entry_basis, make_hankel_basis
from core.config import SolverConfig
from core.dual_basis import dual_set
from core.errors import ConfigError, InfeasibleConstraintsError, InvalidInputError
from core.rng import make_rng
from core.sampling_ops import SampleSet, draw_omega, full_omega
from core.solver import (
    CompletionProblem,
    nuclear_norm,
    psd_prox,
    solve,
    solve_exact,
    solve_noisy,
    svt_prox,
)
from core.tangent_geometry import numerical_rank


def rank_one(n: int, seed: int) -> np.ndarray:
    rng = make_rng(seed)
    return np.outer(rng.standard_normal(n), rng.standard_normal(n))


class TestProximalOperators:
    """Singular value and eigenvalue thresholding."""

    def test_svt(self):
        """diag(3, 1) thresholded at 2 is diag(1, 0)."""
        assert np.allclose(svt_prox(np.diag([3.0, 1.0]), 2.0), np.diag([1.0, 0.0]))

    def test_svt_preserves_singular_vectors(self):
        """Rotated inputs give rotated outputs."""
        Q = np.array([[0.0, 1.0], [1.0, 0.0]])
        X = Q @ np.diag([5.0, 2.0])
        assert np.allclose(svt_prox(X, 1.0), Q @ np.diag([4.0, 1.0]))

    def test_psd_prox(self):
        """Negative eigenvalues are clipped after the shift."""
        assert np.allclose(psd_prox(np.diag([3.0, -1.0]), 1.0), np.diag([2.0, 0.0]))

    def test_nonpositive_tau(self):
        """tau must be positive."""
        with pytest.raises(InvalidInputError):
            svt_prox(np.eye(2), 0.0)
        with pytest.raises(InvalidInputError):
            psd_prox(np.eye(2), -1.0)

    def test_nuclear_norm(self):
        """Sum of singular values."""
        assert nuclear_norm(np.diag([3.0, -2.0])) == pytest.approx(5.0)


class TestCompletionProblem:
    """Measurements and their validation."""

    def test_measurement_count(self):
        """One measurement per draw."""
        B = make_entry_basis(2)
        with pytest.raises(InvalidInputError):
            CompletionProblem(B, dual_set(B), full_omega(4), np.zeros(3))

    def test_inconsistent_duplicates(self):
        """The exact program refuses duplicates with different values."""
        B = make_entry_basis(2)
        p = CompletionProblem(B, dual_set(B), SampleSet(np.array([1, 1]), 4), [1.0, 2.0])
        with pytest.raises(InfeasibleConstraintsError):
            p.deduplicated()

    def test_consistent_duplicates(self):
        """Duplicates with equal values collapse."""
        B = make_entry_basis(2)
        p = CompletionProblem(B, dual_set(B), SampleSet(np.array([3, 1, 3]), 4), [5.0, 2.0, 5.0])
        idx, b = p.deduplicated()
        assert idx.tolist() == [1, 3]
        assert b.tolist() == [2.0, 5.0]

    def test_noise_needs_rng(self):
        """Coefficient noise requires a generator."""
        B = make_entry_basis(2)
        with pytest.raises(InvalidInputError):
            CompletionProblem.from_truth(B, dual_set(B), full_omega(4), np.eye(2), noise_sigma=0.1)

    def test_misfit_of_truth_is_zero(self):
        """Noise-free measurements of M give zero misfit."""
        B = make_hankel_basis(3, 3)
        D = dual_set(B)
        M = B.unvec(B.W @ np.arange(1.0, 6.0))
        p = CompletionProblem.from_truth(B, D, draw_omega(B.L, 8, seed=1), M)
        assert p.misfit(M) == pytest.approx(0.0, abs=1e-12)


class TestSolveExact:
    """Equality-constrained nuclear-norm minimization."""

    @pytest.mark.parametrize("family", ["entry", "edg", "hankel", "rank_one", "weighted"])
    def test_full_information(self, family):
        """All coefficients known: the unique feasible point is M."""
        B = make_basis(family, 5)
        D = dual_set(B)
        M = B.unvec(B.W @ make_rng(2).standard_normal(B.L))
        if B.constraints.psd:
            P = make_rng(3).standard_normal((5, 2))
            if B.constraints.row_sum_zero:
                P -= P.mean(axis=0)
            M = P @ P.T
        p = CompletionProblem.from_truth(B, D, full_omega(B.L), M)
        report = solve_exact(p, SolverConfig(max_iter=500))
        assert report.rel_err_vs_truth <= 1e-6
        assert report.constraint_residual <= 1e-8

    def test_recovers_rank_one_from_subset(self):
        """70 of 100 entries recover a rank-one 10 x 10 matrix."""
        B = make_entry_basis(10)
        D = dual_set(B)
        M = rank_one(10, seed=4)
        idx = make_rng(5).permutation(B.L)[:70]
        p = CompletionProblem.from_truth(B, D, SampleSet(idx, B.L), M)
        report = solve_exact(p, SolverConfig(max_iter=5000))
        assert report.success(1e-3)
        assert numerical_rank(report.X_hat, 1e-6) == 1
        assert report.feasible

    def test_objective_trace(self):
        """Traces have one entry per iteration."""
        B = make_entry_basis(4)
        M = rank_one(4, seed=6)
        p = CompletionProblem.from_truth(B, dual_set(B), draw_omega(B.L, 12, seed=7), M)
        report = solve_exact(p, SolverConfig(max_iter=50))
        assert len(report.objective_trace) == report.iterations
        assert len(report.residual_trace) == report.iterations

    def test_non_convergence_is_reported(self):
        """Hitting max_iter returns converged=False without raising."""
        B = make_entry_basis(6)
        M = rank_one(6, seed=8)
        p = CompletionProblem.from_truth(B, dual_set(B), draw_omega(B.L, 20, seed=9), M)
        report = solve_exact(p, SolverConfig(max_iter=2, adapt_rho=False))
        assert report.iterations == 2
        assert not report.converged

    def test_undersampled_flag(self):
        """Fewer distinct samples than dim T are flagged."""
        B = make_entry_basis(5)
        M = rank_one(5, seed=10)
        p = CompletionProblem.from_truth(B, dual_set(B), SampleSet(np.array([0, 1, 2, 2]), B.L), M)
        report = solve_exact(p, SolverConfig(max_iter=20))
        assert report.undersampled

    def test_edg_checks(self):
        """EDG solutions are checked for symmetry, row sums and PSD."""
        B = make_edg_basis(4)
        P = make_rng(11).standard_normal((4, 1))
        P -= P.mean(axis=0)
        p = CompletionProblem.from_truth(B, dual_set(B), full_omega(B.L), P @ P.T)
        report = solve_exact(p)
        assert [c.name for c in report.checks] == ["Measurements", "Symmetric", "Row sums", "PSD"]
        assert report.feasible

    def test_noisy_problem_refused(self):
        """solve_exact needs noise_level = 0."""
        B = make_entry_basis(2)
        p = CompletionProblem(B, dual_set(B), full_omega(4), np.zeros(4), noise_level=0.1)
        with pytest.raises(InvalidInputError):
            solve_exact(p)

    def test_invalid_config(self):
        """Solver settings are validated."""
        B = make_entry_basis(2)
        p = CompletionProblem(B, dual_set(B), full_omega(4), np.zeros(4))
        with pytest.raises(ConfigError):
            solve_exact(p, SolverConfig(max_iter=0))


class TestSolveNoisy:
    """Ball-constrained nuclear-norm minimization."""

    def test_zero_delta_delegates(self):
        """delta = 0 is the exact program."""
        B = make_entry_basis(4)
        D = dual_set(B)
        M = rank_one(4, seed=12)
        p = CompletionProblem.from_truth(B, D, full_omega(B.L), M)
        assert solve_noisy(p).rel_err_vs_truth <= 1e-6

    def test_misfit_within_delta(self):
        """The solution stays inside the noise ball and beats ||M||_*."""
        B = make_entry_basis(6)
        D = dual_set(B)
        M = rank_one(6, seed=13)
        s = full_omega(B.L)
        noisy = CompletionProblem.from_truth(B, D, s, M, noise_sigma=0.01, rng=make_rng(14))
        delta = noisy.misfit(M)
        p = CompletionProblem.from_truth(
            B, D, s, M, noise_sigma=0.01, noise_level=delta, rng=make_rng(14)
        )
        report = solve(p, SolverConfig(max_iter=5000))
        assert report.noise_residual == pytest.approx(p.misfit(report.X_hat), rel=1e-8, abs=1e-10)
        assert report.noise_residual <= delta * (1 + 1e-3)
        assert report.objective <= nuclear_norm(M) * (1 + 1e-3)
        assert report.rel_err_vs_truth <= 0.1

    def test_huge_delta_gives_zero(self):
        """A ball wider than the data contains 0, the nuclear-norm minimizer."""
        B = make_entry_basis(5)
        D = dual_set(B)
        M = rank_one(5, seed=15)
        s = draw_omega(B.L, 30, seed=16)
        exact = CompletionProblem.from_truth(B, D, s, M)
        delta = 1e3 * float(np.linalg.norm(exact.measurements))
        p = CompletionProblem.from_truth(B, D, s, M, noise_level=delta)
        report = solve_noisy(p, SolverConfig(max_iter=5000))
        assert np.linalg.norm(report.X_hat) <= 1e-6 * np.linalg.norm(M)
        assert report.objective <= 1e-6


class TestSolverProperties:
    """Nonexpansive proximal steps and invariance under duplicated draws."""

    def test_prox_nonexpansive(self):
        """||prox(X) - prox(Y)|| <= ||X - Y|| for both thresholding operators."""
        rng = make_rng(17)
        for _ in range(25):
            X, Y = rng.standard_normal((2, 5, 5))
            tau = rng.uniform(0.1, 2.0)
            dist = np.linalg.norm(X - Y)
            assert np.linalg.norm(svt_prox(X, tau) - svt_prox(Y, tau)) <= dist + 1e-12
            Xs, Ys = X + X.T, Y + Y.T
            assert np.linalg.norm(psd_prox(Xs, tau) - psd_prox(Ys, tau)) <= np.linalg.norm(Xs - Ys) + 1e-12

    @pytest.mark.parametrize("family", ["entry", "edg"])
    def test_duplicate_invariance(self, family):
        """Repeating draws does not change the solution."""
        B = make_basis(family, 5)
        D = dual_set(B)
        P = make_rng(18).standard_normal((5, 1))
        P -= P.mean(axis=0)
        M = P @ P.T
        idx = make_rng(19).permutation(B.L)[: B.L * 3 // 4]
        repeated = np.concatenate([idx, idx[:5], idx[:2]])

        cfg = SolverConfig(max_iter=3000)
        once = solve_exact(CompletionProblem.from_truth(B, D, SampleSet(idx, B.L), M), cfg)
        twice = solve_exact(CompletionProblem.from_truth(B, D, SampleSet(repeated, B.L), M), cfg)
        assert np.allclose(once.X_hat, twice.X_hat, atol=1e-8)
        assert once.iterations == twice.iterations
