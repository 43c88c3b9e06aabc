"""
Nuclear-norm minimization under basis-coefficient constraints.

Exact program:   min ||X||_*  s.t.  <X, w_a> = b_a (a in Omega), X in S
Noisy program:   min ||X||_*  s.t.  ||R_Omega(X) - R_Omega(M)||_F <= delta, X in S

S is span(W), intersected with the PSD cone when the basis declares it.
Both programs are solved by ADMM: a proximal step on the nuclear norm
(singular value or eigenvalue soft-thresholding) alternating with a
projection onto the constraint set, with residual balancing of the penalty.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, cholesky, eigh

from core.basis_families import BasisSet, SubspaceConstraints
from core.config import SolverConfig
from core.dual_basis import DualBasisData
from core.errors import DimensionError, InfeasibleConstraintsError, InvalidInputError
from core.sampling_ops import SampleSet, sampling_expand
from core.tangent_geometry import DEFAULT_RANK_TOL
from core.verdicts import CheckResult, all_passed

logger = logging.getLogger(__name__)

# Relative disagreement tolerated between duplicated measurements
DUPLICATE_TOL = 1e-12


# =============================================================================
# PROXIMAL OPERATORS
# =============================================================================


def nuclear_norm(X: np.ndarray) -> float:
    """Sum of singular values."""
    return float(np.sum(np.linalg.svd(np.asarray(X, dtype=float), compute_uv=False)))


def _svt(X: np.ndarray, tau: float) -> tuple[np.ndarray, float]:
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    keep = s > 0
    return (U[:, keep] * s[keep]) @ Vt[keep], float(s.sum())


def _psd_prox(X: np.ndarray, tau: float) -> tuple[np.ndarray, float]:
    w, V = eigh(0.5 * (X + X.T))
    w = np.maximum(w - tau, 0.0)
    keep = w > 0
    return (V[:, keep] * w[keep]) @ V[:, keep].T, float(w.sum())


def svt_prox(X: np.ndarray, tau: float) -> np.ndarray:
    """
    Proximal operator of tau ||.||_*: soft-threshold the singular values.

    Raises:
        InvalidInputError: tau <= 0
    """
    if tau <= 0:
        raise InvalidInputError(f"tau must be positive, got {tau}")
    return _svt(np.asarray(X, dtype=float), tau)[0]


def psd_prox(X: np.ndarray, tau: float) -> np.ndarray:
    """Proximal operator of tau ||.||_* restricted to the PSD cone (trace shrink, clip)."""
    if tau <= 0:
        raise InvalidInputError(f"tau must be positive, got {tau}")
    X = np.asarray(X, dtype=float)
    if X.shape[0] != X.shape[1]:
        raise DimensionError(f"psd_prox needs a square matrix, got {X.shape}")
    return _psd_prox(X, tau)[0]


# =============================================================================
# PROBLEM AND REPORT
# =============================================================================


@dataclass(eq=False)
class CompletionProblem:
    """Measurements b_k = <M, w_{a_k}> for the draws a_k of a sample set."""

    basis: BasisSet
    dual: DualBasisData
    samples: SampleSet
    measurements: np.ndarray
    noise_level: float = 0.0  # delta; 0 selects the exact program
    truth: np.ndarray | None = None

    def __post_init__(self):
        self.measurements = np.asarray(self.measurements, dtype=float).ravel()
        if self.measurements.size != self.samples.m:
            raise InvalidInputError(
                f"{self.measurements.size} measurements for {self.samples.m} samples"
            )
        if self.noise_level < 0:
            raise InvalidInputError(f"noise_level must be >= 0, got {self.noise_level}")
        if self.samples.L != self.basis.L:
            raise DimensionError(f"Sample drawn for L = {self.samples.L}, basis has {self.basis.L}")
        if self.samples.m == 0:
            raise InvalidInputError("Completion problem needs at least one measurement")
        if self.truth is not None:
            self.truth = np.asarray(self.truth, dtype=float)
            if self.truth.shape != self.basis.shape:
                raise DimensionError(f"Truth has shape {self.truth.shape}, basis {self.basis.shape}")

    @property
    def subspace(self) -> SubspaceConstraints:
        return self.basis.constraints

    @classmethod
    def from_truth(
        cls,
        basis: BasisSet,
        dual: DualBasisData,
        samples: SampleSet,
        M: np.ndarray,
        noise_sigma: float = 0.0,
        noise_level: float = 0.0,
        rng: np.random.Generator | None = None,
    ) -> CompletionProblem:
        """
        Measures a planted matrix.

        Noise is drawn once per basis index, so duplicated draws see the same
        value.

        Args:
            noise_sigma: Standard deviation of Gaussian coefficient noise
            noise_level: delta of the noisy program
            rng: Generator for the noise (required when noise_sigma > 0)
        """
        coeffs = basis.coefficients(M)
        if noise_sigma > 0:
            if rng is None:
                raise InvalidInputError("noise_sigma > 0 needs an rng")
            coeffs = coeffs + rng.normal(0.0, noise_sigma, size=basis.L)
        return cls(
            basis=basis,
            dual=dual,
            samples=samples,
            measurements=coeffs[samples.indices],
            noise_level=noise_level,
            truth=M,
        )

    def deduplicated(self) -> tuple[np.ndarray, np.ndarray]:
        """
        Distinct sampled indices and their (averaged) measurements.

        Raises:
            InfeasibleConstraintsError: Duplicates disagree in the exact program
        """
        counts = self.samples.counts
        idx = np.flatnonzero(counts)
        sums = np.bincount(self.samples.indices, weights=self.measurements, minlength=self.basis.L)
        mean = sums / np.maximum(counts, 1)

        spread = float(np.max(np.abs(self.measurements - mean[self.samples.indices])))
        scale = max(1.0, float(np.max(np.abs(self.measurements))))
        if self.noise_level == 0 and spread > DUPLICATE_TOL * scale:
            raise InfeasibleConstraintsError(
                f"Duplicated indices carry inconsistent measurements (spread {spread:.3e})"
            )
        return idx, mean[idx]

    def misfit(self, X: np.ndarray) -> float:
        """||R_Omega(X) - sum_k b_k z_{a_k} L/m||_F."""
        coeffs = self.basis.coefficients(X)
        residual = coeffs[self.samples.indices] - self.measurements
        return float(np.linalg.norm(sampling_expand(self.basis, self.dual, self.samples, residual)))


@dataclass
class RecoveryReport:
    """Solver output and convergence history."""

    X_hat: np.ndarray
    objective: float
    constraint_residual: float  # max |<X, w_a> - b_a|, or the delta-slack when noisy
    iterations: int
    converged: bool
    rank: int = 0
    undersampled: bool = False
    rel_err_vs_truth: float | None = None
    noise_residual: float | None = None  # ||R_Omega X - R_Omega b||_F for the noisy program
    rho_final: float = 1.0
    objective_trace: list[float] = field(default_factory=list)
    residual_trace: list[float] = field(default_factory=list)
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return all_passed(self.checks)

    def success(self, tol: float = 1e-4) -> bool:
        return self.rel_err_vs_truth is not None and self.rel_err_vs_truth <= tol


# =============================================================================
# ADMM
# =============================================================================


def _prox_for(basis: BasisSet):
    return _psd_prox if basis.constraints.psd and basis.is_square else _svt


class _AffineProjector:
    """Projection onto {x in span(W) : W_O^T x = b} via a Cholesky factor of H[O, O]."""

    def __init__(self, basis: BasisSet, dual: DualBasisData, idx: np.ndarray, b: np.ndarray):
        self.W = basis.W
        self.Z = dual.Z
        self.W_O = basis.W[:, idx]
        self.b = b
        self.complete = basis.is_complete
        G = dual.H[np.ix_(idx, idx)]
        self.factor = cho_factor(G)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        y = x if self.complete else self.Z @ (self.W.T @ x)
        return y - self.W_O @ cho_solve(self.factor, self.W_O.T @ y - self.b)


def _balance(rho: float, r_pri: float, r_dual: float, cfg: SolverConfig) -> float:
    if r_pri > cfg.balance_factor * r_dual:
        return rho * cfg.rho_scale
    if r_dual > cfg.balance_factor * r_pri:
        return rho / cfg.rho_scale
    return rho


def solve_exact(p: CompletionProblem, cfg: SolverConfig | None = None) -> RecoveryReport:
    """
    Solves min ||X||_* subject to the sampled coefficients and X in S.

    Never raises on non-convergence; the report carries converged=False.

    Raises:
        InvalidInputError: p.noise_level > 0
        InfeasibleConstraintsError: Duplicated indices disagree
    """
    cfg = cfg or SolverConfig()
    cfg.validate()
    if p.noise_level > 0:
        raise InvalidInputError("solve_exact needs noise_level = 0, use solve_noisy")

    B = p.basis
    idx, b = p.deduplicated()
    try:
        project = _AffineProjector(B, p.dual, idx, b)
    except LinAlgError as e:
        raise InfeasibleConstraintsError(f"Sampled Gram block is singular: {e}") from e
    prox = _prox_for(B)

    rho = cfg.rho
    y = project(np.zeros(B.W.shape[0]))
    u = np.zeros_like(y)
    objective_trace: list[float] = []
    residual_trace: list[float] = []
    converged = False
    it = 0

    for it in range(1, cfg.max_iter + 1):
        X, obj = prox(B.unvec(y - u), 1.0 / rho)
        x = B.vec(X)
        y_old = y
        y = project(x + u)
        u = u + x - y

        r_pri = float(np.linalg.norm(x - y))
        step = float(np.linalg.norm(y - y_old))
        r_dual = rho * step
        objective_trace.append(obj)
        residual_trace.append(r_pri)

        scale = max(1.0, float(np.linalg.norm(y)))
        if r_pri <= cfg.feas_tol * scale and (
            r_dual <= cfg.feas_tol * max(1.0, rho * float(np.linalg.norm(u)))
            or step <= cfg.rel_tol * scale
        ):
            converged = True
            break

        if cfg.adapt_rho:
            new_rho = _balance(rho, r_pri, r_dual, cfg)
            u *= rho / new_rho
            rho = new_rho

    if not converged:
        logger.warning(f"solve_exact did not converge in {cfg.max_iter} iterations")
    else:
        logger.debug(f"solve_exact converged after {it} iterations (rho={rho:.3g})")

    X_hat = B.unvec(y)
    residual = float(np.max(np.abs(B.W[:, idx].T @ y - b)))
    return _report(p, X_hat, residual, it, converged, rho, objective_trace, residual_trace, cfg)


def solve_noisy(p: CompletionProblem, cfg: SolverConfig | None = None) -> RecoveryReport:
    """
    Solves min ||X||_* subject to ||R_Omega(X) - R_Omega(M)||_F <= delta, X in S.

    With K = H^-1[O, O] = R R^T and sampling weights k, the constraint is
    ||R^T (k * (W_O^T x - b))|| <= delta, a Euclidean ball in whitened
    coordinates. delta = 0 delegates to solve_exact.
    """
    cfg = cfg or SolverConfig()
    cfg.validate()
    if p.noise_level == 0:
        return solve_exact(p, cfg)

    B = p.basis
    delta = p.noise_level
    idx, b = p.deduplicated()
    weights = (p.samples.L / p.samples.m) * p.samples.counts[idx]
    K = p.dual.H_inv[np.ix_(idx, idx)]
    R = cholesky(0.5 * (K + K.T), lower=True)

    # x = W c; A x = R^T (k * W_O^T x) = Bc c with W_O^T W = H[O, :]
    Bc = R.T @ (weights[:, None] * p.dual.H[idx, :])
    a = R.T @ (weights * b)
    factor = cho_factor(p.dual.H + Bc.T @ Bc)
    prox = _prox_for(B)

    rho = cfg.rho
    N = B.W.shape[0]
    y = np.zeros(N)
    u = np.zeros(N)
    s = np.zeros_like(a)
    v = np.zeros_like(a)
    objective_trace: list[float] = []
    residual_trace: list[float] = []
    converged = False
    it = 0
    x = np.zeros(N)
    ax = np.zeros_like(a)

    for it in range(1, cfg.max_iter + 1):
        c = cho_solve(factor, B.W.T @ (y - u) + Bc.T @ (s - v + a))
        x = B.W @ c
        ax = Bc @ c

        y_old, s_old = y, s
        Y, obj = prox(B.unvec(x + u), 1.0 / rho)
        y = B.vec(Y)
        t = ax - a + v
        norm_t = float(np.linalg.norm(t))
        s = t if norm_t <= delta else t * (delta / norm_t)

        u = u + x - y
        v = v + ax - a - s

        r_pri = float(np.sqrt(np.sum((x - y) ** 2) + np.sum((ax - a - s) ** 2)))
        step = float(np.sqrt(np.sum((y - y_old) ** 2) + np.sum((s - s_old) ** 2)))
        r_dual = rho * step
        objective_trace.append(obj)
        residual_trace.append(r_pri)

        scale = max(1.0, float(np.linalg.norm(x)))
        if r_pri <= cfg.feas_tol * scale and (
            r_dual <= cfg.feas_tol * max(1.0, rho * float(np.linalg.norm(u)))
            or step <= cfg.rel_tol * scale
        ):
            converged = True
            break

        if cfg.adapt_rho:
            new_rho = _balance(rho, r_pri, r_dual, cfg)
            u *= rho / new_rho
            v *= rho / new_rho
            rho = new_rho

    if not converged:
        logger.warning(f"solve_noisy did not converge in {cfg.max_iter} iterations")

    X_hat = B.unvec(x)
    noise_residual = float(np.linalg.norm(ax - a))
    report = _report(
        p,
        X_hat,
        max(0.0, noise_residual - delta),
        it,
        converged,
        rho,
        objective_trace,
        residual_trace,
        cfg,
    )
    report.noise_residual = noise_residual
    return report


def solve(p: CompletionProblem, cfg: SolverConfig | None = None) -> RecoveryReport:
    """Dispatches on p.noise_level."""
    return solve_noisy(p, cfg) if p.noise_level > 0 else solve_exact(p, cfg)


def _report(
    p: CompletionProblem,
    X_hat: np.ndarray,
    residual: float,
    iterations: int,
    converged: bool,
    rho: float,
    objective_trace: list[float],
    residual_trace: list[float],
    cfg: SolverConfig,
) -> RecoveryReport:
    s = np.linalg.svd(X_hat, compute_uv=False)
    rank = int(np.sum(s > DEFAULT_RANK_TOL * s[0])) if s.size and s[0] > 0 else 0

    # information floor: fewer distinct measurements than dim T
    r_ref = rank
    if p.truth is not None and np.any(p.truth):
        st = np.linalg.svd(p.truth, compute_uv=False)
        r_ref = int(np.sum(st > DEFAULT_RANK_TOL * st[0]))
    n1, n2 = p.basis.shape
    dim_T = r_ref * (n1 + n2 - r_ref)
    undersampled = p.samples.n_unique < dim_T
    if undersampled:
        logger.info(f"Undersampled: {p.samples.n_unique} distinct samples < dim T = {dim_T}")

    rel_err = None
    if p.truth is not None:
        denom = float(np.linalg.norm(p.truth))
        diff = float(np.linalg.norm(X_hat - p.truth))
        rel_err = diff / denom if denom > 0 else diff

    return RecoveryReport(
        X_hat=X_hat,
        objective=float(s.sum()),
        constraint_residual=residual,
        iterations=iterations,
        converged=converged,
        rank=rank,
        undersampled=undersampled,
        rel_err_vs_truth=rel_err,
        rho_final=rho,
        objective_trace=objective_trace,
        residual_trace=residual_trace,
        checks=_subspace_checks(p, X_hat, residual, cfg),
    )


def _subspace_checks(
    p: CompletionProblem, X: np.ndarray, residual: float, cfg: SolverConfig
) -> list[CheckResult]:
    scale = max(1.0, float(np.linalg.norm(X)))
    tol = cfg.check_tol * scale
    checks = [
        CheckResult(
            name="Measurements",
            passed=residual <= max(cfg.check_tol, cfg.feas_tol) * scale,
            message=f"constraint residual {residual:.3e}",
        )
    ]
    flags = p.subspace
    if flags.symmetric:
        value = float(np.linalg.norm(X - X.T))
        checks.append(CheckResult("Symmetric", value <= tol, f"||X - X^T||_F = {value:.3e}"))
    if flags.row_sum_zero:
        value = float(np.linalg.norm(X.sum(axis=1)))
        checks.append(CheckResult("Row sums", value <= tol, f"||X 1|| = {value:.3e}"))
    if flags.psd:
        value = float(np.linalg.eigvalsh(0.5 * (X + X.T))[0])
        checks.append(CheckResult("PSD", value >= -tol, f"lambda_min = {value:.3e}"))
    return checks
