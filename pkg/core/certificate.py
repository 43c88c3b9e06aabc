"""
Dual certificate construction (golfing scheme) and verification.

A matrix Y in the range of R*_Omega with

    ||P_T Y - sgn M||_F <= 1/4 sqrt(1/(2L)) lambda_min(H^-1) / lambda_max(H^-1)
    ||P_T_perp Y||      <= 1/2

certifies, together with lambda_min(P_T F_Omega P_T) > lambda_min(H)/2, that
M is the unique minimizer of the nuclear-norm program.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from core.basis_families import BasisSet, vec
from core.dual_basis import DualBasisData
from core.errors import DimensionCapError, DimensionError, EmptyPartitionError
from core.sampling_ops import (
    DEFAULT_DIMENSION_CAP,
    Sample,
    ptfpt_min_eig,
    sampling_adjoint_apply,
)
from core.tangent_geometry import DEFAULT_RANK_TOL, project_T, project_Tperp, tangent_space_of
from core.verdicts import CheckResult

logger = logging.getLogger(__name__)

# Allowed drift between the direct and recursive residual updates
RECURSION_TOL = 1e-10
# Relative least-squares residual for membership in range R*_Omega
RANGE_TOL = 1e-8


@dataclass
class CertificateVerdict:
    """Outcome of the certificate conditions."""

    cond1: bool
    cond2: bool
    min_eig_ok: bool | None = None  # None when the eigenvalue check was skipped
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def certified(self) -> bool:
        return self.cond1 and self.cond2


@dataclass
class CertificateReport:
    """Golfing iterates and the quantities the verdict is based on."""

    Y: np.ndarray
    r: int
    q_norms: list[float]
    eta_trace: list[float]
    cond1_lhs: float
    cond1_rhs: float
    cond2_lhs: float
    min_eig: float | None = None
    min_eig_threshold: float | None = None
    recursion_gap: float = 0.0
    range_residual: float | None = None
    # per-step thresholds t2 (residual halving) and t3 (entrywise decay)
    step_thresholds: dict[str, float] = field(default_factory=dict)
    verdict: CertificateVerdict | None = None

    @property
    def halving_steps(self) -> list[bool]:
        """||Q_i|| <= 2^-i sqrt(r) for every i."""
        root_r = math.sqrt(self.r)
        return [q <= root_r * 0.5**i + 1e-12 for i, q in enumerate(self.q_norms)]


def cond1_threshold(D: DualBasisData, L: int) -> float:
    """1/4 sqrt(1/(2L)) lambda_min(H^-1) / lambda_max(H^-1)."""
    sp = D.spectrum
    return 0.25 * math.sqrt(1.0 / (2.0 * L)) * sp.lambda_min_Hinv / sp.lambda_max_Hinv


def eta_max(X: np.ndarray, D: DualBasisData) -> float:
    """eta(X) = max_b |<X, z_b>|."""
    X = np.asarray(X, dtype=float)
    if X.shape != D.shape:
        raise DimensionError(f"Expected shape {D.shape}, got {X.shape}")
    if not D.L:
        return 0.0
    return float(np.max(np.abs(D.Z.T @ vec(X))))


def golfing_build(
    M: np.ndarray,
    B: BasisSet,
    D: DualBasisData,
    s: Sample,
    rank_tol: float = DEFAULT_RANK_TOL,
    mu: float | None = None,
    check_min_eig: bool = True,
    cap: int = DEFAULT_DIMENSION_CAP,
) -> CertificateReport:
    """
    Builds Y_l by the golfing scheme over the batches of s.

    Q_0 = sgn M, Y_i = Y_{i-1} + R*_i Q_{i-1}, Q_i = sgn M - P_T Y_i. The
    recursion Q_i = (P_T - P_T R*_i P_T) Q_{i-1} is iterated as a separate
    chain and the largest disagreement is kept as recursion_gap. The
    least-squares residual of Y_l against span{w_a : a in Omega} is kept as
    range_residual.

    Args:
        M: Ground truth of rank r
        B: Basis family
        D: Dual basis of B
        s: Sample set with batches (see partition_omega)
        rank_tol: Relative singular value cut-off for rank(M)
        mu: Correlation parameter, used only to record the t3 threshold
        check_min_eig: Also evaluate lambda_min(P_T F_Omega P_T)
        cap: Largest dim T for the eigenvalue check

    Raises:
        EmptyPartitionError: s has no batches
    """
    if s.l == 0:
        raise EmptyPartitionError("Golfing needs at least one batch")

    Ts = tangent_space_of(M, rank_tol)
    sgn = Ts.sign()
    Q = sgn
    Y = np.zeros(B.shape)
    Q_rec = sgn
    q_norms = [float(np.linalg.norm(Q))]
    eta_trace = [eta_max(Q, D)]
    gap = 0.0

    for i, batch in enumerate(s.batches(), 1):
        if batch.m == 0:
            logger.warning(f"Golfing batch {i} is empty, skipped")
            q_norms.append(q_norms[-1])
            eta_trace.append(eta_trace[-1])
            continue
        Y = Y + sampling_adjoint_apply(B, D, batch, Q)
        Q = sgn - project_T(Ts, Y)
        # (P_T - P_T R*_i P_T) Q_{i-1}, its own chain from sgn M
        Q_rec = Q_rec - project_T(Ts, sampling_adjoint_apply(B, D, batch, project_T(Ts, Q_rec)))
        gap = max(gap, float(np.linalg.norm(Q - Q_rec)))
        q_norms.append(float(np.linalg.norm(Q)))
        eta_trace.append(eta_max(Q, D))
        logger.debug(f"Golfing step {i}/{s.l}: ||Q|| = {q_norms[-1]:.4g}")

    if gap > RECURSION_TOL * max(1.0, math.sqrt(Ts.r)):
        logger.warning(f"Golfing recursion drift {gap:.3e}")

    report = CertificateReport(
        Y=Y,
        r=Ts.r,
        q_norms=q_norms,
        eta_trace=eta_trace,
        cond1_lhs=float(np.linalg.norm(project_T(Ts, Y) - sgn)),
        cond1_rhs=cond1_threshold(D, B.L),
        cond2_lhs=float(np.linalg.norm(project_Tperp(Ts, Y), 2)),
        recursion_gap=gap,
        range_residual=range_residual(Y, B, s),
        step_thresholds=_step_thresholds(D, Ts.r, mu),
    )

    if check_min_eig:
        try:
            report.min_eig = ptfpt_min_eig(Ts, B, s, cap)
            report.min_eig_threshold = 0.5 * D.spectrum.lambda_min_H
        except DimensionCapError as e:
            logger.warning(f"Skipping min-eigenvalue check: {e}")

    report.verdict = verify_dual_certificate(report, D, B.L)
    return report


def _step_thresholds(D: DualBasisData, r: int, mu: float | None) -> dict[str, float]:
    thresholds = {"t2": 0.5}
    if mu is not None:
        a = (mu + 1.0) * D.spectrum.hinv_inf_norm
        thresholds["t3"] = min(a, 0.25) / math.sqrt(r)
    return thresholds


def verify_dual_certificate(rep: CertificateReport, D: DualBasisData, L: int) -> CertificateVerdict:
    """
    Evaluates both certificate conditions (and the eigenvalue check if present).

    Reports, never raises.
    """
    rhs = cond1_threshold(D, L)
    cond1 = rep.cond1_lhs <= rhs
    cond2 = rep.cond2_lhs <= 0.5

    checks = [
        CheckResult(
            name="||P_T Y - sgn M||_F",
            passed=cond1,
            message=f"{rep.cond1_lhs:.3e} <= {rhs:.3e}",
        ),
        CheckResult(
            name="||P_Tperp Y||",
            passed=cond2,
            message=f"{rep.cond2_lhs:.3e} <= 0.5",
        ),
    ]

    min_eig_ok = None
    if rep.min_eig is not None and rep.min_eig_threshold is not None:
        min_eig_ok = rep.min_eig > rep.min_eig_threshold
        checks.append(
            CheckResult(
                name="lambda_min(P_T F P_T)",
                passed=min_eig_ok,
                message=f"{rep.min_eig:.4g} > {rep.min_eig_threshold:.4g}",
                severity="warning",
            )
        )

    if rep.range_residual is not None:
        checks.append(
            CheckResult(
                name="Y in range R*_Omega",
                passed=rep.range_residual <= RANGE_TOL,
                message=f"relative residual {rep.range_residual:.3e}",
                severity="warning",
            )
        )

    return CertificateVerdict(cond1=cond1, cond2=cond2, min_eig_ok=min_eig_ok, checks=checks)


def range_residual(Y: np.ndarray, B: BasisSet, s: Sample) -> float:
    """Relative residual of the least-squares fit of Y onto span{w_a : a in Omega}."""
    y = B.vec(Y)
    norm = float(np.linalg.norm(y))
    if norm == 0:
        return 0.0
    W_O = B.W[:, s.unique_indices]
    if W_O.shape[1] == 0:
        return 1.0
    coef, *_ = np.linalg.lstsq(W_O, y, rcond=None)
    return float(np.linalg.norm(W_O @ coef - y)) / norm


def certificate_from_candidate(
    Y: np.ndarray,
    M: np.ndarray,
    B: BasisSet,
    D: DualBasisData,
    samples: Sample | None = None,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> CertificateReport:
    """
    Evaluates a user-supplied certificate candidate Y for M.

    With samples given, membership of Y in range R*_Omega is tested too.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.shape != B.shape:
        raise DimensionError(f"Y has shape {Y.shape}, basis has {B.shape}")

    Ts = tangent_space_of(M, rank_tol)
    sgn = Ts.sign()
    residual = sgn - project_T(Ts, Y)
    report = CertificateReport(
        Y=Y,
        r=Ts.r,
        q_norms=[float(np.linalg.norm(sgn)), float(np.linalg.norm(residual))],
        eta_trace=[eta_max(sgn, D), eta_max(residual, D)],
        cond1_lhs=float(np.linalg.norm(residual)),
        cond1_rhs=cond1_threshold(D, B.L),
        cond2_lhs=float(np.linalg.norm(project_Tperp(Ts, Y), 2)),
    )
    if samples is not None:
        report.range_residual = range_residual(Y, B, samples)
    report.verdict = verify_dual_certificate(report, D, B.L)
    return report
