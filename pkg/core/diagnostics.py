"""
Correlation parameter, coherence profile and sample-size bounds.

The correlation parameter replaces the restricted isometry property for
general bases: it measures how far (1/n) sum w^T w and (1/n) sum w w^T are
from the identity. The coherence profile gives the tightest nu satisfying
the three coherence inequalities for a concrete M. The bound calculators
turn (mu, nu, spectrum) into the number of samples, the number of golfing
batches and the failure probabilities of each step.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import eigvalsh

from core.basis_families import BasisSet, unvec_stack, vec, vec_stack, weights_vector
from core.dual_basis import DualBasisData, GramSpectrum, gram_matrix
from core.errors import (
    DimensionError,
    InvalidConfidenceError,
    InvalidDimensionError,
    InvalidInputError,
)
from core.tangent_geometry import DEFAULT_RANK_TOL, project_T, tangent_space_of

logger = logging.getLogger(__name__)

C_VARIANTS = ("proof", "statement")
# Relative slack when checking the derived (simplified) coherence bounds
SIMPLIFIED_SLACK = 1e-9


# =============================================================================
# CORRELATION
# =============================================================================


@dataclass
class CorrelationReport:
    """Correlation parameter and the spectral norms of both frame sums."""

    mu: float
    mu_rows: float  # || (1/n2) sum w w^T - I ||
    mu_cols: float  # || (1/n1) sum w^T w - I ||
    lambda_max_wwt: float  # lambda_max(sum w w^T)
    lambda_max_wtw: float  # lambda_max(sum w^T w)
    n: int

    @property
    def bound(self) -> float:
        """(mu + 1) n, an upper bound on both lambda_max values."""
        return (self.mu + 1.0) * self.n

    @property
    def bound_holds(self) -> bool:
        return max(self.lambda_max_wwt, self.lambda_max_wtw) <= self.bound + 1e-8


def frame_sums(B: BasisSet) -> tuple[np.ndarray, np.ndarray]:
    """(sum w w^T, sum w^T w) as n1 x n1 and n2 x n2 matrices."""
    mats = B.matrices()
    rows = np.einsum("aij,akj->ik", mats, mats)
    cols = np.einsum("aji,ajk->ik", mats, mats)
    return 0.5 * (rows + rows.T), 0.5 * (cols + cols.T)


def correlation_parameter(B: BasisSet) -> CorrelationReport:
    """
    mu = max(||(1/n) sum w^T w - I||, ||(1/n) sum w w^T - I||) in operator norm.

    For rectangular bases sum w w^T is normalized by n2 and sum w^T w by n1.
    """
    rows, cols = frame_sums(B)
    ev_rows = eigvalsh(rows)
    ev_cols = eigvalsh(cols)
    mu_rows = float(np.max(np.abs(ev_rows / B.n2 - 1.0)))
    mu_cols = float(np.max(np.abs(ev_cols / B.n1 - 1.0)))

    report = CorrelationReport(
        mu=max(mu_rows, mu_cols),
        mu_rows=mu_rows,
        mu_cols=mu_cols,
        lambda_max_wwt=float(ev_rows[-1]),
        lambda_max_wtw=float(ev_cols[-1]),
        n=B.n,
    )
    logger.debug(f"Correlation of {B.family} basis: mu = {report.mu:.6g}")
    return report


# =============================================================================
# COHERENCE
# =============================================================================


@dataclass
class SimplifiedBound:
    """One derived coherence inequality lhs <= rhs."""

    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs * (1 + SIMPLIFIED_SLACK) + 1e-14

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


@dataclass
class CoherenceProfile:
    """Tightest coherence nu of M with respect to a basis."""

    nu_w: float
    nu_z: float
    nu_joint: float
    r: int
    n: int
    c_v: float
    simplified_w: SimplifiedBound
    simplified_z: SimplifiedBound
    simplified_joint: SimplifiedBound

    @property
    def nu(self) -> float:
        return max(self.nu_w, self.nu_z, self.nu_joint)

    def as_metadata(self) -> dict[str, float]:
        return {
            "nu": self.nu,
            "nu_w": self.nu_w,
            "nu_z": self.nu_z,
            "nu_joint": self.nu_joint,
            "c_v": self.c_v,
        }


def coherence_profile(
    M: np.ndarray,
    B: BasisSet,
    D: DualBasisData,
    rank_tol: float = DEFAULT_RANK_TOL,
    c_v: float | None = None,
) -> CoherenceProfile:
    """
    Evaluates the three coherence inequalities by exact summation.

    Args:
        M: Rank-r matrix (rank detected with rank_tol)
        B: Basis family
        D: Dual basis of B
        rank_tol: Relative singular value cut-off
        c_v: Vector coherence constant (default: from D's spectrum)

    Raises:
        ZeroMatrixError: M is zero
        DimensionError: M does not match the basis shape
    """
    M = np.asarray(M, dtype=float)
    if M.shape != B.shape:
        raise DimensionError(f"M has shape {M.shape}, basis has {B.shape}")

    Ts = tangent_space_of(M, rank_tol)
    spectrum = D.spectrum if c_v is None else D.spectrum.with_c_v(c_v)
    n, r = B.n, Ts.r

    PW = vec_stack(project_T(Ts, B.matrices()))  # columns vec(P_T w_a)
    PZ = vec_stack(project_T(Ts, unvec_stack(D.Z, D.shape)))  # columns vec(P_T z_a)

    # row a of PW^T W holds <P_T w_a, w_b> over b
    nu_w = n / r * float(np.max(np.sum((PW.T @ B.W) ** 2, axis=1)))
    nu_z = n / (spectrum.c_v * r) * float(np.max(np.sum((PZ.T @ B.W) ** 2, axis=1)))

    sgn = vec(Ts.sign())
    nu_joint = n**2 / r * float(np.max((B.W.T @ sgn) ** 2))
    nu = max(nu_w, nu_z, nu_joint)

    lam = spectrum.lambda_max_Hinv
    h = spectrum.hinv_inf_norm
    profile = CoherenceProfile(
        nu_w=nu_w,
        nu_z=nu_z,
        nu_joint=nu_joint,
        r=r,
        n=n,
        c_v=spectrum.c_v,
        simplified_w=SimplifiedBound(
            lhs=float(np.max(np.sum(PW**2, axis=0))),
            rhs=lam * nu * r / n,
        ),
        simplified_z=SimplifiedBound(
            lhs=float(np.max(np.sum(PZ**2, axis=0))),
            rhs=h**2 * lam * nu * r / n,
        ),
        simplified_joint=SimplifiedBound(
            lhs=float(np.max((D.Z.T @ sgn) ** 2)),
            rhs=h**2 * nu * r / n**2,
        ),
    )
    logger.debug(
        f"Coherence r={r}: nu_w={nu_w:.4g} nu_z={nu_z:.4g} nu_joint={nu_joint:.4g}"
    )
    return profile


# =============================================================================
# SAMPLE BOUND
# =============================================================================


def theorem_constant(spectrum: GramSpectrum, mu: float, variant: str = "proof") -> float:
    """
    C = max(first, c_v, (mu+1)h / min((mu+1)h, 1/4)^2) with h = ||H^-1||_inf.

    first is lambda_max(H^-1) * h for the "proof" variant and
    lambda_max(H^-1)^3 for the "statement" variant.
    """
    if variant not in C_VARIANTS:
        raise InvalidInputError(f"Unknown C variant '{variant}' (known: {', '.join(C_VARIANTS)})")
    h = spectrum.hinv_inf_norm
    lam = spectrum.lambda_max_Hinv
    a = (mu + 1.0) * h
    first = lam * h if variant == "proof" else lam**3
    return max(first, spectrum.c_v, a / min(a, 0.25) ** 2)


def batch_count(L: int, spectrum: GramSpectrum, r: int) -> tuple[float, int]:
    """
    Number of golfing batches.

    Returns:
        (l_real, l) with l_real = log2(4 sqrt(2L) cond(H) sqrt(r)) and l = ceil(l_real)
    """
    l_real = math.log2(4.0 * math.sqrt(2.0 * L) * spectrum.condition_number * math.sqrt(r))
    return l_real, max(1, math.ceil(l_real))


@dataclass
class FailureProbabilities:
    """Failure probabilities of the golfing argument (each clamped to 1)."""

    p1: float
    p2: tuple[float, ...]
    p3: tuple[float, ...]
    p4: tuple[float, ...]

    @property
    def total(self) -> float:
        return self.p1 + sum(self.p2) + sum(self.p3) + sum(self.p4)

    def as_metadata(self) -> dict[str, float]:
        return {
            "p1": self.p1,
            "p2_max": max(self.p2, default=0.0),
            "p3_max": max(self.p3, default=0.0),
            "p4_max": max(self.p4, default=0.0),
            "p_total": self.total,
        }


def _clamp(value: float) -> float:
    return min(1.0, value)


def failure_probabilities(
    spectrum: GramSpectrum,
    nu: float,
    mu: float,
    n: int,
    L: int,
    r: int,
    m: int,
    batch_sizes: Sequence[int],
) -> FailureProbabilities:
    """
    Closed-form failure probabilities for m samples split into batches.

    Args:
        spectrum: Gram spectrum (lambda extremes, ||H^-1||_inf, c_v)
        nu: Coherence
        mu: Correlation parameter
        n: Side length
        L: Basis size
        r: Rank
        m: Total number of samples (kappa = m n / (L r))
        batch_sizes: m_i per batch (kappa_i = m_i n / (L r))
    """
    if min(n, L, r) < 1 or nu <= 0:
        raise InvalidInputError("failure_probabilities needs positive n, L, r and nu")

    h = spectrum.hinv_inf_norm
    a = (mu + 1.0) * h
    t = min(a, 0.25)
    floor = n / (L * r)

    kappa = m * n / (L * r)
    p1 = _clamp(n * math.exp(-(spectrum.lambda_min_H**2) * kappa / (8.0 * nu)))

    p2, p3, p4 = [], [], []
    for m_i in batch_sizes:
        k = m_i * n / (L * r)
        p2.append(_clamp(math.exp(-k / (32.0 * (spectrum.lambda_max_Hinv * h * nu + floor)) + 0.25)))
        p3.append(_clamp(2.0 * n * math.exp(-3.0 * t**2 * k / (8.0 * (mu + 1.0) * h**2 * nu))))
        p4.append(_clamp(n**2 * math.exp(-3.0 * k / (32.0 * (spectrum.c_v * nu + floor)))))

    return FailureProbabilities(p1=p1, p2=tuple(p2), p3=tuple(p3), p4=tuple(p4))


@dataclass
class TheoremConstants:
    """Sample bound, batch layout and failure probabilities for one setting."""

    n: int
    r: int
    L: int
    nu: float
    mu: float
    beta: float
    C: float
    c_variant: str
    l_real: float
    l: int
    m_bound: int
    kappa_i: float
    m_i: int
    failure: FailureProbabilities
    spectrum: GramSpectrum = field(repr=False)

    @property
    def m(self) -> int:
        """Samples used by the uniform batch layout (l * m_i)."""
        return self.l * self.m_i

    @property
    def kappa(self) -> float:
        return self.m * self.n / (self.L * self.r)

    @property
    def batch_sizes(self) -> list[int]:
        return [self.m_i] * self.l

    @property
    def per_step_target(self) -> float:
        """n^-beta / (4 l), the budget for each failure probability."""
        return self.n ** (-self.beta) / (4.0 * self.l)

    def as_metadata(self) -> dict[str, float | int | str]:
        data = {
            "n": self.n,
            "r": self.r,
            "L": self.L,
            "nu": self.nu,
            "mu": self.mu,
            "beta": self.beta,
            "C": self.C,
            "c_variant": self.c_variant,
            "l_real": self.l_real,
            "l": self.l,
            "m_bound": self.m_bound,
            "kappa": self.kappa,
            "kappa_i": self.kappa_i,
            "m_i": self.m_i,
            "per_step_target": self.per_step_target,
        }
        data.update(self.failure.as_metadata())
        data.update(asdict(self.spectrum))
        return data


def sample_bound(
    n: int,
    r: int,
    nu: float,
    spectrum: GramSpectrum,
    mu: float,
    L: int,
    beta: float,
    c_variant: str = "proof",
) -> TheoremConstants:
    """
    Sample count guaranteeing unique recovery with probability 1 - n^-beta.

    m >= l_real * n r * 48 (C nu + n/(L r)) (beta log n + log(4 l_real)),
    with per-batch kappa_i = 48 (C nu + 1/(n r)) (beta log n + log 4l) and
    m_i = ceil(kappa_i L r / n).

    Raises:
        InvalidConfidenceError: beta <= 1
        InvalidDimensionError: n, r or L below 1
    """
    if beta <= 1:
        raise InvalidConfidenceError(f"beta must be greater than 1, got {beta}")
    if min(n, r, L) < 1:
        raise InvalidDimensionError(f"n, r, L must be >= 1, got ({n}, {r}, {L})")
    if nu <= 0:
        raise InvalidInputError(f"nu must be positive, got {nu}")

    C = theorem_constant(spectrum, mu, c_variant)
    l_real, l = batch_count(L, spectrum, r)
    log_n = math.log(n)

    m_bound = math.ceil(
        l_real * n * r * 48.0 * (C * nu + n / (L * r)) * (beta * log_n + math.log(4.0 * l_real))
    )
    kappa_i = 48.0 * (C * nu + 1.0 / (n * r)) * (beta * log_n + math.log(4.0 * l))
    m_i = math.ceil(kappa_i * L * r / n)

    failure = failure_probabilities(spectrum, nu, mu, n, L, r, l * m_i, [m_i] * l)
    return TheoremConstants(
        n=n,
        r=r,
        L=L,
        nu=nu,
        mu=mu,
        beta=beta,
        C=C,
        c_variant=c_variant,
        l_real=l_real,
        l=l,
        m_bound=m_bound,
        kappa_i=kappa_i,
        m_i=m_i,
        failure=failure,
        spectrum=spectrum,
    )


# =============================================================================
# WEIGHTED GRAM SPECTRUM
# =============================================================================


@dataclass
class WeightedSpectrumBounds:
    """Exact extreme eigenvalues of the weighted Gram matrix and their estimates."""

    lambda_max: float
    lambda_min: float
    upper_estimate: float  # lambda_max(H) + lambda_max(P)
    lower_estimate: float  # lambda_min(H) + lambda_min(P)

    @property
    def holds(self) -> bool:
        tol = 1e-10 * max(1.0, abs(self.upper_estimate))
        return (
            self.lambda_max <= self.upper_estimate + tol
            and self.lambda_min >= self.lower_estimate - tol
        )


def weighted_spectrum_bounds(
    D: Sequence[float] | np.ndarray, base: BasisSet
) -> WeightedSpectrumBounds:
    """
    Spectrum of H_bar = (D^-1 W)^T (D^-1 W) against the perturbation estimates.

    H_bar = H + P with P = W^T ((D^-1)^2 - I) W, so Weyl's inequalities bound
    the extreme eigenvalues of H_bar by those of H and P.
    """
    d = weights_vector(D, base.n1)
    factor = np.tile(d**-2, base.n2)

    H = gram_matrix(base)
    P = base.W.T @ ((factor - 1.0)[:, None] * base.W)
    H_bar = H + 0.5 * (P + P.T)

    ev_bar = eigvalsh(H_bar)
    ev_H = eigvalsh(H)
    ev_P = eigvalsh(0.5 * (P + P.T))
    return WeightedSpectrumBounds(
        lambda_max=float(ev_bar[-1]),
        lambda_min=float(ev_bar[0]),
        upper_estimate=float(ev_H[-1] + ev_P[-1]),
        lower_estimate=float(ev_H[0] + ev_P[0]),
    )
