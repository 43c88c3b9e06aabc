"""
Gram matrix, dual basis and spectral constants of a basis family.

For a basis W the Gram matrix is H = W^T W and the dual basis Z = W H^-1
satisfies Z^T W = I, so any X in span(W) expands as X = sum <X, w_a> z_a.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigh, eigvalsh

from core.basis_families import BasisSet, unvec, vec
from core.errors import BasisTooLargeError, DimensionError, InvalidInputError, SingularBasisError

logger = logging.getLogger(__name__)

# Dense L x L Gram matrices above this size are refused
MAX_BASIS_SIZE = 20000
DEFAULT_CONDITION_GUARD = 1e12


@dataclass(frozen=True)
class GramSpectrum:
    """Spectral constants of H and H^-1 entering the recovery bounds."""

    lambda_min_H: float
    lambda_max_H: float
    lambda_min_Hinv: float
    lambda_max_Hinv: float
    hinv_inf_norm: float  # max row sum of |H^-1|
    c_v: float  # vector coherence constant, >= lambda_max_Hinv * hinv_inf_norm

    @property
    def condition_number(self) -> float:
        return self.lambda_max_H / self.lambda_min_H

    @property
    def c_v_minimum(self) -> float:
        return self.lambda_max_Hinv * self.hinv_inf_norm

    def with_c_v(self, c_v: float) -> GramSpectrum:
        """Copy with an explicit c_v (must not be below the minimum)."""
        if c_v < self.c_v_minimum * (1 - 1e-12):
            raise InvalidInputError(f"c_v = {c_v:g} is below the minimum {self.c_v_minimum:g}")
        return replace(self, c_v=float(c_v))

    def as_metadata(self) -> dict[str, float]:
        return asdict(self)

    def to_text(self) -> str:
        """key=value lines with round-trip precision."""
        return "\n".join(f"{k}={v!r}" for k, v in asdict(self).items()) + "\n"

    @classmethod
    def from_text(cls, text: str) -> GramSpectrum:
        values: dict[str, float] = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            values[key.strip()] = float(value)
        missing = {f.name for f in fields(cls)} - set(values)
        if missing:
            raise InvalidInputError(f"Missing spectrum keys: {', '.join(sorted(missing))}")
        return cls(**{f.name: values[f.name] for f in fields(cls)})


@dataclass(frozen=True, eq=False)
class DualBasisData:
    """Basis W with its Gram matrix, inverse Gram matrix and dual basis."""

    shape: tuple[int, int]
    W: np.ndarray
    H: np.ndarray
    H_inv: np.ndarray
    Z: np.ndarray  # W @ H_inv
    spectrum: GramSpectrum

    @property
    def L(self) -> int:
        return self.W.shape[1]

    def matrix(self, alpha: int) -> np.ndarray:
        """The alpha-th dual basis matrix."""
        return unvec(self.Z[:, alpha], self.shape)


def gram_matrix(B: BasisSet) -> np.ndarray:
    """H = W^T W (symmetrized)."""
    if B.L > MAX_BASIS_SIZE:
        raise BasisTooLargeError(
            f"L = {B.L} exceeds the dense Gram limit of {MAX_BASIS_SIZE} elements"
        )
    H = B.W.T @ B.W
    return 0.5 * (H + H.T)


def dual_set(
    B: BasisSet,
    condition_guard: float = DEFAULT_CONDITION_GUARD,
    c_v: float | None = None,
) -> DualBasisData:
    """
    Computes H, H^-1 and the dual basis Z.

    Args:
        B: Basis family
        condition_guard: Largest accepted condition number of H
        c_v: Explicit vector coherence constant (default: its minimum)

    Raises:
        SingularBasisError: H is singular or cond(H) exceeds the guard
    """
    H = gram_matrix(B)
    evals = eigvalsh(H)
    lo, hi = float(evals[0]), float(evals[-1])
    cond = hi / lo if lo > 0 else float("inf")
    if cond > condition_guard:
        raise SingularBasisError(
            f"Gram matrix of {B.family} basis has condition number {cond:.3e} "
            f"(guard {condition_guard:.1e})",
            cond,
        )

    L = B.L
    try:
        H_inv = cho_solve(cho_factor(H), np.eye(L))
    except LinAlgError:
        logger.warning(f"Cholesky of H failed (cond {cond:.3e}), using floored eigensolve")
        vals, vecs = eigh(H)
        vals = np.maximum(vals, hi / condition_guard)
        H_inv = (vecs / vals) @ vecs.T
    H_inv = 0.5 * (H_inv + H_inv.T)

    Z = B.W @ H_inv
    for arr in (H, H_inv, Z):
        arr.setflags(write=False)

    data = DualBasisData(
        shape=B.shape,
        W=B.W,
        H=H,
        H_inv=H_inv,
        Z=Z,
        spectrum=_spectrum(H_inv, lo, hi),
    )
    if c_v is not None:
        data = replace(data, spectrum=data.spectrum.with_c_v(c_v))

    logger.debug(
        f"Dual basis {B.family} L={L}: lambda(H) in [{lo:.4g}, {hi:.4g}], "
        f"||H^-1||_inf = {data.spectrum.hinv_inf_norm:.4g}"
    )
    return data


def _spectrum(H_inv: np.ndarray, lo: float, hi: float) -> GramSpectrum:
    inv_evals = eigvalsh(H_inv)
    h = float(np.max(np.sum(np.abs(H_inv), axis=1)))
    lam_max_inv = float(inv_evals[-1])
    return GramSpectrum(
        lambda_min_H=lo,
        lambda_max_H=hi,
        lambda_min_Hinv=float(inv_evals[0]),
        lambda_max_Hinv=lam_max_inv,
        hinv_inf_norm=h,
        c_v=lam_max_inv * h,
    )


def gram_spectrum(D: DualBasisData, c_v: float | None = None) -> GramSpectrum:
    """
    Spectral constants of a dual basis.

    Args:
        D: Dual basis data
        c_v: Explicit c_v; must be >= lambda_max(H^-1) * ||H^-1||_inf

    Raises:
        InvalidInputError: c_v below its minimum
    """
    if c_v is None:
        return D.spectrum
    return D.spectrum.with_c_v(c_v)


def biorthogonality_residual(D: DualBasisData) -> float:
    """max |Z^T W - I|."""
    return float(np.max(np.abs(D.Z.T @ D.W - np.eye(D.L))))


def project_span(D: DualBasisData, X: np.ndarray) -> np.ndarray:
    """Orthogonal projection of X onto span(W): sum <X, w_a> z_a."""
    X = np.asarray(X, dtype=float)
    if X.shape != D.shape:
        raise DimensionError(f"Expected shape {D.shape}, got {X.shape}")
    return unvec(D.Z @ (D.W.T @ vec(X)), D.shape)
