"""
Tangent space of the rank-r variety at a matrix M = U S V^T.

T = {U A^T + B V^T}, P_T(X) = P_U X + X P_V - P_U X P_V.
All projections accept a single matrix or a stack (k, n1, n2).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from core.errors import DimensionError, InvalidDimensionError, InvalidInputError, ZeroMatrixError

logger = logging.getLogger(__name__)

# Singular values below rank_tol * sigma_max are treated as zero
DEFAULT_RANK_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class TangentSpace:
    """Orthonormal row and column factors of a rank-r matrix."""

    U: np.ndarray  # n1 x r
    V: np.ndarray  # n2 x r

    @property
    def r(self) -> int:
        return self.U.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.U.shape[0], self.V.shape[0])

    @property
    def dimension(self) -> int:
        n1, n2 = self.shape
        return self.r * (n1 + n2 - self.r)

    def sign(self) -> np.ndarray:
        """U V^T."""
        return self.U @ self.V.T


def _svd(M: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise DimensionError(f"Expected a matrix, got shape {M.shape}")
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        raise ZeroMatrixError("Tangent space of the zero matrix is undefined")
    return U, s, Vt


def numerical_rank(M: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> int:
    """Number of singular values above rank_tol * sigma_max."""
    if rank_tol <= 0:
        raise InvalidInputError(f"rank_tol must be positive, got {rank_tol}")
    _, s, _ = _svd(M)
    return int(np.sum(s > rank_tol * s[0]))


def tangent_space_of(M: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> TangentSpace:
    """
    Tangent space at M with rank detected numerically.

    Raises:
        ZeroMatrixError: M is zero
        InvalidInputError: rank_tol <= 0
    """
    if rank_tol <= 0:
        raise InvalidInputError(f"rank_tol must be positive, got {rank_tol}")
    U, s, Vt = _svd(M)
    r = int(np.sum(s > rank_tol * s[0]))
    return TangentSpace(U=U[:, :r], V=Vt[:r].T)


def tangent_space_of_rank(M: np.ndarray, r: int) -> TangentSpace:
    """Tangent space using the top r singular pairs of M."""
    U, s, Vt = _svd(M)
    if not 1 <= r <= s.size:
        raise InvalidDimensionError(f"Rank must be in [1, {s.size}], got {r}")
    return TangentSpace(U=U[:, :r], V=Vt[:r].T)


def _check_shape(Ts: TangentSpace, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[-2:] != Ts.shape:
        raise DimensionError(f"Expected trailing shape {Ts.shape}, got {X.shape}")
    return X


def project_T(Ts: TangentSpace, X: np.ndarray) -> np.ndarray:
    """P_T(X)."""
    X = _check_shape(Ts, X)
    U, V = Ts.U, Ts.V
    UX = U @ (U.T @ X)
    return UX + (X - UX) @ V @ V.T


def project_Tperp(Ts: TangentSpace, X: np.ndarray) -> np.ndarray:
    """P_T_perp(X) = (I - P_U) X (I - P_V)."""
    X = _check_shape(Ts, X)
    return X - project_T(Ts, X)


def sign_matrix(M: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """sgn(M) = U V^T from the compact SVD."""
    return tangent_space_of(M, rank_tol).sign()


def tangent_dimension(Ts: TangentSpace) -> int:
    """r (n1 + n2 - r)."""
    return Ts.dimension


def tangent_basis(Ts: TangentSpace) -> np.ndarray:
    """
    Orthonormal basis of T as columns of an (n1*n2, dim T) matrix.

    Built from U a^T for all a (n2 * r columns) and U_perp b V^T
    ((n1 - r) * r columns); the two blocks are mutually orthogonal.
    """
    n1, n2 = Ts.shape
    r = Ts.r
    full_U, _, _ = np.linalg.svd(Ts.U, full_matrices=True)
    U_perp = full_U[:, r:]

    # vec(A X B^T) = (B kron A) vec(X)
    left = np.kron(np.eye(n2), Ts.U)  # vec(U C), C in R^{r x n2}
    right = np.kron(Ts.V, U_perp)  # vec(U_perp C V^T), C in R^{(n1-r) x r}
    basis = np.hstack([left, right])
    if basis.shape[1] != Ts.dimension:
        logger.warning(f"Tangent basis has {basis.shape[1]} columns, expected {Ts.dimension}")
    return basis
