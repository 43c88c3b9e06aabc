"""
Basis families for general matrix completion.

A basis is a set of L unit-Frobenius-norm matrices of shape n1 x n2, stored
as the columns of an (n1*n2) x L matrix W. Vectorization is column-major
everywhere in the package.

Families:
- entry: e_ij (orthonormal, complete)
- edg: 1/2 (e_ii + e_jj - e_ij - e_ji) for i < j (Euclidean distance geometry)
- hankel: normalized anti-diagonal indicators (orthonormal, L = n1 + n2 - 1)
- rank_one: w w^T for given vectors (quadratic measurements)
- weighted: D^-1 w_alpha renormalized (weighted nuclear norm)
- custom: user-supplied columns
"""

from __future__ import annotations

import itertools
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from core.errors import (
    DimensionError,
    InvalidDimensionError,
    InvalidInputError,
    InvalidWeightsError,
    SingularBasisError,
)
from core.rng import make_rng
from core.verdicts import CheckResult, all_passed

logger = logging.getLogger(__name__)

FAMILIES = ("entry", "edg", "hankel", "rank_one", "weighted", "custom")
CONSTRAINT_FLAGS = ("symmetric", "row_sum_zero", "psd")

# Unit norm tolerance for built-in families
NORM_TOL = 1e-12
# Condition number above which a rank-one family counts as dependent
RANK_ONE_CONDITION_GUARD = 1e12


# =============================================================================
# VECTORIZATION
# =============================================================================


def vec(X: np.ndarray) -> np.ndarray:
    """Column-major vectorization of a matrix."""
    return np.asarray(X, dtype=float).reshape(-1, order="F")


def unvec(x: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Inverse of vec()."""
    return np.asarray(x, dtype=float).reshape(shape, order="F")


def vec_stack(mats: np.ndarray) -> np.ndarray:
    """Vectorizes a stack (k, n1, n2) into the columns of an (n1*n2, k) matrix."""
    k = mats.shape[0]
    return mats.transpose(0, 2, 1).reshape(k, -1).T


def unvec_stack(cols: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Inverse of vec_stack()."""
    k = cols.shape[1]
    n1, n2 = shape
    return cols.T.reshape(k, n2, n1).transpose(0, 2, 1)


# =============================================================================
# TYPES
# =============================================================================


@dataclass(frozen=True)
class SubspaceConstraints:
    """Constraints describing the subspace S the basis spans."""

    symmetric: bool = False
    row_sum_zero: bool = False
    psd: bool = False

    def flags(self) -> list[str]:
        return [name for name in CONSTRAINT_FLAGS if getattr(self, name)]

    @classmethod
    def from_flags(cls, flags: Iterable[str]) -> SubspaceConstraints:
        wanted = {f.strip() for f in flags if f.strip()}
        unknown = wanted - set(CONSTRAINT_FLAGS)
        if unknown:
            raise InvalidInputError(f"Unknown subspace constraint(s): {', '.join(sorted(unknown))}")
        return cls(**{name: True for name in wanted})


@dataclass(frozen=True, eq=False)
class BasisSet:
    """A family of L unit-norm matrices spanning a subspace S."""

    shape: tuple[int, int]
    family: str
    W: np.ndarray  # (n1*n2, L), column-major vectorized matrices
    constraints: SubspaceConstraints = field(default_factory=SubspaceConstraints)
    scales: np.ndarray | None = None  # weighted family: ||D^-1 w_alpha||_F
    labels: tuple[Any, ...] = ()  # entry/edg: index pairs, hankel: anti-diagonal
    weights: np.ndarray | None = None  # weighted family: diagonal of D (length n1)

    def __post_init__(self):
        shape = (int(self.shape[0]), int(self.shape[1]))
        if shape[0] < 1 or shape[1] < 1:
            raise InvalidDimensionError(f"Invalid matrix shape {shape}")
        if self.family not in FAMILIES:
            raise InvalidInputError(f"Unknown basis family: {self.family}")

        W = np.array(self.W, dtype=float)
        if W.ndim != 2 or W.shape[0] != shape[0] * shape[1]:
            raise DimensionError(
                f"W must have {shape[0] * shape[1]} rows for shape {shape}, got {W.shape}"
            )
        if W.shape[1] > W.shape[0]:
            raise InvalidDimensionError(f"L = {W.shape[1]} exceeds n1*n2 = {W.shape[0]}")
        W.setflags(write=False)

        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "W", W)
        if self.scales is not None:
            scales = np.array(self.scales, dtype=float).ravel()
            if scales.shape != (W.shape[1],):
                raise DimensionError(f"Expected {W.shape[1]} scales, got {scales.size}")
            scales.setflags(write=False)
            object.__setattr__(self, "scales", scales)
        if self.weights is not None:
            weights = weights_vector(self.weights, shape[0]).copy()
            weights.setflags(write=False)
            object.__setattr__(self, "weights", weights)

    @property
    def n1(self) -> int:
        return self.shape[0]

    @property
    def n2(self) -> int:
        return self.shape[1]

    @property
    def n(self) -> int:
        """Side length used in the recovery formulas (max(n1, n2))."""
        return max(self.shape)

    @property
    def L(self) -> int:
        return self.W.shape[1]

    @property
    def is_square(self) -> bool:
        return self.n1 == self.n2

    @property
    def is_complete(self) -> bool:
        """True if the basis spans all n1 x n2 matrices."""
        return self.L == self.W.shape[0]

    def matrix(self, alpha: int) -> np.ndarray:
        """The alpha-th basis matrix."""
        return unvec(self.W[:, alpha], self.shape)

    def matrices(self) -> np.ndarray:
        """All basis matrices as a stack (L, n1, n2)."""
        return unvec_stack(self.W, self.shape)

    def vec(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape != self.shape:
            raise DimensionError(f"Expected shape {self.shape}, got {X.shape}")
        return vec(X)

    def unvec(self, x: np.ndarray) -> np.ndarray:
        return unvec(x, self.shape)

    def coefficients(self, X: np.ndarray) -> np.ndarray:
        """Expansion coefficients <X, w_alpha> for all alpha."""
        return self.W.T @ self.vec(X)

    def __repr__(self) -> str:
        return f"<BasisSet {self.family} shape={self.shape} L={self.L}>"


# =============================================================================
# BUILT-IN FAMILIES
# =============================================================================


def make_entry_basis(n: int, n2: int | None = None) -> BasisSet:
    """
    Entry basis e_ij (standard matrix completion).

    Args:
        n: Number of rows (and columns if n2 is not given)
        n2: Number of columns for rectangular matrices

    Returns:
        Orthonormal BasisSet with L = n * n2
    """
    n2 = n if n2 is None else n2
    if n < 1 or n2 < 1:
        raise InvalidDimensionError(f"Entry basis needs n >= 1, got ({n}, {n2})")
    # column-major: column alpha = i + j*n is vec(e_ij)
    labels = tuple((i, j) for j in range(n2) for i in range(n))
    return BasisSet(shape=(n, n2), family="entry", W=np.eye(n * n2), labels=labels)


def make_edg_basis(n: int) -> BasisSet:
    """
    Euclidean distance geometry basis.

    w_(i,j) = 1/2 (e_ii + e_jj - e_ij - e_ji) for all pairs i < j in
    lexicographic order. <X, w_(i,j)> = D_ij / 2 for a Gram matrix X.
    """
    if n < 2:
        raise InvalidDimensionError(f"EDG basis needs n >= 2, got {n}")

    pairs = list(itertools.combinations(range(n), 2))
    W = np.zeros((n * n, len(pairs)))
    for alpha, (i, j) in enumerate(pairs):
        W[i + i * n, alpha] = 0.5
        W[j + j * n, alpha] = 0.5
        W[i + j * n, alpha] = -0.5
        W[j + i * n, alpha] = -0.5

    return BasisSet(
        shape=(n, n),
        family="edg",
        W=W,
        constraints=SubspaceConstraints(symmetric=True, row_sum_zero=True, psd=True),
        labels=tuple(pairs),
    )


def make_hankel_basis(n1: int, n2: int) -> BasisSet:
    """
    Orthonormal basis of real n1 x n2 Hankel matrices.

    The alpha-th element is the indicator of the anti-diagonal i + j = alpha
    (0-indexed), scaled to unit Frobenius norm.
    """
    if n1 < 1 or n2 < 1:
        raise InvalidDimensionError(f"Hankel basis needs n1, n2 >= 1, got ({n1}, {n2})")

    L = n1 + n2 - 1
    W = np.zeros((n1 * n2, L))
    for alpha in range(L):
        rows = range(max(0, alpha - n2 + 1), min(alpha, n1 - 1) + 1)
        value = 1.0 / np.sqrt(len(rows))
        for i in rows:
            j = alpha - i
            W[i + j * n1, alpha] = value

    return BasisSet(
        shape=(n1, n2),
        family="hankel",
        W=W,
        constraints=SubspaceConstraints(symmetric=n1 == n2),
        labels=tuple(range(L)),
    )


def make_rank_one_basis(
    vectors: Sequence[Sequence[float]] | np.ndarray, require_independent: bool = True
) -> BasisSet:
    """
    Rank-one basis w w^T / ||w||^2 (quadratic measurements, PhaseLift).

    Args:
        vectors: L vectors of length n (one per row)
        require_independent: Refuse linearly dependent families. Switch off
            only for frame diagnostics; dual_set() needs independence.

    Raises:
        InvalidInputError: A vector is zero
        SingularBasisError: The matrices w w^T are linearly dependent
    """
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    if V.size == 0:
        raise InvalidInputError("Rank-one basis needs at least one vector")
    L, n = V.shape
    norms = np.linalg.norm(V, axis=1)
    if np.any(norms == 0):
        raise InvalidInputError(f"Zero vector at index {int(np.flatnonzero(norms == 0)[0])}")

    U = V / norms[:, None]
    W = np.stack([vec(np.outer(u, u)) for u in U], axis=1)

    if require_independent:
        if L > n * (n + 1) // 2:
            raise SingularBasisError(
                f"{L} rank-one matrices cannot be independent in dimension {n * (n + 1) // 2}"
            )
        s = np.linalg.svd(W, compute_uv=False)
        cond = float(s[0] / s[-1]) if s[-1] > 0 else float("inf")
        if cond > RANK_ONE_CONDITION_GUARD:
            raise SingularBasisError(f"Rank-one family is dependent (condition {cond:.3e})", cond)

    return BasisSet(
        shape=(n, n),
        family="rank_one",
        W=W,
        constraints=SubspaceConstraints(symmetric=True, psd=True),
    )


def make_weighted_basis(D: Sequence[float] | np.ndarray, base: BasisSet) -> BasisSet:
    """
    Weighted family {D^-1 w_alpha} renormalized to unit Frobenius norm.

    With Y = D X the weighted program min ||D X||_* becomes a plain completion
    problem in this basis; the per-element factors ||D^-1 w_alpha||_F are kept
    in `scales` so measurements of M can be rescaled (see weighted_measurements).

    Args:
        D: Positive diagonal weights (vector of length n1 or diagonal matrix)
        base: Basis to weight
    """
    d = weights_vector(D, base.n1)

    row_factor = np.tile(1.0 / d, base.n2)  # row index of vec position k is k mod n1
    Wd = base.W * row_factor[:, None]
    scales = np.linalg.norm(Wd, axis=0)
    W = Wd / scales

    if base.scales is not None:
        scales = scales * base.scales
    weights = d if base.weights is None else d * base.weights

    # Uniform weights keep every linear constraint of the base family
    constraints = base.constraints if np.allclose(d, d[0]) else SubspaceConstraints()

    return BasisSet(
        shape=base.shape,
        family="weighted",
        W=W,
        constraints=constraints,
        scales=scales,
        labels=base.labels,
        weights=weights,
    )


def weights_vector(D: Sequence[float] | np.ndarray, n1: int) -> np.ndarray:
    d = np.asarray(D, dtype=float)
    if d.ndim == 2:
        if d.shape[0] != d.shape[1] or np.any(d - np.diag(np.diag(d))):
            raise InvalidWeightsError("Weight matrix must be diagonal")
        d = np.diag(d)
    if d.ndim != 1 or d.shape[0] != n1:
        raise DimensionError(f"Expected {n1} weights, got shape {d.shape}")
    if np.any(d <= 0):
        raise InvalidWeightsError(f"Weights must be positive, got min {d.min():g}")
    return d


def weighted_ground_matrix(D: Sequence[float] | np.ndarray, M: np.ndarray) -> np.ndarray:
    """M_bar = D M."""
    M = np.asarray(M, dtype=float)
    return weights_vector(D, M.shape[0])[:, None] * M


def unweight_matrix(D: Sequence[float] | np.ndarray, Y: np.ndarray) -> np.ndarray:
    """X = D^-1 Y (undo weighted_ground_matrix)."""
    Y = np.asarray(Y, dtype=float)
    return Y / weights_vector(D, Y.shape[0])[:, None]


def weighted_measurements(
    B: BasisSet, b: np.ndarray, indices: np.ndarray | None = None
) -> np.ndarray:
    """
    Converts raw measurements <M, w_alpha> into <D M, D^-1 w_alpha / s_alpha>.

    Args:
        B: Weighted basis (from make_weighted_basis)
        b: Raw measurements, one per entry of `indices` (or per basis element)
        indices: Basis indices of the measurements (default: all)
    """
    if B.scales is None:
        raise InvalidInputError(f"Basis family '{B.family}' carries no weight scales")
    idx = np.arange(B.L) if indices is None else np.asarray(indices)
    return np.asarray(b, dtype=float) / B.scales[idx]


def make_custom_basis(
    columns: np.ndarray | Sequence[np.ndarray],
    shape: tuple[int, int] | None = None,
    constraints: SubspaceConstraints | Iterable[str] = (),
    normalize: bool = False,
) -> BasisSet:
    """
    User-supplied basis.

    Args:
        columns: (n1*n2, L) vectorized columns, or a sequence of n1 x n2 matrices
        shape: Matrix shape (required for vectorized columns)
        constraints: Declared subspace constraints (not auto-detected)
        normalize: Scale every element to unit Frobenius norm

    Linear independence is not checked here; validate_basis() reports it and
    dual_set() refuses singular families.
    """
    if isinstance(columns, np.ndarray) and columns.ndim == 2 and shape is not None:
        W = np.array(columns, dtype=float)
    else:
        mats = np.asarray(columns, dtype=float)
        if mats.ndim != 3:
            raise InvalidInputError("Custom basis needs a (N, L) array with shape or a matrix list")
        shape = mats.shape[1:] if shape is None else shape
        W = vec_stack(mats)

    if normalize:
        norms = np.linalg.norm(W, axis=0)
        if np.any(norms == 0):
            raise InvalidInputError("Custom basis contains a zero element")
        W = W / norms

    if not isinstance(constraints, SubspaceConstraints):
        constraints = SubspaceConstraints.from_flags(constraints)

    return BasisSet(shape=tuple(shape), family="custom", W=W, constraints=constraints)


def random_unit_vectors(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """count Gaussian vectors in R^n scaled to unit length (rows)."""
    V = rng.standard_normal((count, n))
    return V / np.linalg.norm(V, axis=1)[:, None]


def make_basis(
    family: str,
    n: int,
    *,
    n2: int | None = None,
    seed: int = 0,
    count: int | None = None,
    weights: Sequence[float] | None = None,
    weight_ratio: float = 2.0,
    base_family: str = "entry",
    path: str | Path | None = None,
) -> BasisSet:
    """
    Builds a basis by family name (used by the CLI and the experiment harness).

    Args:
        family: One of FAMILIES
        n: Side length (rows for rectangular shapes)
        n2: Columns for entry/hankel rectangular shapes
        seed: Seed for the random vectors of the rank_one family
        count: Number of rank_one vectors (default n(n+1)/2)
        weights: Diagonal weights for the weighted family
        weight_ratio: Largest/smallest weight when weights are not given
        base_family: Family the weighted family is built on
        path: Basis file for the custom family
    """
    if family == "entry":
        return make_entry_basis(n, n2)
    if family == "edg":
        return make_edg_basis(n)
    if family == "hankel":
        return make_hankel_basis(n, n if n2 is None else n2)
    if family == "rank_one":
        count = n * (n + 1) // 2 if count is None else count
        return make_rank_one_basis(random_unit_vectors(n, count, make_rng(seed, n, count)))
    if family == "weighted":
        if base_family == "weighted":
            raise InvalidInputError("Weighted family cannot be its own base")
        base = make_basis(base_family, n, n2=n2, seed=seed, count=count, path=path)
        if weights is None:
            weights = np.linspace(1.0, weight_ratio, base.n1)
        return make_weighted_basis(weights, base)
    if family == "custom":
        if path is None:
            raise InvalidInputError("Custom family needs a basis file path")
        return read_basis(path)
    raise InvalidInputError(f"Unknown basis family: {family} (known: {', '.join(FAMILIES)})")


# =============================================================================
# VALIDATION
# =============================================================================


@dataclass
class BasisValidation:
    """Result of validate_basis()."""

    L: int
    rank: int
    max_norm_deviation: float
    constraint_violations: dict[str, float] = field(default_factory=dict)
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all_passed(self.checks)


def validate_basis(B: BasisSet, tol: float = NORM_TOL) -> BasisValidation:
    """
    Checks unit norms, linear independence and declared constraints.

    Never raises for a malformed basis; every problem is a failed check.
    """
    norms = np.linalg.norm(B.W, axis=0)
    max_dev = float(np.max(np.abs(norms - 1.0))) if B.L else 0.0
    rank = int(np.linalg.matrix_rank(B.W)) if B.L else 0

    checks = [
        CheckResult(
            name="Unit norm",
            passed=max_dev <= tol,
            message=f"max | ||w||_F - 1 | = {max_dev:.3e}",
            details={"max_norm_deviation": max_dev},
        ),
        CheckResult(
            name="Linear independence",
            passed=rank == B.L,
            message=f"rank {rank} of {B.L} elements",
            details={"rank": rank},
        ),
    ]

    mats = B.matrices()
    violations: dict[str, float] = {}
    ctol = max(tol, 1e-10)
    for flag in B.constraints.flags():
        if not B.is_square:
            violation = float("inf")
        elif flag == "symmetric":
            violation = float(np.max(np.linalg.norm(mats - mats.transpose(0, 2, 1), axis=(1, 2))))
        elif flag == "row_sum_zero":
            violation = float(np.max(np.abs(mats.sum(axis=2))))
        else:
            sym = 0.5 * (mats + mats.transpose(0, 2, 1))
            violation = float(max(0.0, -np.min(np.linalg.eigvalsh(sym))))
        violations[flag] = violation
        checks.append(
            CheckResult(
                name=f"Constraint {flag}",
                passed=violation <= ctol,
                message=f"max violation {violation:.3e}",
                details={"violation": violation},
            )
        )

    report = BasisValidation(
        L=B.L,
        rank=rank,
        max_norm_deviation=max_dev,
        constraint_violations=violations,
        checks=checks,
    )
    if not report.ok:
        logger.warning(f"Basis {B.family} {B.shape} failed validation")
    return report


# =============================================================================
# TEXT FORMAT
# =============================================================================


def write_basis(path: str | Path, B: BasisSet) -> Path:
    """
    Writes the textual basis format.

    Header `n L family [constraints=a,b] [weights=d1,...] [scales=s1,...]`
    (n written as n1xn2 when rectangular), then one line of n1*n2 decimals
    per basis element. Weights and scales appear for weighted bases only.
    """
    path = Path(path)
    size = str(B.n1) if B.is_square else f"{B.n1}x{B.n2}"
    header = f"{size} {B.L} {B.family}"
    if B.constraints.flags():
        header += " constraints=" + ",".join(B.constraints.flags())
    for key in ("weights", "scales"):
        values = getattr(B, key)
        if values is not None:
            header += f" {key}=" + ",".join(f"{v:.17g}" for v in values)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        f.write(header + "\n")
        np.savetxt(f, B.W.T, fmt="%.17g", delimiter=" ")
    return path


def read_basis(path: str | Path) -> BasisSet:
    """Reads a basis written by write_basis()."""
    path = Path(path)
    with path.open(encoding="utf-8") as f:
        tokens = f.readline().split()
        if len(tokens) < 3:
            raise InvalidInputError(f"{path}: header must be 'n L family'")
        size, L, family = tokens[0], int(tokens[1]), tokens[2]
        flags: list[str] = []
        arrays: dict[str, np.ndarray] = {}
        for token in tokens[3:]:
            key, _, value = token.partition("=")
            if key == "constraints":
                flags = value.split(",")
            elif key in ("weights", "scales"):
                try:
                    arrays[key] = np.array([float(v) for v in value.split(",")])
                except ValueError as e:
                    raise InvalidInputError(f"{path}: malformed {key} in header") from e
        data = np.loadtxt(f, ndmin=2)

    if "x" in size:
        n1, n2 = (int(v) for v in size.split("x"))
    else:
        n1 = n2 = int(size)

    if data.shape != (L, n1 * n2):
        raise InvalidInputError(f"{path}: expected {L} rows of {n1 * n2} values, got {data.shape}")

    return BasisSet(
        shape=(n1, n2),
        family=family,
        W=data.T,
        constraints=SubspaceConstraints.from_flags(flags),
        scales=arrays.get("scales"),
        weights=arrays.get("weights"),
    )
