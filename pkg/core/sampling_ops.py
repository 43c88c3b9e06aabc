"""
Random sampling of basis indices and the sampling operators.

A sample set Omega is a multiset of m indices drawn i.i.d. uniformly from
{0, ..., L-1}. The sampling operator expands X in the dual basis using only
sampled coefficients:

    R_Omega(X) = L/m * sum_{a in Omega} <X, w_a> z_a

and the frame operator F_Omega uses w_a in place of z_a. Duplicates count
with multiplicity.

Small samples are kept as the list of drawn indices (SampleSet). Samples
too large to list are kept as per-batch multiplicities (SampleCounts); the
operators only need the multiplicities and accept either.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.linalg import eigvalsh, null_space, orth

from core.basis_families import BasisSet
from core.dual_basis import DualBasisData
from core.errors import (
    DimensionCapError,
    DimensionError,
    EmptySampleError,
    InvalidInputError,
    PartitionError,
)
from core.rng import make_rng
from core.tangent_geometry import TangentSpace, tangent_basis

logger = logging.getLogger(__name__)

# Largest tangent dimension for the dense P_T F P_T eigenproblem
DEFAULT_DIMENSION_CAP = 4000
# Largest sample count kept as an explicit index list
DEFAULT_MAX_DRAWS = 100_000_000


class _Multiset:
    """Statistics shared by both sample representations."""

    @property
    def unique_indices(self) -> np.ndarray:
        return np.flatnonzero(self.counts)

    @property
    def n_unique(self) -> int:
        return int(np.count_nonzero(self.counts))

    def duplicate_stats(self) -> dict[str, int]:
        return {
            "m": self.m,
            "unique": self.n_unique,
            "duplicates": self.m - self.n_unique,
            "max_multiplicity": int(self.counts.max()) if self.m else 0,
        }

    def batches(self) -> list:
        return [self.batch(i) for i in range(self.l)]


@dataclass(frozen=True, eq=False)
class SampleSet(_Multiset):
    """Multiset of basis indices, optionally split into consecutive batches."""

    indices: np.ndarray
    L: int
    seed: int | None = None
    batch_sizes: tuple[int, ...] = ()

    def __post_init__(self):
        idx = np.asarray(self.indices).ravel()
        if idx.size and not np.issubdtype(idx.dtype, np.integer):
            raise InvalidInputError(f"Sample indices must be integers, got {idx.dtype}")
        if self.L < 1:
            raise InvalidInputError(f"Basis size must be positive, got {self.L}")
        if idx.size and (idx.min() < 0 or idx.max() >= self.L):
            raise InvalidInputError(f"Sample indices must lie in [0, {self.L})")
        if not idx.size:
            idx = idx.astype(np.int64)
        elif idx.flags.writeable:
            idx = idx.copy()
        if self.batch_sizes and sum(self.batch_sizes) != idx.size:
            raise PartitionError(
                f"Batch sizes sum to {sum(self.batch_sizes)}, sample has {idx.size} draws"
            )
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "batch_sizes", tuple(int(s) for s in self.batch_sizes))

    @property
    def m(self) -> int:
        return int(self.indices.size)

    @cached_property
    def counts(self) -> np.ndarray:
        """Multiplicity of every basis index (length L)."""
        return np.bincount(self.indices, minlength=self.L)

    @property
    def l(self) -> int:  # noqa: E743
        return len(self.batch_sizes)

    def batch(self, i: int) -> SampleSet:
        """The i-th batch (0-based) as its own sample set."""
        if not 0 <= i < self.l:
            raise InvalidInputError(f"Batch index {i} out of range for {self.l} batches")
        start = sum(self.batch_sizes[:i])
        stop = start + self.batch_sizes[i]
        return SampleSet(self.indices[start:stop], self.L, self.seed)


@dataclass(frozen=True, eq=False)
class SampleCounts(_Multiset):
    """
    Omega as an l x L table of multiplicities, one row per batch.

    Memory is O(l L) whatever m is, so sample sizes far beyond
    DEFAULT_MAX_DRAWS stay cheap. Draw order is not kept.
    """

    batch_counts: np.ndarray
    L: int
    seed: int | None = None

    def __post_init__(self):
        table = np.asarray(self.batch_counts)
        if table.ndim == 1:
            table = table[None, :]
        if table.ndim != 2 or table.shape[0] < 1:
            raise InvalidInputError(f"Batch counts must be an l x L table, got shape {table.shape}")
        if table.size and not np.issubdtype(table.dtype, np.integer):
            raise InvalidInputError(f"Batch counts must be integers, got {table.dtype}")
        if self.L < 1 or table.shape[1] != self.L:
            raise InvalidInputError(f"Batch counts have {table.shape[1]} columns, basis size is {self.L}")
        if (table < 0).any():
            raise InvalidInputError("Batch counts must be non-negative")
        table = table.astype(np.int64)
        table.setflags(write=False)
        object.__setattr__(self, "batch_counts", table)

    @property
    def m(self) -> int:
        return int(self.batch_counts.sum())

    @cached_property
    def counts(self) -> np.ndarray:
        return self.batch_counts.sum(axis=0)

    @property
    def l(self) -> int:  # noqa: E743
        return self.batch_counts.shape[0]

    @property
    def batch_sizes(self) -> tuple[int, ...]:
        return tuple(int(size) for size in self.batch_counts.sum(axis=1))

    def batch(self, i: int) -> SampleCounts:
        if not 0 <= i < self.l:
            raise InvalidInputError(f"Batch index {i} out of range for {self.l} batches")
        return SampleCounts(self.batch_counts[i : i + 1], self.L, self.seed)

    @cached_property
    def indices(self) -> np.ndarray:
        """
        Index list, sorted within each batch.

        Raises:
            InvalidInputError: m exceeds DEFAULT_MAX_DRAWS
        """
        if self.m > DEFAULT_MAX_DRAWS:
            raise InvalidInputError(f"m = {self.m} is too large to list (limit {DEFAULT_MAX_DRAWS})")
        labels = np.arange(self.L)
        idx = np.concatenate([np.repeat(labels, row) for row in self.batch_counts])
        idx.setflags(write=False)
        return idx

    def to_sample_set(self) -> SampleSet:
        return SampleSet(self.indices, self.L, self.seed, self.batch_sizes)


Sample = SampleSet | SampleCounts


def draw_omega(
    L: int, m: int, seed: int, max_draws: int = DEFAULT_MAX_DRAWS
) -> SampleSet:
    """
    Draws m indices i.i.d. uniform from {0, ..., L-1}.

    Args:
        L: Basis size
        m: Number of draws
        seed: Seed of the Philox stream
        max_draws: Refuse larger m (index storage grows linearly; see
            draw_batch_counts for larger samples)

    Raises:
        InvalidInputError: L < 1, m < 1 or m > max_draws
    """
    if L < 1:
        raise InvalidInputError(f"Basis size must be positive, got {L}")
    if m < 1:
        raise InvalidInputError(f"Sample size must be positive, got {m}")
    if m > max_draws:
        raise InvalidInputError(f"Sample size {m} exceeds max_draws = {max_draws}")

    dtype = np.int32 if L < 2**31 else np.int64
    indices = make_rng(seed).integers(0, L, size=m, dtype=dtype)
    indices.setflags(write=False)
    sample = SampleSet(indices, L, seed)
    logger.debug(f"Drew Omega: {sample.duplicate_stats()}")
    return sample


def draw_batch_counts(L: int, sizes: list[int], seed: int) -> SampleCounts:
    """
    Draws l batches of i.i.d. uniform indices as multiplicities.

    The counts of batch i follow Multinomial(sizes[i], 1/L), the law of
    sizes[i] uniform draws, without listing the draws.

    Raises:
        InvalidInputError: L < 1 or a negative batch size
        PartitionError: No batches
    """
    if L < 1:
        raise InvalidInputError(f"Basis size must be positive, got {L}")
    if not sizes:
        raise PartitionError("At least one batch is needed")
    if any(size < 0 for size in sizes):
        raise InvalidInputError(f"Batch sizes must be non-negative, got {sizes}")

    rng = make_rng(seed)
    uniform = np.full(L, 1.0 / L)
    table = np.stack([rng.multinomial(int(size), uniform) for size in sizes])
    sample = SampleCounts(table, L, seed)
    logger.debug(f"Drew Omega as counts: {sample.duplicate_stats()}")
    return sample


def full_omega(L: int) -> SampleSet:
    """Every basis index exactly once (m = L)."""
    return SampleSet(np.arange(L), L)


def partition_omega(s: SampleSet, l: int, sizes: list[int] | None = None) -> SampleSet:
    """
    Splits Omega into l consecutive batches.

    Args:
        s: Sample set
        l: Number of batches
        sizes: Explicit batch sizes; default is a near-equal split

    Raises:
        PartitionError: Sizes do not sum to m or l < 1
    """
    if l < 1:
        raise PartitionError(f"Number of batches must be positive, got {l}")
    if sizes is None:
        # remainder goes to the leading batches: m=10, l=3 -> 4, 3, 3
        base, extra = divmod(s.m, l)
        sizes = [base + 1] * extra + [base] * (l - extra)
    if len(sizes) != l:
        raise PartitionError(f"Expected {l} batch sizes, got {len(sizes)}")
    if any(size < 0 for size in sizes) or sum(sizes) != s.m:
        raise PartitionError(f"Batch sizes {sizes} do not partition m = {s.m}")
    return SampleSet(s.indices, s.L, s.seed, tuple(sizes))


def _sampling_weights(B: BasisSet, s: Sample) -> np.ndarray:
    if s.m == 0:
        raise EmptySampleError("Sampling operator applied with an empty sample")
    if s.L != B.L:
        raise DimensionError(f"Sample drawn for L = {s.L}, basis has L = {B.L}")
    return (s.L / s.m) * s.counts


def sampling_apply(B: BasisSet, D: DualBasisData, s: Sample, X: np.ndarray) -> np.ndarray:
    """R_Omega(X) = L/m sum <X, w_a> z_a."""
    coeffs = _sampling_weights(B, s) * (B.W.T @ B.vec(X))
    return B.unvec(D.Z @ coeffs)


def sampling_adjoint_apply(
    B: BasisSet, D: DualBasisData, s: Sample, X: np.ndarray
) -> np.ndarray:
    """R*_Omega(X) = L/m sum <X, z_a> w_a."""
    coeffs = _sampling_weights(B, s) * (D.Z.T @ B.vec(X))
    return B.unvec(B.W @ coeffs)


def frame_apply(B: BasisSet, s: Sample, X: np.ndarray) -> np.ndarray:
    """F_Omega(X) = L/m sum <X, w_a> w_a."""
    coeffs = _sampling_weights(B, s) * (B.W.T @ B.vec(X))
    return B.unvec(B.W @ coeffs)


def sampling_expand(B: BasisSet, D: DualBasisData, s: Sample, values: np.ndarray) -> np.ndarray:
    """
    L/m sum_k values_k z_{a_k} for per-draw values (e.g. measurement noise).

    Equals R_Omega(X) when values_k = <X, w_{a_k}>.
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size != s.m:
        raise InvalidInputError(f"Expected {s.m} values, got {values.size}")
    _sampling_weights(B, s)
    sums = np.bincount(s.indices, weights=values, minlength=s.L)
    return B.unvec(D.Z @ ((s.L / s.m) * sums))


def _restricted_tangent_basis(Ts: TangentSpace, B: BasisSet) -> np.ndarray:
    """Orthonormal basis of T intersected with span(W)."""
    basis = tangent_basis(Ts)
    if B.is_complete:
        return basis
    Q = orth(B.W)
    outside = basis - Q @ (Q.T @ basis)
    coeffs = null_space(outside, rcond=1e-9)
    if coeffs.shape[1] == 0:
        return coeffs
    return orth(basis @ coeffs)


def ptfpt_min_eig(
    Ts: TangentSpace,
    B: BasisSet,
    s: Sample,
    cap: int = DEFAULT_DIMENSION_CAP,
) -> float:
    """
    Smallest eigenvalue of P_T F_Omega P_T on T intersected with span(W).

    On the orthogonal complement of span(W) inside T the operator vanishes
    identically, so it is left out. Returns 0.0 if the intersection is {0}.

    Raises:
        DimensionCapError: dim T exceeds cap
    """
    if Ts.shape != B.shape:
        raise DimensionError(f"Tangent space shape {Ts.shape} != basis shape {B.shape}")
    if Ts.dimension > cap:
        raise DimensionCapError(f"dim T = {Ts.dimension} exceeds cap {cap}")
    if s.m == 0:
        return 0.0

    basis = _restricted_tangent_basis(Ts, B)
    if basis.shape[1] == 0:
        logger.warning("T and span(W) intersect trivially")
        return 0.0

    A = B.W.T @ basis  # L x d
    weights = _sampling_weights(B, s)
    G = (A.T * weights) @ A
    return float(eigvalsh(0.5 * (G + G.T))[0])


# =============================================================================
# TEXT FORMAT
# =============================================================================


def write_sample_set(path: str | Path, s: SampleSet) -> Path:
    """
    Writes the header `seed m l L`, a line of batch sizes, then one index per line.

    A missing seed is written as `-`.
    """
    path = Path(path)
    seed = "-" if s.seed is None else str(s.seed)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        f.write(f"{seed} {s.m} {s.l} {s.L}\n")
        f.write(" ".join(str(size) for size in s.batch_sizes) + "\n")
        np.savetxt(f, s.indices, fmt="%d")
    return path


def read_sample_set(path: str | Path) -> SampleSet:
    """Reads a sample set written by write_sample_set()."""
    path = Path(path)
    with path.open(encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 4:
            raise InvalidInputError(f"{path}: header must be 'seed m l L'")
        seed = None if header[0] == "-" else int(header[0])
        m, l, L = (int(v) for v in header[1:])
        sizes = tuple(int(v) for v in f.readline().split())
        indices = np.loadtxt(f, dtype=np.int64, ndmin=1)
    if indices.size != m:
        raise InvalidInputError(f"{path}: header says m = {m}, found {indices.size} indices")
    if len(sizes) != l:
        raise InvalidInputError(f"{path}: header says l = {l}, found {len(sizes)} batch sizes")
    return SampleSet(indices, L, seed, sizes)
