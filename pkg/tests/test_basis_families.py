"""Tests for the basis families."""

import tempfile
from pathlib import Path

import numpy as np
import pytest

from core.basis_families import (
    BasisSet,
    SubspaceConstraints,
    make_basis,
    make_custom_basis,
    make_edg_basis,
    make_entry_basis,
    make_hankel_basis,
    make_rank_one_basis,
    make_weighted_basis,
    read_basis,
    unvec,
    unvec_stack,
    unweight_matrix,
    validate_basis,
    vec,
    vec_stack,
    weighted_ground_matrix,
    weighted_measurements,
    write_basis,
)
from core.errors import (
    DimensionError,
    InvalidDimensionError,
    InvalidInputError,
    InvalidWeightsError,
    SingularBasisError,
)
from core.rng import make_rng


class TestVectorization:
    """Column-major vec and its inverse."""

    def test_column_major(self):
        """vec stacks columns."""
        X = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert vec(X).tolist() == [1.0, 3.0, 2.0, 4.0]
        assert np.array_equal(unvec(vec(X), (2, 2)), X)

    def test_stack(self):
        """vec_stack puts every matrix into one column."""
        mats = np.arange(12, dtype=float).reshape(2, 2, 3)
        cols = vec_stack(mats)
        assert cols.shape == (6, 2)
        assert np.array_equal(cols[:, 1], vec(mats[1]))
        assert np.array_equal(unvec_stack(cols, (2, 3)), mats)


class TestEntryBasis:
    """Standard matrix completion basis."""

    def test_square(self):
        """n x n entry basis is the identity in vec coordinates."""
        B = make_entry_basis(3)
        assert B.L == 9
        assert B.is_complete
        assert np.array_equal(B.W, np.eye(9))

    def test_labels_follow_vec_order(self):
        """Label alpha names the entry at vec position alpha."""
        B = make_entry_basis(2, 3)
        assert B.shape == (2, 3)
        i, j = B.labels[3]
        assert B.matrix(3)[i, j] == 1.0
        assert B.matrix(3).sum() == 1.0

    def test_invalid_size(self):
        """n = 0 is refused."""
        with pytest.raises(InvalidDimensionError):
            make_entry_basis(0)

    def test_basis_is_read_only(self):
        """W cannot be modified after construction."""
        B = make_entry_basis(2)
        with pytest.raises(ValueError):
            B.W[0, 0] = 5.0


class TestEdgBasis:
    """Euclidean distance geometry basis."""

    def test_n2(self):
        """n = 2 gives the single element 1/2 [[1, -1], [-1, 1]]."""
        B = make_edg_basis(2)
        assert B.L == 1
        expected = 0.5 * np.array([[1.0, -1.0], [-1.0, 1.0]])
        assert np.allclose(B.matrix(0), expected)

    def test_size_and_norms(self):
        """L = n(n-1)/2 unit-norm elements."""
        B = make_edg_basis(6)
        assert B.L == 15
        assert np.allclose(np.linalg.norm(B.W, axis=0), 1.0, atol=1e-12)

    def test_constraints_hold(self):
        """Symmetric, zero row sums and PSD."""
        B = make_edg_basis(5)
        assert B.constraints == SubspaceConstraints(symmetric=True, row_sum_zero=True, psd=True)
        report = validate_basis(B)
        assert report.ok
        assert all(v <= 1e-12 for v in report.constraint_violations.values())

    def test_measures_half_squared_distance(self):
        """<X, w_(i,j)> = D_ij / 2 for a Gram matrix X."""
        rng = make_rng(3)
        P = rng.standard_normal((4, 2))
        X = P @ P.T
        B = make_edg_basis(4)
        coeffs = B.coefficients(X)
        for alpha, (i, j) in enumerate(B.labels):
            d2 = float(np.sum((P[i] - P[j]) ** 2))
            assert coeffs[alpha] == pytest.approx(d2 / 2, abs=1e-12)

    def test_too_small(self):
        """n = 1 has no pairs."""
        with pytest.raises(InvalidDimensionError):
            make_edg_basis(1)


class TestHankelBasis:
    """Anti-diagonal basis."""

    def test_rectangular_orthonormal(self):
        """2 x 3 Hankel basis has L = 4 orthonormal elements."""
        B = make_hankel_basis(2, 3)
        assert B.L == 4
        assert np.allclose(B.W.T @ B.W, np.eye(4), atol=1e-12)
        assert not B.constraints.symmetric

    def test_anti_diagonal_support(self):
        """Element alpha is supported on i + j = alpha."""
        B = make_hankel_basis(3, 3)
        W2 = B.matrix(2)
        support = {(int(i), int(j)) for i, j in zip(*np.nonzero(W2), strict=True)}
        assert support == {(0, 2), (1, 1), (2, 0)}
        assert W2[1, 1] == pytest.approx(1 / np.sqrt(3))

    def test_square_is_symmetric(self):
        """Square Hankel matrices are symmetric."""
        assert make_hankel_basis(4, 4).constraints.symmetric


class TestRankOneBasis:
    """Quadratic measurement basis."""

    def test_gram_off_diagonal(self):
        """e1 and (e1 + e2)/sqrt(2) have inner product 1/2."""
        B = make_rank_one_basis([[1.0, 0.0], [1.0, 1.0]])
        H = B.W.T @ B.W
        assert H[0, 1] == pytest.approx(0.5)
        assert np.allclose(np.diag(H), 1.0)

    def test_zero_vector(self):
        """A zero vector is refused."""
        with pytest.raises(InvalidInputError):
            make_rank_one_basis([[1.0, 0.0], [0.0, 0.0]])

    def test_too_many_vectors(self):
        """More than n(n+1)/2 matrices cannot be independent."""
        V = make_rng(0).standard_normal((4, 2))
        with pytest.raises(SingularBasisError):
            make_rank_one_basis(V)

    def test_dependent_family_allowed_for_diagnostics(self):
        """require_independent=False keeps a redundant frame."""
        V = make_rng(0).standard_normal((12, 4))
        B = make_rank_one_basis(V, require_independent=False)
        assert B.L == 12
        assert validate_basis(B).rank == 10

    def test_psd_constraint(self):
        """w w^T is symmetric PSD."""
        B = make_basis("rank_one", 3, seed=1)
        assert B.L == 6
        assert validate_basis(B).ok


class TestWeightedBasis:
    """Weighted family D^-1 w renormalized."""

    def test_identity_weights(self):
        """D = I reproduces the base family."""
        base = make_edg_basis(4)
        B = make_weighted_basis(np.ones(4), base)
        assert np.allclose(B.W, base.W)
        assert B.constraints == base.constraints
        assert np.allclose(B.scales, 1.0)
        assert np.array_equal(B.weights, np.ones(4))
        assert base.weights is None

    def test_entry_basis_stays_orthonormal(self):
        """D = diag(1, 2) on the 2 x 2 entry basis still has H = I."""
        B = make_weighted_basis(np.diag([1.0, 2.0]), make_entry_basis(2))
        assert np.allclose(B.W.T @ B.W, np.eye(4))
        assert np.allclose(B.scales, [1.0, 0.5, 1.0, 0.5])

    def test_measurement_rescaling(self):
        """Rescaled raw measurements equal measurements of D M."""
        d = np.array([1.0, 3.0, 2.0])
        base = make_hankel_basis(3, 3)
        B = make_weighted_basis(d, base)
        M = make_rng(5).standard_normal((3, 3))
        raw = base.coefficients(M)
        expected = B.coefficients(weighted_ground_matrix(d, M))
        assert np.allclose(weighted_measurements(B, raw), expected)

    def test_unweight(self):
        """unweight_matrix inverts weighted_ground_matrix."""
        d = np.array([2.0, 5.0])
        M = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.allclose(unweight_matrix(d, weighted_ground_matrix(d, M)), M)

    def test_nonuniform_weights_drop_constraints(self):
        """Row scaling breaks symmetry of the elements."""
        B = make_weighted_basis([1.0, 2.0, 3.0], make_edg_basis(3))
        assert B.constraints.flags() == []

    def test_invalid_weights(self):
        """Nonpositive and non-diagonal weights are refused."""
        base = make_entry_basis(2)
        with pytest.raises(InvalidWeightsError):
            make_weighted_basis([1.0, 0.0], base)
        with pytest.raises(InvalidWeightsError):
            make_weighted_basis([[1.0, 1.0], [0.0, 1.0]], base)
        with pytest.raises(DimensionError):
            make_weighted_basis([1.0, 2.0, 3.0], base)


class TestCustomBasis:
    """User-supplied bases and validation."""

    def test_duplicate_column_is_flagged(self):
        """validate_basis reports a dependent family without raising."""
        W = np.eye(4)[:, [0, 1, 1]]
        B = make_custom_basis(W, shape=(2, 2))
        report = validate_basis(B)
        assert not report.ok
        assert report.rank == 2
        failed = [c.name for c in report.checks if not c.passed]
        assert failed == ["Linear independence"]

    def test_normalize(self):
        """normalize=True scales elements to unit norm."""
        mats = [np.diag([2.0, 0.0]), np.array([[0.0, 3.0], [3.0, 0.0]])]
        B = make_custom_basis(mats, normalize=True, constraints=["symmetric"])
        assert np.allclose(np.linalg.norm(B.W, axis=0), 1.0)
        assert validate_basis(B).ok

    def test_declared_constraint_violated(self):
        """A non-symmetric element fails a declared symmetry constraint."""
        mats = [np.array([[0.0, 1.0], [0.0, 0.0]])]
        B = make_custom_basis(mats, constraints=["symmetric"])
        report = validate_basis(B)
        assert not report.ok
        assert report.constraint_violations["symmetric"] > 0

    def test_unknown_constraint(self):
        """Unknown constraint flags are refused."""
        with pytest.raises(InvalidInputError):
            make_custom_basis([np.eye(2)], constraints=["toeplitz"])

    def test_too_many_elements(self):
        """L > n1 * n2 is refused."""
        with pytest.raises(InvalidDimensionError):
            BasisSet(shape=(1, 2), family="custom", W=np.ones((2, 3)))


class TestMakeBasis:
    """Factory by family name."""

    def test_rank_one_is_reproducible(self):
        """Same seed, same vectors."""
        a = make_basis("rank_one", 3, seed=7)
        b = make_basis("rank_one", 3, seed=7)
        assert np.array_equal(a.W, b.W)

    def test_weighted_default_weights(self):
        """weight_ratio spreads the weights linearly."""
        B = make_basis("weighted", 3, weight_ratio=3.0)
        assert B.family == "weighted"
        assert np.allclose(B.scales[:3], [1.0, 0.5, 1.0 / 3.0])

    def test_unknown_family(self):
        """Unknown families are refused."""
        with pytest.raises(InvalidInputError):
            make_basis("toeplitz", 3)

    def test_custom_needs_path(self):
        """The custom family reads its basis from a file."""
        with pytest.raises(InvalidInputError):
            make_basis("custom", 3)


class TestBasisFile:
    """Textual basis format."""

    @pytest.fixture
    def tmpdir(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            yield Path(tmpdir)

    def test_write_read(self, tmpdir):
        """Written bases read back exactly, constraints included."""
        B = make_edg_basis(4)
        path = write_basis(tmpdir / "edg.txt", B)

        header = path.read_text().splitlines()[0]
        assert header == "4 6 edg constraints=symmetric,row_sum_zero,psd"

        loaded = read_basis(path)
        assert loaded.family == "edg"
        assert loaded.constraints == B.constraints
        assert np.array_equal(loaded.W, B.W)

    def test_rectangular_header(self, tmpdir):
        """Rectangular shapes are written as n1xn2."""
        path = write_basis(tmpdir / "h.txt", make_hankel_basis(2, 3))
        assert path.read_text().startswith("2x3 4 hankel\n")
        assert read_basis(path).shape == (2, 3)

    def test_truncated_file(self, tmpdir):
        """Row count must match the header."""
        path = tmpdir / "bad.txt"
        path.write_text("2 3 custom\n1 0 0 0\n0 1 0 0\n")
        with pytest.raises(InvalidInputError):
            read_basis(path)

    def test_weighted_round_trip(self, tmpdir):
        """Weights and scales of a weighted basis survive the file."""
        d = np.array([1.0, 3.0, 2.0])
        B = make_weighted_basis(d, make_hankel_basis(3, 3))
        path = write_basis(tmpdir / "w.txt", B)
        assert " weights=1,3,2 scales=" in path.read_text().splitlines()[0]

        loaded = read_basis(path)
        assert loaded.family == "weighted"
        assert np.array_equal(loaded.weights, B.weights)
        assert np.array_equal(loaded.scales, B.scales)

        M = make_rng(8).standard_normal((3, 3))
        raw = make_hankel_basis(3, 3).coefficients(M)
        Y = weighted_ground_matrix(loaded.weights, M)
        assert np.allclose(weighted_measurements(loaded, raw), loaded.coefficients(Y))
        assert np.allclose(unweight_matrix(loaded.weights, Y), M)

    def test_malformed_weights(self, tmpdir):
        """Unparseable weights in the header are refused."""
        path = tmpdir / "bad.txt"
        path.write_text("2 4 weighted weights=1,x\n" + "1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n")
        with pytest.raises(InvalidInputError):
            read_basis(path)

    def test_custom_family_from_file(self, tmpdir):
        """make_basis('custom') loads the file."""
        path = write_basis(tmpdir / "e.txt", make_entry_basis(2))
        B = make_basis("custom", 2, path=path)
        assert B.L == 4
