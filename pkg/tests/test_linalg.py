import numpy as np
import pytest

from dhdist.errors import EvenDimension, OddDimension
from dhdist.linalg import (
    complex_pseudoinverse_shifted,
    fix_sign,
    frobenius_inner,
    pinv_apply,
    pseudoinverse_shifted,
    qr_thin,
    skew_null_vector,
    skew_part,
    skew_smallest_imag_pair,
    sym_eig_smallest,
    sym_part,
)

from .conftest import random_skew, random_sym


class TestParts:
    def test_split_is_exact(self, rng):
        X = rng.standard_normal((6, 6))
        np.testing.assert_allclose(sym_part(X) + skew_part(X), X, atol=1e-15)
        np.testing.assert_array_equal(sym_part(X), sym_part(X).T)
        np.testing.assert_array_equal(skew_part(X), -skew_part(X).T)

    def test_parts_are_orthogonal(self, rng):
        X = rng.standard_normal((5, 5))
        assert abs(frobenius_inner(sym_part(X), skew_part(X))) < 1e-13

    def test_inner_skips_frozen_blocks(self, rng):
        A, B = rng.standard_normal((2, 3, 3))
        assert frobenius_inner((A, None), (B, A)) == pytest.approx(np.sum(A * B))


class TestEigen:
    def test_smallest_pair_and_gap(self):
        A = np.diag([3.0, -1.0, 2.0])
        val, vec, gap = sym_eig_smallest(A)
        assert val == -1.0
        np.testing.assert_allclose(vec, [0, 1, 0])
        assert gap == pytest.approx(3.0)

    def test_sign_convention(self):
        np.testing.assert_array_equal(fix_sign(np.array([0.0, -2.0, 1.0])), [0.0, 2.0, -1.0])
        np.testing.assert_array_equal(fix_sign(np.array([1e-14, -2.0])), [-1e-14, 2.0])

    def test_skew_null_vector(self, rng):
        B = random_skew(rng, 5)
        w = skew_null_vector(B)
        assert np.linalg.norm(B @ w) < 1e-12
        assert np.linalg.norm(w) == pytest.approx(1.0)

    def test_skew_null_vector_of_zero_matrix(self):
        np.testing.assert_array_equal(skew_null_vector(np.zeros((3, 3))), [1.0, 0.0, 0.0])

    def test_skew_null_vector_needs_odd_n(self):
        with pytest.raises(EvenDimension):
            skew_null_vector(np.zeros((4, 4)))

    def test_imag_pair(self, rng):
        B = random_skew(rng, 6)
        mu, w = skew_smallest_imag_pair(B)
        np.testing.assert_allclose(B @ w, 1j * mu * w, atol=1e-12)
        sig = np.abs(np.linalg.eigvals(B).imag)
        assert mu == pytest.approx(sig.min(), abs=1e-12)
        np.testing.assert_allclose(np.linalg.norm(w.real), np.sqrt(0.5), atol=1e-12)
        assert abs(w.real @ w.imag) < 1e-12

    def test_imag_pair_needs_even_n(self):
        with pytest.raises(OddDimension):
            skew_smallest_imag_pair(np.zeros((3, 3)))


class TestPseudoinverses:
    def test_shifted_group_inverse(self, rng):
        A = random_sym(rng, 5)
        lam = np.linalg.eigvalsh(A)[0]
        P = pseudoinverse_shifted(A, lam)
        np.testing.assert_allclose(P, np.linalg.pinv(A - lam * np.eye(5), rcond=1e-10), atol=1e-8)

    def test_complex_shift(self, rng):
        B = random_skew(rng, 4)
        mu, _ = skew_smallest_imag_pair(B)
        P = complex_pseudoinverse_shifted(B, mu)
        M = B - 1j * mu * np.eye(4)
        np.testing.assert_allclose(M @ P @ M, M, atol=1e-10)

    def test_apply_matches_matrix(self, rng):
        A = random_sym(rng, 6)
        vals, vecs = np.linalg.eigh(A)
        v = rng.standard_normal(6)
        P = pseudoinverse_shifted(A, vals[0])
        np.testing.assert_allclose(pinv_apply(vals, vecs, vals[0], v), P @ v, atol=1e-10)
        np.testing.assert_allclose(pinv_apply(vals, vecs, vals[0], v, transpose=True), P.T @ v, atol=1e-10)


class TestQR:
    def test_orthonormal_with_positive_diagonal(self, rng):
        K = rng.standard_normal((7, 2))
        U, Rf, deficient = qr_thin(K)
        np.testing.assert_allclose(U.T @ U, np.eye(2), atol=1e-14)
        np.testing.assert_allclose(U @ Rf, K, atol=1e-14)
        assert np.all(np.diag(Rf) >= 0) and not deficient

    def test_rank_one_flagged(self, rng):
        a = rng.standard_normal(5)
        assert qr_thin(np.column_stack([a, 2 * a]))[2]
