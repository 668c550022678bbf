import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from neckcalib.errors import InvalidArgumentError
from neckcalib.linalg import (IndexSubset, cauchy_binet_check, det, enumerate_subsets,
                              full_product_expansion, gram_det, minor,
                              weighted_minor_expansion)

from conftest import brute_force_subsets, cofactor_det


def test_enumerate_small():
    assert [s.indices for s in enumerate_subsets(3, 2)] == [(1, 2), (1, 3), (2, 3)]
    assert [s.indices for s in enumerate_subsets(4, 0)] == [()]


def test_enumerate_matches_bitmask_oracle():
    subs = [s.indices for s in enumerate_subsets(6, 3)]
    assert subs == brute_force_subsets(6, 3)
    assert len(subs) == 20 and subs[0] == (1, 2, 3) and subs[-1] == (4, 5, 6)


@pytest.mark.parametrize("n,k", [(2, 3), (21, 2), (-1, 0)])
def test_enumerate_rejects(n, k):
    with pytest.raises(InvalidArgumentError):
        list(enumerate_subsets(n, k))


def test_enumerate_is_lazy():
    it = enumerate_subsets(20, 10)
    assert not isinstance(it, list)
    assert next(it).indices == tuple(range(1, 11))


def test_index_subset_invariants():
    with pytest.raises(InvalidArgumentError):
        IndexSubset((2, 1), 3)
    with pytest.raises(InvalidArgumentError):
        IndexSubset((0, 1), 3)
    with pytest.raises(InvalidArgumentError):
        IndexSubset((1, 4), 3)
    assert IndexSubset((1, 3), 3).columns == [0, 2]


def test_det_examples(rng):
    assert det(np.eye(3)) == 1.0
    assert det([[1, 1], [0, 1]]) == 1.0
    for _ in range(20):
        A = rng.standard_normal((5, 5))
        ref = cofactor_det(A)
        assert abs(det(A) - ref) <= 1e-12 * max(1.0, abs(ref))


def test_det_rejects_non_square():
    with pytest.raises(InvalidArgumentError):
        det(np.ones((2, 3)))


@pytest.mark.parametrize("n", [1, 2, 3, 5, 8])
def test_det_permutation_exact(n):
    for perm in itertools.islice(itertools.permutations(range(n)), 50):
        P = np.eye(n)[list(perm)]
        inversions = sum(perm[i] > perm[j] for i in range(n) for j in range(i + 1, n))
        assert det(P) == (-1.0) ** inversions


def test_minor_examples():
    A = [[1, 0, 0], [0, 1, 0]]
    assert minor(A, IndexSubset((1, 2), 3)) == 1.0
    assert minor(A, (2, 3)) == 0.0
    # det [[1, 0], [0, 1]] from columns 1 and 3 of [[1,1,0],[0,1,1]]
    assert minor([[1, 1, 0], [0, 1, 1]], (1, 3)) == 1.0


def test_minor_size_mismatch():
    with pytest.raises(InvalidArgumentError):
        minor(np.eye(2, 3), (1, 2, 3))
    with pytest.raises(InvalidArgumentError):
        minor(np.eye(2, 3), IndexSubset((1, 2), 4))


def test_cauchy_binet_examples(rng):
    assert cauchy_binet_check([[1, 0, 0], [0, 1, 0]]) == (1.0, 1.0)
    lhs, rhs = cauchy_binet_check([[1, 1, 0], [0, 1, 1]])
    assert lhs == pytest.approx(3.0, abs=1e-14) and rhs == pytest.approx(3.0, abs=1e-14)
    A = rng.standard_normal((3, 6))
    lhs, rhs = cauchy_binet_check(A)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))
    with pytest.raises(InvalidArgumentError):
        cauchy_binet_check(np.ones((3, 2)))


def test_weighted_examples(rng):
    assert weighted_minor_expansion(np.eye(2), [4, 9]) == pytest.approx(36.0, rel=1e-15)
    w = (2.0, 3.0, 5.0)
    B = [[1, 1, 0]]
    assert weighted_minor_expansion(B, w) == pytest.approx(w[0] + w[1], rel=1e-15)
    # the full-product reading gives (w1 w2 w3) * (1 + 1 + 0)
    assert full_product_expansion(B, w) == pytest.approx(2 * w[0] * w[1] * w[2])
    assert full_product_expansion(B, w) != pytest.approx(weighted_minor_expansion(B, w))
    B = rng.standard_normal((2, 4))
    w = rng.uniform(0.2, 3.0, 4)
    ref = cofactor_det((B * w) @ B.T)
    assert abs(weighted_minor_expansion(B, w) - ref) <= 1e-10 * max(1.0, abs(ref))


@pytest.mark.parametrize("w", [[1, 0, 1], [1, -2, 1], [1, float("nan"), 1]])
def test_weighted_rejects_bad_weights(w):
    with pytest.raises(InvalidArgumentError):
        weighted_minor_expansion(np.ones((1, 3)), w)


def test_weighted_unit_weights_is_cauchy_binet_sum(rng):
    for _ in range(50):
        n = int(rng.integers(1, 9))
        k = int(rng.integers(1, n + 1))
        B = rng.standard_normal((k, n))
        assert weighted_minor_expansion(B, np.ones(n)) == cauchy_binet_check(B)[1]


def qr_gram_det(A, w):
    R = np.linalg.qr((A * np.sqrt(w)).T, mode="r")
    return float(np.prod(np.diag(R)) ** 2)


def test_gram_det_matches_formed_product(rng):
    for _ in range(50):
        A = rng.standard_normal((3, 5))
        w = rng.uniform(0.5, 2.0, 5)
        ref = cofactor_det((A * w) @ A.T)
        assert gram_det(A, w) == pytest.approx(ref, rel=1e-11)
    assert gram_det(np.ones((3, 2))) == 0.0


def test_random_identity_suite(rng):
    """1000 random shapes with k <= n <= 10, both identities at 1e-9 relative."""
    for _ in range(1000):
        n = int(rng.integers(1, 11))
        k = int(rng.integers(1, n + 1))
        A = rng.standard_normal((k, n))
        lhs, rhs = cauchy_binet_check(A)
        assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))
        w = rng.uniform(0.05, 4.0, n)
        direct = qr_gram_det(A, w)
        assert abs(weighted_minor_expansion(A, w) - direct) <= 1e-9 * max(1.0, abs(direct))


shapes = st.integers(1, 7).flatmap(lambda n: st.tuples(st.integers(1, n), st.just(n)))
entries = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(shapes.flatmap(lambda s: hnp.arrays(float, s, elements=entries)),
       st.integers(0, 6), st.floats(-5, 5))
def test_minor_multilinear_in_rows(A, row, c):
    k, n = A.shape
    row = row % k
    S = IndexSubset(tuple(range(1, k + 1)), n)
    scaled = A.copy()
    scaled[row] *= c
    base = minor(A, S)
    assert minor(scaled, S) == pytest.approx(c * base, rel=1e-9, abs=1e-9 * max(1.0, abs(base)))


@settings(max_examples=200, deadline=None)
@given(shapes.flatmap(lambda s: hnp.arrays(float, s, elements=entries)))
def test_cauchy_binet_property(A):
    lhs, rhs = cauchy_binet_check(A)
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs), abs(rhs))
