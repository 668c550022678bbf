"""Small dense determinant machinery: subsets, minors, Cauchy-Binet sums.

All matrices are plain ``numpy`` float64 arrays.  Column subsets are
1-based, matching the usual ``S ⊂ [n]`` notation; the ``columns``
property gives the 0-based view for indexing.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import InvalidArgumentError

MAX_N = 20
# Minors are evaluated in stacked batches of this many subsets, so memory
# stays bounded even at C(20, 10) subsets.
_CHUNK = 4096


@dataclass(frozen=True)
class IndexSubset:
    """Strictly increasing k-subset of ``{1, ..., n}``."""

    indices: tuple[int, ...]
    n: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        if len(idx) > self.n:
            raise InvalidArgumentError(f"subset of size {len(idx)} exceeds n={self.n}")
        if any(i < 1 or i > self.n for i in idx):
            raise InvalidArgumentError(f"indices {idx} not within [1, {self.n}]")
        if any(a >= b for a, b in zip(idx, idx[1:])):
            raise InvalidArgumentError(f"indices {idx} not strictly increasing")

    @property
    def k(self) -> int:
        return len(self.indices)

    @property
    def columns(self) -> list[int]:
        return [i - 1 for i in self.indices]

    def __iter__(self):
        return iter(self.indices)

    def __len__(self):
        return len(self.indices)


def as_matrix(A, name: str = "matrix") -> np.ndarray:
    M = np.asarray(A, dtype=float)
    if M.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-D, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidArgumentError(f"{name} has non-finite entries")
    return M


def _check_nk(n: int, k: int) -> None:
    if k < 0 or n < 0:
        raise InvalidArgumentError("n and k must be non-negative")
    if k > n:
        raise InvalidArgumentError(f"k={k} exceeds n={n}")
    if n > MAX_N:
        raise InvalidArgumentError(f"n={n} exceeds the cap of {MAX_N}")


def enumerate_subsets(n: int, k: int) -> Iterator[IndexSubset]:
    """Yield all k-subsets of [n] in lexicographic order.

    The subsets are generated lazily; wrap in ``list`` for small n.
    """
    _check_nk(n, k)
    return (IndexSubset(c, n) for c in itertools.combinations(range(1, n + 1), k))


def det(A) -> float:
    """Determinant by LU factorisation with partial pivoting."""
    M = as_matrix(A)
    if M.shape[0] != M.shape[1]:
        raise InvalidArgumentError(f"det needs a square matrix, got {M.shape}")
    if M.shape[0] > MAX_N:
        raise InvalidArgumentError(f"dimension {M.shape[0]} exceeds the cap of {MAX_N}")
    if M.shape[0] == 0:
        return 1.0
    return float(np.linalg.det(M))


def minor(A, S: IndexSubset | Sequence[int]) -> float:
    """Determinant of the square matrix formed by the columns of ``A`` in ``S``."""
    M = as_matrix(A)
    if not isinstance(S, IndexSubset):
        S = IndexSubset(tuple(S), M.shape[1])
    if S.n != M.shape[1]:
        raise InvalidArgumentError(f"subset is over [{S.n}] but matrix has {M.shape[1]} columns")
    if S.k != M.shape[0]:
        raise InvalidArgumentError(f"subset size {S.k} does not match {M.shape[0]} rows")
    return det(M[:, S.columns])


def _squared_minor_sum(B: np.ndarray, w: np.ndarray | None) -> float:
    """Sum over k-subsets S of (prod_{l in S} w_l) * det(B_S)^2.

    With ``w=None`` every weight is 1 (the plain Cauchy-Binet sum).
    Terms are accumulated with ``math.fsum`` so the result does not depend
    on chunking.
    """
    k, n = B.shape
    _check_nk(n, k)
    if k == 0:
        return 1.0
    combos = itertools.combinations(range(n), k)
    terms: list[float] = []
    while True:
        chunk = list(itertools.islice(combos, _CHUNK))
        if not chunk:
            break
        idx = np.array(chunk)
        # (m, k, k) stack of column-selected blocks
        blocks = np.moveaxis(B[:, idx], 1, 0)
        d = np.linalg.det(blocks)
        t = d * d
        if w is not None:
            t = t * np.prod(w[idx], axis=1)
        terms.extend(t.tolist())
    return math.fsum(terms)


def gram_det(A, w=None) -> float:
    """det(A diag(w) A^T) without forming the product.

    With ``A diag(sqrt(w)) = (Q R)^T`` the determinant is ``prod(diag(R))^2``;
    forming the Gram matrix first would square the condition number.
    """
    M = as_matrix(A)
    if w is not None:
        M = M * np.sqrt(np.asarray(w, dtype=float))
    if M.shape[0] == 0:
        return 1.0
    if M.shape[0] > M.shape[1]:
        return 0.0
    R = np.linalg.qr(M.T, mode="r")
    return float(np.prod(np.diag(R)) ** 2)


def cauchy_binet_check(A) -> tuple[float, float]:
    """Return ``(det(A A^T), sum_S minor(A, S)^2)`` computed independently.

    The left side comes from a QR factorisation, the right side from
    enumerating k×k minors.
    """
    M = as_matrix(A)
    k, n = M.shape
    _check_nk(n, k)
    lhs = gram_det(M)
    rhs = _squared_minor_sum(M, None)
    return lhs, rhs


def weighted_minor_expansion(B, w) -> float:
    """Sum over k-subsets S of ``prod_{l in S} w_l * det(B_S)^2``.

    This equals ``det(B diag(w) B^T)``: writing ``A = B diag(sqrt(w))``,
    each minor of ``A`` picks up only the weights of its own columns.
    """
    M = as_matrix(B, "B")
    wv = np.asarray(w, dtype=float).ravel()
    if wv.shape[0] != M.shape[1]:
        raise InvalidArgumentError(f"need {M.shape[1]} weights, got {wv.shape[0]}")
    if not np.all(np.isfinite(wv)) or np.any(wv <= 0):
        raise InvalidArgumentError("weights must be finite and strictly positive")
    return _squared_minor_sum(M, wv)


def full_product_expansion(B, w) -> float:
    """The uncorrected reading ``(prod_l w_l) * sum_S det(B_S)^2``.

    Kept only so the discrepancy with :func:`weighted_minor_expansion`
    can be reported; it is not a valid identity when k < n.
    """
    M = as_matrix(B, "B")
    wv = np.asarray(w, dtype=float).ravel()
    return float(np.prod(wv)) * _squared_minor_sum(M, None)


def gram(vectors, weights=None) -> np.ndarray:
    """Gram matrix of the rows of ``vectors`` under ``diag(weights)``."""
    V = as_matrix(vectors, "vectors")
    if weights is None:
        return V @ V.T
    return (V * np.asarray(weights, dtype=float)) @ V.T
