
import numpy as np
import pytest

from neckcalib import jlt_neck, probe_neck, constant_neck, resolve_q0

# Filled by test_acceptance; printed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


# -- independent oracles ---------------------------------------------------

def cofactor_det(M):
    """Laplace expansion along the first row; only for tiny matrices."""
    M = [list(map(float, row)) for row in M]
    n = len(M)
    if n == 0:
        return 1.0
    if n == 1:
        return M[0][0]
    total = 0.0
    for j in range(n):
        sub = [row[:j] + row[j + 1:] for row in M[1:]]
        total += (-1) ** j * M[0][j] * cofactor_det(sub)
    return total


def brute_force_subsets(n, k):
    """All k-subsets of {1..n} via bitmasks, sorted lexicographically."""
    out = []
    for mask in range(1 << n):
        if bin(mask).count("1") == k:
            out.append(tuple(i + 1 for i in range(n) if mask >> i & 1))
    return sorted(out)


def gram_loop(vectors, weights):
    """Weighted Gram matrix by explicit loops."""
    k = len(vectors)
    return [[sum(w * a * b for w, a, b in zip(weights, vectors[i], vectors[j]))
             for j in range(k)] for i in range(k)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def jlt11():
    return resolve_q0(jlt_neck((1.0, 1.0)))


@pytest.fixture(scope="session")
def jlt123():
    return resolve_q0(jlt_neck((1.0, 2.0, 3.0)))


@pytest.fixture(scope="session")
def probe():
    return resolve_q0(probe_neck())


@pytest.fixture(scope="session")
def const23():
    return resolve_q0(constant_neck((2.0, 3.0)))
