import sys

import numpy as np
import pytest

from regenpoisson.chain import build_truncation


def dense_stationary(P):
    """Least-squares solution of ``pi (P - I) = 0``, ``sum(pi) = 1`` with dense numpy."""
    n = P.shape[0]
    A = np.vstack([(P - np.eye(n)).T, np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    return np.linalg.lstsq(A, b, rcond=None)[0]


def dense_poisson(P, f, z):
    """``g`` with ``(P - I) g = -(f - pi f)`` and ``g(z) = 0`` via the fundamental matrix."""
    n = P.shape[0]
    pi = dense_stationary(P)
    fc = f - pi @ f
    Z = np.linalg.inv(np.eye(n) - P + np.outer(np.ones(n), pi))
    g = Z @ fc
    return g - g[z], pi, fc


def random_stochastic(rng, n, density=0.6):
    """Irreducible aperiodic stochastic matrix: random sparse rows plus a ring."""
    M = rng.random((n, n)) * (rng.random((n, n)) < density)
    M[np.arange(n), (np.arange(n) + 1) % n] += 0.5
    M[0, 0] += 0.1
    return M / M.sum(axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def window():
    """Truncation of a gallery kernel at a given size."""

    def make(gallery, size=None):
        return build_truncation(gallery.kernel, size)

    return make


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance.report_lines():
        terminalreporter.write_line(line)
