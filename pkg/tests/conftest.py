import numpy as np
import pytest

from koopcast import kernels


@pytest.fixture(params=sorted(kernels.available_backends()))
def backend(request):
    """Each available kernel implementation (compiled and numpy)."""
    return kernels.available_backends()[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_stable(p, rho, rng):
    """Random real matrix with spectral radius exactly ``rho``."""
    A = rng.standard_normal((p, p))
    return A * (rho / np.max(np.abs(np.linalg.eigvals(A))))


def generic_spec(p):
    """A dictionary layout whose lifted width is ``p`` (one 2-D sample plus ``p - 2`` goal slots)."""
    from koopcast.observables import DictionarySpec

    return DictionarySpec(1, goal_dim=p - 2, include_quadratic=False)


def snapshot_set(Psi, PsiNext):
    from koopcast.edmd import SnapshotSet

    return SnapshotSet(Psi, PsiNext, generic_spec(np.shape(Psi)[1]))


def fraction_solve(A, B):
    """Exact Gauss-Jordan solve of ``A X = B`` over the rationals."""
    from fractions import Fraction

    n = len(A)
    M = [[Fraction(float(v)) for v in list(A[i]) + list(B[i])] for i in range(n)]
    for c in range(n):
        piv = next(r for r in range(c, n) if M[r][c] != 0)
        M[c], M[piv] = M[piv], M[c]
        inv = 1 / M[c][c]
        M[c] = [v * inv for v in M[c]]
        for r in range(n):
            if r != c and M[r][c] != 0:
                f = M[r][c]
                M[r] = [a - f * b for a, b in zip(M[r], M[c])]
    return np.array([[float(v) for v in row[n:]] for row in M])


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
