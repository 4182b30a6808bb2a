import numpy as np
import pytest

from sdkrylov.covariance import GridGeometry, KernelSpec, build_covariance
from sdkrylov.operators import dense_spd, diag_map, matrix_map
from sdkrylov.solvers import InverseProblem


def random_spd(n, rng, cond=1e3):
    X, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = np.logspace(0, -np.log10(cond), n)
    M = (X * w) @ X.T
    return 0.5 * (M + M.T)


def random_instance(m=40, n=30, seed=0, mu=False):
    """Dense A, SPD Q, diagonal R and data ``d`` for small algebraic checks."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n))
    Q = random_spd(n, rng)
    r = rng.uniform(0.5, 2.0, m)
    d = rng.standard_normal(m)
    mu1 = rng.standard_normal(n) if mu else None
    mu2 = rng.standard_normal(n) if mu else None
    return InverseProblem(matrix_map(A), diag_map(r), dense_spd(Q), d, mu1, mu2)


def line_instance(m=20, n=24, seed=0, nlevel=0.02):
    """Smooth-plus-spike truth on a line with a Matern prior."""
    rng = np.random.default_rng(seed)
    grid = GridGeometry.line(n)
    Q = build_covariance(grid, KernelSpec("matern", 1.5, 0.2))
    s1 = Q.apply_sqrt(rng.standard_normal(n))
    s2 = np.zeros(n)
    s2[rng.choice(n, 2, replace=False)] = [3.0, -2.0]
    A = rng.standard_normal((m, n)) / np.sqrt(m)
    b = A @ (s1 + s2)
    noise = rng.standard_normal(m)
    sigma = nlevel * np.linalg.norm(b) / np.linalg.norm(noise)
    return InverseProblem(matrix_map(A), diag_map(np.full(m, sigma**2)), Q, b + sigma * noise), s1, s2


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """``report(number, ok, detail)`` records one acceptance line, then asserts ``ok``."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def _report(number, ok, detail):
        line = f"criterion {number:2d}  {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        assert ok, line

    return _report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
