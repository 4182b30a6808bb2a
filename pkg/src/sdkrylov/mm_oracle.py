"""Dense majorization-minimization reference for small problems.

Works in the shifted variables ``s1 = mu1 + Q x``, ``s2 = mu2 + xi`` and
minimizes the smoothed objective

    f_eps(x, xi) = ||A Q x + A xi - c||^2_{R^{-1}} + lambda^2 ||x||_Q^2
                   + alpha^2 sum_j sqrt(xi_j^2 + eps)

by repeatedly solving the reweighted least-squares surrogate with a dense
stacked solve.  Only meant as an oracle at desk scale (n up to ~2000).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .operators import DimensionError


class MmNonConvergence(RuntimeError):
    pass


@dataclass(frozen=True)
class MmIterate:
    x: np.ndarray
    xi: np.ndarray
    objective: float


def shifted_data(problem) -> np.ndarray:
    """``c = d - A mu1 - A mu2``."""
    return problem.d - problem.A.forward(problem.mu1 + problem.mu2)


def phi_eps(t, eps):
    return np.sqrt(np.asarray(t, dtype=float) ** 2 + eps)


def psi_eps(t, tk, eps):
    """Quadratic majorizer of ``phi_eps`` touching at ``tk``."""
    ph = phi_eps(tk, eps)
    return ph + (np.asarray(t, dtype=float) ** 2 - np.asarray(tk, dtype=float) ** 2) / (2.0 * ph)


def _quadratic_part(x, xi, problem, lam):
    n = problem.A.ncols
    if x.shape != (n,) or xi.shape != (n,):
        raise DimensionError(f"x and xi must have length {n}")
    Qx = problem.Q.apply(x)
    r = problem.A.forward(Qx + xi) - shifted_data(problem)
    Rinv = problem.R.apply_inverse
    return float(r @ Rinv(r) + lam**2 * (x @ Qx))


def f_eps(x, xi, problem, lam, alpha, eps) -> float:
    if not eps > 0:
        raise ValueError("eps must be positive")
    x, xi = np.asarray(x, float), np.asarray(xi, float)
    return _quadratic_part(x, xi, problem, lam) + alpha**2 * float(np.sum(phi_eps(xi, eps)))


def surrogate(x, xi, xk, xik, problem, lam, alpha, eps) -> float:
    if not eps > 0:
        raise ValueError("eps must be positive")
    x, xi = np.asarray(x, float), np.asarray(xi, float)
    return _quadratic_part(x, xi, problem, lam) + alpha**2 * float(np.sum(psi_eps(xi, xik, eps)))


def grad_f_eps(x, xi, problem, lam, alpha, eps):
    """Gradient of :func:`f_eps` with respect to ``(x, xi)``."""
    Qx = problem.Q.apply(x)
    r = problem.A.forward(Qx + xi) - shifted_data(problem)
    g = problem.A.adjoint(problem.R.apply_inverse(r))
    gx = 2.0 * problem.Q.apply(g) + 2.0 * lam**2 * Qx
    gxi = 2.0 * g + alpha**2 * xi / phi_eps(xi, eps)
    return gx, gxi


def _sym_sqrt(M):
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


class _DenseSystem:
    """Dense blocks reused across MM steps."""

    def __init__(self, problem, lam):
        A = problem.A.todense()
        Q = problem.Q.todense()
        Rinv = problem.R.inverse().todense()
        W = _sym_sqrt(Rinv)
        self.top = np.hstack([W @ A @ Q, W @ A])
        self.rhs_top = W @ shifted_data(problem)
        self.reg = lam * _sym_sqrt(Q)
        self.n = A.shape[1]

    def solve(self, alpha, dvals):
        n = self.n
        S = np.vstack([
            self.top,
            np.hstack([self.reg, np.zeros((n, n))]),
            np.hstack([np.zeros((n, n)), np.diag(alpha * dvals)]),
        ])
        rhs = np.concatenate([self.rhs_top, np.zeros(2 * n)])
        sol, _, rank, sv = np.linalg.lstsq(S, rhs, rcond=None)
        if rank < 2 * n and sv[-1] == 0:
            raise np.linalg.LinAlgError(f"surrogate system singular (rank {rank} of {2 * n})")
        return sol[:n], sol[n:]


def mm_solve(problem, lam, alpha, eps, n_iters, x0=None, xi0=None) -> List[MmIterate]:
    """Run ``n_iters`` MM steps; element 0 of the result is the starting point.

    Each step minimizes the surrogate exactly, i.e. solves the reweighted
    problem with penalty ``alpha^2 ||D(xi_k) xi||^2`` where
    ``D(xi) = diag((2 sqrt(xi^2 + eps))^{-1/2})``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    n = problem.A.ncols
    x = np.zeros(n) if x0 is None else np.asarray(x0, float)
    xi = np.zeros(n) if xi0 is None else np.asarray(xi0, float)
    dense = _DenseSystem(problem, lam)
    out = [MmIterate(x, xi, f_eps(x, xi, problem, lam, alpha, eps))]
    for _ in range(n_iters):
        dvals = (2.0 * phi_eps(xi, eps)) ** -0.5
        x, xi = dense.solve(alpha, dvals)
        out.append(MmIterate(x, xi, f_eps(x, xi, problem, lam, alpha, eps)))
    return out


def direct_map_small(problem, lam, alpha, eps, tol=1e-10, max_steps=500):
    """MM to convergence (relative objective change below ``tol``).

    Returns ``(x, xi)``; raises :class:`MmNonConvergence` after
    ``max_steps`` steps.
    """
    n = problem.A.ncols
    if not np.any(shifted_data(problem)):
        return np.zeros(n), np.zeros(n)
    dense = _DenseSystem(problem, lam)
    x, xi = np.zeros(n), np.zeros(n)
    fold = f_eps(x, xi, problem, lam, alpha, eps)
    change = np.inf
    for _ in range(max_steps):
        dvals = (2.0 * phi_eps(xi, eps)) ** -0.5
        x, xi = dense.solve(alpha, dvals)
        fnew = f_eps(x, xi, problem, lam, alpha, eps)
        change = abs(fold - fnew) / max(abs(fnew), 1e-300)
        fold = fnew
        if change < tol:
            return x, xi
    raise MmNonConvergence(f"no convergence in {max_steps} steps (last relative change {change:.3e})")
