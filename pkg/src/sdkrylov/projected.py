"""The small projected least-squares problem in FGGK coordinates.

For fixed ``(lambda, alpha)`` the coefficients solve

    min_f ||M f - beta1 e1||^2 + lambda^2 ||L f||^2 + alpha^2 ||R_W f||^2

with ``L = I`` for the FGGK process.  Everything here goes through one
thin QR of the stacked matrix ``S = [M; lambda L; alpha R_W]``: with
``S = Q R`` and ``Q_top`` the first ``k+1`` rows of ``Q``,

    f = beta1 R^{-1} Q_top^T e1,    tr(M C) = ||Q_top||_F^2,

so neither the solution nor the influence trace squares the condition
number.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg as sla

from .operators import DimensionError


class RankDeficientError(np.linalg.LinAlgError):
    """Projected system is numerically singular (use nonzero parameters)."""


@dataclass(frozen=True)
class ProjectedSystem:
    M: np.ndarray
    RW: np.ndarray
    beta1: float
    m_obs: int
    L: Optional[np.ndarray] = None

    def __post_init__(self):
        k = self.M.shape[1]
        if self.M.shape != (k + 1, k):
            raise DimensionError("M must be (k+1) x k")
        if self.RW.shape != (k, k):
            raise DimensionError("R_W must be k x k")
        if self.L is not None and self.L.shape != (k, k):
            raise DimensionError("L must be k x k")
        if not self.beta1 > 0:
            raise ValueError("beta1 must be positive")

    @property
    def k(self) -> int:
        return self.M.shape[1]

    @classmethod
    def from_state(cls, st) -> "ProjectedSystem":
        from .fggk import rw_factor

        return cls(st.M, rw_factor(st), st.beta1, st.m)

    def truncated(self, j: int) -> "ProjectedSystem":
        """System of the first ``j`` steps (bases are nested)."""
        L = None if self.L is None else self.L[:j, :j]
        return ProjectedSystem(self.M[: j + 1, :j], self.RW[:j, :j], self.beta1, self.m_obs, L)


class Evaluation(NamedTuple):
    f: np.ndarray
    residual: np.ndarray
    trace: float


def evaluate(sys: ProjectedSystem, lam: float, alpha: float) -> Evaluation:
    """Solve, residual and influence trace from a single factorization."""
    k = sys.k
    L = np.eye(k) if sys.L is None else sys.L
    S = np.vstack([sys.M, lam * L, alpha * sys.RW])
    Qs, Rs = np.linalg.qr(S)
    d = np.abs(np.diag(Rs))
    if d.min() <= 1e-14 * max(d.max(), 1e-300) * k:
        if lam == 0 and alpha == 0:
            raise RankDeficientError("projected system is singular at lambda = alpha = 0; use nonzero parameters")
        raise RankDeficientError("projected system is numerically singular")
    Qtop = Qs[: k + 1]
    f = sla.solve_triangular(Rs, sys.beta1 * Qtop[0], lower=False)
    r = sys.M @ f
    r[0] -= sys.beta1
    return Evaluation(f, r, float(np.sum(Qtop * Qtop)))


def solve_projected(sys: ProjectedSystem, lam: float, alpha: float) -> np.ndarray:
    """Coefficients ``f_k(lambda, alpha)`` via stacked least squares."""
    if lam < 0 or alpha < 0:
        raise ValueError("parameters must be nonnegative")
    return evaluate(sys, lam, alpha).f


def projected_residual(sys: ProjectedSystem, f) -> np.ndarray:
    """``M f - beta1 e1``."""
    f = np.asarray(f, dtype=float)
    if f.shape != (sys.k,):
        raise DimensionError(f"f must have length {sys.k}")
    r = sys.M @ f
    r[0] -= sys.beta1
    return r


def influence_trace(sys: ProjectedSystem, lam: float, alpha: float) -> float:
    """``tr(M_k C_k(lambda, alpha))`` with ``C_k = (M^T M + lambda^2 L^T L + alpha^2 R_W^T R_W)^{-1} M^T``."""
    return evaluate(sys, lam, alpha).trace


def projected_objective(sys: ProjectedSystem, f, lam: float, alpha: float) -> float:
    f = np.asarray(f, dtype=float)
    Lf = f if sys.L is None else sys.L @ f
    r = projected_residual(sys, f)
    return float(r @ r + lam**2 * (Lf @ Lf) + alpha**2 * np.sum((sys.RW @ f) ** 2))


def lift_solution(st, f, mu1, mu2, Q=None):
    """Map coefficients back: ``s1 = mu1 + Q V f``, ``s2 = mu2 + W f``.

    ``f`` may be shorter than ``st.k``; the leading basis columns are used
    (the bases are nested, so this is the iterate of that earlier step).
    Returns ``(s1, s2, s)``.
    """
    f = np.asarray(f, dtype=float)
    j = f.shape[0]
    if j > st.k:
        raise DimensionError(f"f has {j} entries but only {st.k} basis vectors exist")
    mu1 = np.asarray(mu1, dtype=float)
    mu2 = np.asarray(mu2, dtype=float)
    if mu1.shape != (st.n,) or mu2.shape != (st.n,):
        raise DimensionError("means must have length n")
    if getattr(st, "mode", None) == "sparse_only" or j == 0:
        s1 = mu1.copy()
    elif st.Qv:
        s1 = mu1 + np.column_stack(st.Qv[:j]) @ f
    else:
        s1 = mu1 + Q.apply(np.column_stack(st.v[:j]) @ f)
    s2 = mu2 + (np.column_stack(st.w[:j]) @ f if j else 0.0)
    return s1, s2, s1 + s2
