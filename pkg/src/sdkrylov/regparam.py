"""Choice of ``(lambda, alpha)`` on the projected problem and the GCV-type
stopping rule for the outer iteration.

All selection happens in ``log10`` coordinates: a Nelder-Mead search
started at ``(-0.5, -0.5)`` plus a coarse log-grid safeguard, keeping
whichever point has the smaller objective.  ``search = "grid"`` skips the
simplex and returns the best grid point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .projected import ProjectedSystem, evaluate, lift_solution

RULES = ("optimal", "upre", "dp", "wgcv", "fixed")
_LOG_BOX = (-14.0, 8.0)


class SelectionError(RuntimeError):
    """Every objective evaluation failed."""


class DegenerateDenominator(FloatingPointError):
    pass


@dataclass(frozen=True)
class SelectionRule:
    kind: str = "wgcv"
    tau: float = 1.0
    fixed_values: Optional[tuple] = None
    truth: Optional[np.ndarray] = None
    grid_points: int = 9
    grid_range: tuple = (-6.0, 2.0)
    start: tuple = (-0.5, -0.5)
    search: str = "simplex+grid"

    def __post_init__(self):
        if self.kind not in RULES:
            raise ValueError(f"unknown rule {self.kind!r}")
        if self.search not in ("simplex+grid", "grid"):
            raise ValueError(f"unknown search {self.search!r}")
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        if self.kind == "fixed" and self.fixed_values is None:
            raise ValueError("fixed rule needs fixed_values")
        if self.kind == "optimal" and self.truth is None:
            raise ValueError("optimal rule needs the true solution")


@dataclass(frozen=True)
class StoppingPolicy:
    max_iter: int = 50
    gcv_tol: float = 1e-6
    window: int = 3

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.gcv_tol > 0:
            raise ValueError("gcv_tol must be positive")
        if self.window < 1:
            raise ValueError("window must be >= 1")


# --- objectives --------------------------------------------------------------------


def upre_objective(sys: ProjectedSystem, lam: float, alpha: float) -> float:
    ev = evaluate(sys, lam, alpha)
    k = sys.k
    return float(ev.residual @ ev.residual / k + 2.0 * ev.trace / k - 1.0)


def dp_objective(sys: ProjectedSystem, lam: float, alpha: float, tau: float = 1.0) -> float:
    ev = evaluate(sys, lam, alpha)
    return float(abs(ev.residual @ ev.residual - sys.m_obs * tau))


def wgcv_objective(sys: ProjectedSystem, lam: float, alpha: float, omega: Optional[float] = None) -> float:
    """``||r||^2 / (k - omega tr(M C))^2`` with ``omega = k / m`` by default."""
    ev = evaluate(sys, lam, alpha)
    k = sys.k
    omega = k / sys.m_obs if omega is None else omega
    den = (k - omega * ev.trace) ** 2
    if den < 1e-14:
        raise DegenerateDenominator("WGCV denominator vanished")
    return float(ev.residual @ ev.residual / den)


def gcv_stop_value(sys: ProjectedSystem, lam: float, alpha: float) -> float:
    """Iteration-wise GCV functional ``k ||r||^2 / (k - tr(M C))^2``."""
    ev = evaluate(sys, lam, alpha)
    k = sys.k
    den = (k - ev.trace) ** 2
    if den < 1e-14:
        raise DegenerateDenominator("GCV denominator vanished")
    return float(k * (ev.residual @ ev.residual) / den)


def optimal_objective(st, sys: ProjectedSystem, lam: float, alpha: float, mu1, mu2, Q, s_true) -> float:
    """``||s_k(lambda, alpha) - s_true||^2``; only for benchmarking."""
    f = evaluate(sys, lam, alpha).f
    _, _, s = lift_solution(st, f, mu1, mu2, Q)
    e = s - s_true
    return float(e @ e)


def make_optimal_objective(st, mu1, mu2, s_true) -> Callable:
    """Cheap closure equivalent to :func:`optimal_objective` for the current step.

    ``s_k - s_true = (mu1 + mu2 - s_true) + B f`` with ``B = Q V + W``.
    """
    s1, s2, s = lift_solution(st, np.zeros(0), mu1, mu2)
    k = st.k
    cols = []
    if getattr(st, "mode", None) != "sparse_only":
        cols.append(np.column_stack(st.Qv[:k]))
    cols.append(np.column_stack(st.w[:k]))
    B = sum(cols)
    e0 = s - np.asarray(s_true, dtype=float)

    def objective(sys, lam, alpha):
        e = e0 + B @ evaluate(sys, lam, alpha).f
        return float(e @ e)

    return objective


def rule_objective(rule: SelectionRule) -> Callable:
    if rule.kind == "upre":
        return upre_objective
    if rule.kind == "dp":
        return lambda sys, lam, alpha: dp_objective(sys, lam, alpha, rule.tau)
    if rule.kind == "wgcv":
        return wgcv_objective
    raise ValueError(f"rule {rule.kind!r} needs an explicit objective")


# --- search ----------------------------------------------------------------------------


def select_params(sys: ProjectedSystem, rule: SelectionRule, objective: Optional[Callable] = None,
                  params: str = "both", fixed: tuple = (0.0, 0.0)):
    """Minimize the rule's objective over ``(log10 lambda, log10 alpha)``.

    Parameters
    ----------
    sys : ProjectedSystem
    rule : SelectionRule
    objective : callable ``(sys, lam, alpha) -> float``, optional
        Overrides the rule's own objective (required for ``optimal``).
    params : {"both", "lambda", "alpha"}
        Which parameters are searched; the others keep their value from
        ``fixed``.

    Returns
    -------
    (lam, alpha)
    """
    if rule.kind == "fixed":
        return tuple(float(v) for v in rule.fixed_values)
    obj = objective if objective is not None else rule_objective(rule)
    last_err = [None]
    free = {"both": (0, 1), "lambda": (0,), "alpha": (1,)}[params]

    def unpack(p):
        vals = list(fixed)
        for i, pi in zip(free, np.atleast_1d(p)):
            vals[i] = 10.0 ** float(np.clip(pi, *_LOG_BOX))
        return vals

    def g(p):
        lam, alpha = unpack(p)
        try:
            val = obj(sys, lam, alpha)
        except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
            last_err[0] = exc
            return np.inf
        return val if np.isfinite(val) else np.inf

    x0 = np.array([rule.start[i] for i in free])
    best_p, best_val = x0, np.inf
    if rule.search == "simplex+grid":
        best_val = g(x0)
        scale = abs(best_val) if np.isfinite(best_val) and best_val != 0 else 1.0
        res = minimize(g, x0, method="Nelder-Mead",
                       options={"xatol": 1e-7, "fatol": 1e-13 * scale, "maxiter": 400 * len(free),
                                "maxfev": 800 * len(free)})
        if res.fun < best_val:
            best_p, best_val = res.x, res.fun
    grid = np.linspace(rule.grid_range[0], rule.grid_range[1], rule.grid_points)
    mesh = np.meshgrid(*([grid] * len(free)), indexing="ij")
    for p in np.column_stack([m.ravel() for m in mesh]):
        val = g(p)
        if val < best_val:
            best_p, best_val = p, val
    if not np.isfinite(best_val):
        raise SelectionError(f"all objective evaluations failed; last error: {last_err[0]!r}")
    return tuple(unpack(best_p))


# --- stopping ----------------------------------------------------------------------------


@dataclass(frozen=True)
class StopDecision:
    stop: bool
    reason: Optional[str] = None
    best_index: Optional[int] = None


def check_stopping(history: Sequence[float], policy: StoppingPolicy) -> StopDecision:
    """Decide whether the outer iteration should stop.

    Fires ``min_passed`` once the last ``window`` values are finite and all
    sit above the running minimum (``best_index`` then points at the
    minimizer), ``flat`` when the last ``window`` relative changes are below
    ``gcv_tol``, and ``max_iter`` when the budget is spent.  Non-finite
    values (degenerate denominators) carry no information and never
    trigger ``min_passed`` on their own.
    """
    h = np.asarray(history, dtype=float)
    if h.size == 0:
        raise ValueError("empty history")
    h = np.where(np.isfinite(h), h, np.inf)
    w = policy.window
    if np.isfinite(h).any():
        imin = int(np.argmin(h))
        if h.size - 1 - imin >= w and np.isfinite(h[-w:]).all() and np.all(h[-w:] > h[imin]):
            return StopDecision(True, "min_passed", imin)
    if h.size > w:
        prev, cur = h[-w - 1 : -1], h[-w:]
        with np.errstate(invalid="ignore"):
            rel = np.abs(cur - prev) / np.maximum(prev, np.finfo(float).eps)
        if np.all(rel < policy.gcv_tol):
            return StopDecision(True, "flat", h.size - 1)
    if h.size >= policy.max_iter:
        return StopDecision(True, "max_iter", h.size - 1)
    return StopDecision(False)
