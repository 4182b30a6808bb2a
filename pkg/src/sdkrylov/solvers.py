"""Hybrid projection drivers.

``sdhybr`` runs the FGGK process, picks ``(lambda_k, alpha_k)`` on every
projected problem, reweights with ``D_{k+1} = D(W_k f_k)`` and stops on the
iteration-wise GCV functional.  ``genhybr`` (smooth prior only) and
``fhybr`` (sparse prior only) are the same loop with one branch of the
expansion switched off.  ``alternating`` is the two-block baseline and
``sdhybr_alt`` drives the stacked-vector variant of the process.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .fggk import ZeroResidual, fggk_alt_init, fggk_alt_step, fggk_init, fggk_step
from .operators import DimensionError, LinearMap, SpdMap, diag_map, identity
from .projected import ProjectedSystem, evaluate, lift_solution
from .regparam import (
    DegenerateDenominator,
    SelectionRule,
    StoppingPolicy,
    check_stopping,
    gcv_stop_value,
    make_optimal_objective,
    select_params,
)


@dataclass
class InverseProblem:
    """``d = A (s1 + s2) + noise`` with noise covariance ``R`` and prior covariance ``Q``."""

    A: LinearMap
    R: SpdMap
    Q: SpdMap
    d: np.ndarray
    mu1: Optional[np.ndarray] = None
    mu2: Optional[np.ndarray] = None

    def __post_init__(self):
        m, n = self.A.nrows, self.A.ncols
        self.d = np.asarray(self.d, dtype=float)
        self.mu1 = np.zeros(n) if self.mu1 is None else np.asarray(self.mu1, dtype=float)
        self.mu2 = np.zeros(n) if self.mu2 is None else np.asarray(self.mu2, dtype=float)
        if self.d.shape != (m,) or self.R.dim != m or self.Q.dim != n:
            raise DimensionError("A, R, Q and d do not conform")
        if self.mu1.shape != (n,) or self.mu2.shape != (n,):
            raise DimensionError("means must have length n")
        if self.R.apply_inverse is None:
            raise ValueError("R must provide apply_inverse")

    @property
    def Rinv(self) -> SpdMap:
        return self.R.inverse()

    def shifted_data(self) -> np.ndarray:
        """``c = d - A mu1 - A mu2`` (no matvec when both means vanish)."""
        mu = self.mu1 + self.mu2
        if not np.any(mu):
            return self.d.copy()
        return self.d - self.A.forward(mu)

    def with_data(self, d, mu1=None, mu2=None) -> "InverseProblem":
        return InverseProblem(self.A, self.R, self.Q, d, mu1, mu2)


@dataclass
class SolveOptions:
    max_iter: Optional[int] = None
    epsilon: float = 1e-6
    rule: SelectionRule = field(default_factory=SelectionRule)
    stopping: StoppingPolicy = field(default_factory=StoppingPolicy)
    reorthogonalize: bool = True
    tau_break: float = 1e-12
    s_true: Optional[np.ndarray] = None
    s1_true: Optional[np.ndarray] = None
    s2_true: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iter is not None:
            self.stopping = replace(self.stopping, max_iter=self.max_iter)
        if self.s_true is None and self.rule.kind == "optimal":
            self.s_true = self.rule.truth


@dataclass(frozen=True)
class IterRecord:
    k: int
    lam: float
    alpha: float
    gcv: float
    res_proj: float
    relerr: Optional[float] = None
    relerr_s1: Optional[float] = None
    relerr_s2: Optional[float] = None
    objective: Optional[float] = None


@dataclass
class SolveResult:
    s1: np.ndarray
    s2: np.ndarray
    history: List[IterRecord]
    stop_reason: str
    wall_time: float = 0.0
    k: int = 0
    lam: Optional[float] = None
    alpha: Optional[float] = None
    x: Optional[np.ndarray] = None
    xi: Optional[np.ndarray] = None
    flags: List[str] = field(default_factory=list)
    s: np.ndarray = field(init=False)

    def __post_init__(self):
        self.s = self.s1 + self.s2


def weight_matrix(xi, epsilon: float) -> SpdMap:
    """``D(xi) = diag((2 sqrt(xi_i^2 + eps))^{-1/2})``."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    xi = np.asarray(xi, dtype=float)
    return diag_map((2.0 * np.sqrt(xi * xi + epsilon)) ** -0.5)


def preconditioner(xi, epsilon: float, n: int) -> SpdMap:
    """``D^{-1}`` for the next step; ``xi=None`` gives ``D_1 = I``."""
    if xi is None:
        return identity(n)
    return weight_matrix(xi, epsilon).inverse()


def _relerr(est, truth):
    if truth is None:
        return None
    nt = np.linalg.norm(truth)
    return None if nt == 0 else float(np.linalg.norm(est - truth) / nt)


def _flag_dp(flags, k, residual, target):
    # DP could not reach m*tau; the selection returned the closest point instead
    r2 = float(residual @ residual)
    if abs(r2 - target) > 1e-6 * target:
        flags.append(f"dp_infeasible k={k} residual^2={r2:.6g} target={target:.6g}")


def _empty_result(problem, reason, t0):
    return SolveResult(problem.mu1.copy(), problem.mu2.copy(), [], reason, time.perf_counter() - t0,
                       x=np.zeros(problem.A.ncols), xi=np.zeros(problem.A.ncols))


def _hybrid(problem: InverseProblem, opts: SolveOptions, mode: str, params: str) -> SolveResult:
    t0 = time.perf_counter()
    n = problem.A.ncols
    Q = identity(n) if mode == "sparse_only" else problem.Q
    try:
        st = fggk_init(problem.A, problem.Rinv, Q, problem.shifted_data(), mode=mode,
                       reorth=opts.reorthogonalize, tau_break=opts.tau_break)
    except ZeroResidual:
        return _empty_result(problem, "zero_residual", t0)

    rule = opts.rule
    Dinv = preconditioner(None, opts.epsilon, n)
    steps, gvals, history, flags = [], [], [], []
    reason, best = None, None
    while True:
        fggk_step(st, Dinv)
        if st.breakdown == "v":
            reason = "v_breakdown"
            break
        sys = ProjectedSystem.from_state(st)
        objective = None
        if rule.kind == "optimal":
            objective = make_optimal_objective(st, problem.mu1, problem.mu2, rule.truth)
        lam, alpha = select_params(sys, rule, objective, params=params)
        ev = evaluate(sys, lam, alpha)
        steps.append((ev.f, lam, alpha))
        if rule.kind == "dp":
            _flag_dp(flags, st.k, ev.residual, sys.m_obs * rule.tau)
        if mode != "smooth_only":
            Dinv = preconditioner(st.W @ ev.f, opts.epsilon, n)
        try:
            gval = gcv_stop_value(sys, lam, alpha)
        except DegenerateDenominator:
            gval = np.inf
        gvals.append(gval)
        s1, s2, s = lift_solution(st, ev.f, problem.mu1, problem.mu2)
        history.append(IterRecord(st.k, lam, alpha, gval, float(np.linalg.norm(ev.residual)),
                                  _relerr(s, opts.s_true), _relerr(s1, opts.s1_true), _relerr(s2, opts.s2_true)))
        if st.breakdown == "benign":
            reason = "benign_breakdown"
            break
        dec = check_stopping(gvals, opts.stopping)
        if dec.stop:
            reason = dec.reason
            if dec.reason == "min_passed":
                best = dec.best_index
            break

    if not steps:
        return _empty_result(problem, reason, t0)
    j = len(steps) - 1 if best is None else best
    f, lam, alpha = steps[j]
    s1, s2, _ = lift_solution(st, f, problem.mu1, problem.mu2)
    x = st.V[:, : f.size] @ f if mode != "sparse_only" else np.zeros(n)
    xi = s2 - problem.mu2
    return SolveResult(s1, s2, history, reason, time.perf_counter() - t0, k=j + 1, lam=lam, alpha=alpha, x=x, xi=xi,
                       flags=flags)


def sdhybr(problem: InverseProblem, opts: Optional[SolveOptions] = None) -> SolveResult:
    """Solution-decomposition hybrid method (smooth plus sparse components)."""
    return _hybrid(problem, opts or SolveOptions(), "smooth_and_sparse", "both")


def genhybr(problem: InverseProblem, opts: Optional[SolveOptions] = None) -> SolveResult:
    """Generalized hybrid baseline: smooth Gaussian prior only, ``alpha = 0``."""
    return _hybrid(problem, opts or SolveOptions(), "smooth_only", "lambda")


def fhybr(problem: InverseProblem, opts: Optional[SolveOptions] = None) -> SolveResult:
    """Flexible hybrid baseline: sparsity prior only, ``lambda = 0``.

    ``Q`` is ignored; the data misfit is still whitened by ``R``.
    """
    return _hybrid(problem, opts or SolveOptions(), "sparse_only", "alpha")


def sdhybr_alt(problem: InverseProblem, opts: Optional[SolveOptions] = None, lambda_ratio: float = 1.0) -> SolveResult:
    """Driver for the stacked-vector process with ``alpha = lambda_ratio * lambda``.

    The regularizer ``lambda^2 ||x||_Q^2 + alpha^2 ||xi||^2`` restricted to
    ``(x; xi) = Z_k f`` is ``lambda^2 f^T P f`` with
    ``P = V_top^T Q V_top + lambda_ratio^2 Z_bot^T Z_bot``; a square root of
    ``P`` enters the projected system as its ``lambda`` term, so only
    ``lambda`` is searched.
    """
    if not lambda_ratio > 0:
        raise ValueError("lambda_ratio must be positive")
    opts = opts or SolveOptions()
    t0 = time.perf_counter()
    n = problem.A.ncols
    try:
        st = fggk_alt_init(problem.A, problem.Rinv, problem.Q, problem.shifted_data(),
                           reorth=opts.reorthogonalize, tau_break=opts.tau_break)
    except ZeroResidual:
        return _empty_result(problem, "zero_residual", t0)
    rule = opts.rule
    if rule.kind == "fixed":
        rule = replace(rule, fixed_values=(rule.fixed_values[0], 0.0))
    Dinv = preconditioner(None, opts.epsilon, n)
    steps, gvals, history = [], [], []
    reason, best = None, None
    while True:
        fggk_alt_step(st, Dinv)
        if st.breakdown == "v":
            reason = "v_breakdown"
            break
        k = st.k
        QVtop = np.column_stack([qv[:n] for qv in st.Qhat_v[:k]])
        Vtop = st.V[:n, :k]
        Zbot = np.column_stack(st.zb)
        P = Vtop.T @ QVtop + lambda_ratio**2 * (st.RZb.T @ st.RZb)
        L = _psd_sqrt(P)
        sys = ProjectedSystem(st.G, np.zeros((k, k)), st.beta1, st.A.nrows, L)
        objective = None
        if rule.kind == "optimal":
            e0 = problem.mu1 + problem.mu2 - rule.truth
            B = QVtop + Zbot
            objective = lambda s_, lam_, a_, B=B: float(np.sum((e0 + B @ evaluate(s_, lam_, a_).f) ** 2))
        lam, _ = select_params(sys, rule, objective, params="lambda")
        ev = evaluate(sys, lam, 0.0)
        f = ev.f
        steps.append((f, lam))
        Dinv = preconditioner(Zbot @ f, opts.epsilon, n)
        try:
            gval = gcv_stop_value(sys, lam, 0.0)
        except DegenerateDenominator:
            gval = np.inf
        gvals.append(gval)
        s1 = problem.mu1 + QVtop @ f
        s2 = problem.mu2 + Zbot @ f
        history.append(IterRecord(k, lam, lam * lambda_ratio, gval, float(np.linalg.norm(ev.residual)),
                                  _relerr(s1 + s2, opts.s_true), _relerr(s1, opts.s1_true), _relerr(s2, opts.s2_true)))
        if st.breakdown == "benign":
            reason = "benign_breakdown"
            break
        dec = check_stopping(gvals, opts.stopping)
        if dec.stop:
            reason = dec.reason
            best = dec.best_index if dec.reason == "min_passed" else None
            break
    if not steps:
        return _empty_result(problem, reason, t0)
    j = len(steps) - 1 if best is None else best
    f, lam = steps[j]
    p = f.size
    QVtop = np.column_stack([qv[:n] for qv in st.Qhat_v[:p]])
    Zbot = np.column_stack(st.zb[:p])
    x = st.V[:n, :p] @ f
    xi = Zbot @ f
    return SolveResult(problem.mu1 + QVtop @ f, problem.mu2 + xi, history, reason, time.perf_counter() - t0,
                       k=p, lam=lam, alpha=lam * lambda_ratio, x=x, xi=xi)


def _psd_sqrt(P):
    w, V = np.linalg.eigh(0.5 * (P + P.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def alternating(problem: InverseProblem, opts: Optional[SolveOptions] = None, s2_init=None,
                max_sweeps: int = 20, inner_budget: int = 200, tol: float = 1e-6,
                inner_rule: Optional[SelectionRule] = None) -> SolveResult:
    """Two-block alternating baseline.

    Each sweep solves the smooth subproblem with :func:`genhybr` on
    ``d - A s2`` and then the sparse subproblem with :func:`fhybr` on
    ``d - A s1``.  Stops when the relative change of ``s`` drops below
    ``tol``, after ``max_sweeps`` sweeps, or when ``inner_budget`` inner
    iterations have been spent.  Inner solves select their own parameters
    (WGCV unless ``inner_rule`` says otherwise).

    The history holds one record per sweep; ``objective`` is the smoothed
    MAP objective at the sweep's parameters.
    """
    from .mm_oracle import f_eps

    opts = opts or SolveOptions()
    t0 = time.perf_counter()
    n = problem.A.ncols
    rule = inner_rule or SelectionRule("wgcv")
    s2 = problem.mu2.copy() if s2_init is None else np.asarray(s2_init, dtype=float).copy()
    s1 = problem.mu1.copy()
    x = np.zeros(n)
    s_old = s1 + s2
    history, spent, reason = [], 0, "max_sweeps"
    zeros = np.zeros(n)
    for sweep in range(1, max_sweeps + 1):
        budget = inner_budget - spent
        if budget < 2:
            reason = "inner_budget"
            break
        inner = replace(opts, rule=rule, max_iter=max(1, min(opts.stopping.max_iter, budget // 2)),
                        s_true=None, s1_true=None, s2_true=None)
        try:
            r1 = genhybr(problem.with_data(problem.d - problem.A.forward(s2), problem.mu1, zeros), inner)
            s1, x = r1.s1, r1.x
            r2 = fhybr(problem.with_data(problem.d - problem.A.forward(s1), zeros, problem.mu2), inner)
        except Exception as exc:
            raise RuntimeError(f"alternating sweep {sweep} failed: {exc}") from exc
        s2 = r2.s2
        spent += len(r1.history) + len(r2.history)
        lam = r1.lam if r1.lam is not None else 0.0
        alpha = r2.alpha if r2.alpha is not None else 0.0
        s = s1 + s2
        obj = f_eps(x, s2 - problem.mu2, problem, lam, alpha, opts.epsilon)
        history.append(IterRecord(sweep, lam, alpha, np.nan, np.nan, _relerr(s, opts.s_true),
                                  _relerr(s1, opts.s1_true), _relerr(s2, opts.s2_true), obj))
        change = np.linalg.norm(s - s_old) / max(np.linalg.norm(s), 1e-300)
        s_old = s
        if change < tol:
            reason = "converged"
            break
    return SolveResult(s1, s2, history, reason, time.perf_counter() - t0, k=len(history),
                       lam=history[-1].lam if history else None, alpha=history[-1].alpha if history else None,
                       x=x, xi=s2 - problem.mu2)
