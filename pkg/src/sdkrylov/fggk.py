"""Flexible generalized Golub-Kahan (FGGK) process.

One step expands the solution basis with ``A^T R^{-1} u_k`` (Q-orthogonal
Gram-Schmidt), forms the preconditioned vector ``w_k = D_k^{-1} v_k`` and
expands the data basis with ``A (Q v_k + w_k)`` (R^{-1}-orthogonal
Gram-Schmidt).  After ``k`` steps

    A Q V_k + A W_k = U_{k+1} M_k,       A^T R^{-1} U_k = V_k T_k,

with ``U^T R^{-1} U = I`` and ``V^T Q V = I``.

Per step the process costs one ``A``, one ``A^T``, two ``Q``, one
``R^{-1}`` and one ``D_k^{-1}`` application.  Previously computed
``Q v_j`` and ``R^{-1} u_j`` are cached for the inner products.

The appendix variant (:func:`fggk_alt_init` / :func:`fggk_alt_step`)
works with stacked vectors ``v in R^{2n}`` orthonormal in the
``blkdiag(Q, I)`` inner product and preconditions through
``z_j = blkdiag(I, D_j^{-1}) v_j``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .operators import DimensionError, LinearMap, SpdMap

MODES = ("smooth_and_sparse", "smooth_only", "sparse_only")


class ZeroResidual(ValueError):
    """The shifted data ``c`` vanishes; the prior mean already fits."""


def qr_update(QW, RW, w_new, reorth: bool = True):
    """Append ``w_new`` to the thin QR factorization ``W = QW RW``.

    Classical Gram-Schmidt with one reorthogonalization pass; O(n k).

    Returns
    -------
    QW, RW : updated factors
    rank_deficient : bool
        True when ``beta = ||(I - QW QW^T) w_new|| <= 1e-12 ||w_new||``.  The
        column and the tiny ``beta`` are kept; the new ``QW`` column is then
        an arbitrary unit vector orthogonal to the old ones so ``QW`` stays
        orthonormal.
    """
    w = np.asarray(w_new, dtype=float)
    n = w.shape[0]
    QW = np.zeros((n, 0)) if QW is None else np.asarray(QW, dtype=float)
    RW = np.zeros((0, 0)) if RW is None else np.asarray(RW, dtype=float)
    k = QW.shape[1]
    if QW.shape[0] != n or RW.shape != (k, k):
        raise DimensionError("QR factors do not conform with the new column")
    r = QW.T @ w
    q = w - QW @ r
    if reorth and k:
        dr = QW.T @ q
        q -= QW @ dr
        r += dr
    beta = float(np.linalg.norm(q))
    wnorm = float(np.linalg.norm(w))
    rank_deficient = beta <= 1e-12 * wnorm or wnorm == 0.0
    if rank_deficient:
        # pick the coordinate direction least represented in span(QW)
        j = int(np.argmin(np.sum(QW**2, axis=1))) if k else 0
        e = np.zeros(n)
        e[j] = 1.0
        for _ in range(2):
            e -= QW @ (QW.T @ e)
        q = e / np.linalg.norm(e)
    else:
        q = q / beta
    RW_new = np.zeros((k + 1, k + 1))
    RW_new[:k, :k] = RW
    RW_new[:k, k] = r
    RW_new[k, k] = beta
    return np.column_stack([QW, q]), RW_new, rank_deficient


@dataclass
class FggkState:
    """Growing bases and coefficient matrices of the FGGK process.

    Column lists are kept as Python lists of vectors; matrix views are
    assembled on access.  ``k`` counts completed steps.
    """

    A: LinearMap
    Rinv: SpdMap
    Q: SpdMap
    beta1: float
    mode: str = "smooth_and_sparse"
    reorth: bool = True
    tau_break: float = 1e-12
    k: int = 0
    u: List[np.ndarray] = field(default_factory=list)
    Rinv_u: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
    Qv: List[np.ndarray] = field(default_factory=list)
    w: List[np.ndarray] = field(default_factory=list)
    m_cols: List[np.ndarray] = field(default_factory=list)
    t_cols: List[np.ndarray] = field(default_factory=list)
    QW: Optional[np.ndarray] = None
    RW: Optional[np.ndarray] = None
    qr_flags: List[bool] = field(default_factory=list)
    breakdown: Optional[str] = None

    @property
    def n(self) -> int:
        return self.A.ncols

    @property
    def m(self) -> int:
        return self.A.nrows

    @property
    def U(self) -> np.ndarray:
        return np.column_stack(self.u)

    @property
    def V(self) -> np.ndarray:
        return np.column_stack(self.v) if self.v else np.zeros((self.n, 0))

    @property
    def QV(self) -> np.ndarray:
        return np.column_stack(self.Qv) if self.Qv else np.zeros((self.n, 0))

    @property
    def W(self) -> np.ndarray:
        return np.column_stack(self.w) if self.w else np.zeros((self.n, 0))

    @property
    def M(self) -> np.ndarray:
        """Upper Hessenberg ``(k+1) x k``."""
        k = self.k
        M = np.zeros((k + 1, k))
        for j, col in enumerate(self.m_cols):
            M[: j + 2, j] = col
        return M

    @property
    def T(self) -> np.ndarray:
        """Upper triangular, one column per available ``v``."""
        p = len(self.t_cols)
        T = np.zeros((p, p))
        for j, col in enumerate(self.t_cols):
            T[: j + 1, j] = col
        return T

    def snapshot(self) -> "FggkState":
        """Independent copy (bases are copied, operators shared)."""
        return copy.deepcopy(self, memo={id(self.A): self.A, id(self.Q): self.Q, id(self.Rinv): self.Rinv})


def fggk_init(A: LinearMap, Rinv: SpdMap, Q: SpdMap, c, mode: str = "smooth_and_sparse",
              reorth: bool = True, tau_break: float = 1e-12) -> FggkState:
    """Start the process from ``u_1 = c / ||c||_{R^{-1}}``.

    Raises :class:`ZeroResidual` for ``c = 0``.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    c = np.asarray(c, dtype=float)
    if c.shape != (A.nrows,) or Rinv.dim != A.nrows or Q.dim != A.ncols:
        raise DimensionError("A, R^{-1}, Q and c do not conform")
    Rc = Rinv.apply(c)
    beta1 = float(np.sqrt(max(c @ Rc, 0.0)))
    if beta1 == 0.0:
        raise ZeroResidual("c = 0: nothing to solve")
    st = FggkState(A, Rinv, Q, beta1, mode=mode, reorth=reorth, tau_break=tau_break)
    st.u.append(c / beta1)
    st.Rinv_u.append(Rc / beta1)
    return st


def _mgs(h, basis, weighted_basis, reorth):
    """Modified Gram-Schmidt of ``h`` against ``basis`` where the inner
    product with column j is ``h @ weighted_basis[j]``."""
    coef = np.zeros(len(basis))
    for _ in range(2 if reorth else 1):
        for j, (b, wb) in enumerate(zip(basis, weighted_basis)):
            cj = h @ wb
            h = h - cj * b
            coef[j] += cj
    return h, coef


def _expand_v(st: FggkState) -> bool:
    """Part (a): ``v_k`` from ``A^T R^{-1} u_k``.  Returns False on breakdown."""
    k = len(st.v)
    h = st.A.adjoint(st.Rinv_u[k])
    h, t = _mgs(h, st.v, st.Qv, st.reorth)
    if st.mode == "sparse_only":
        tkk = float(np.linalg.norm(h))
    else:
        tkk = float(np.sqrt(max(h @ st.Q.apply(h), 0.0)))
    if tkk <= st.tau_break:
        st.breakdown = "v"
        return False
    v = h / tkk
    st.v.append(v)
    st.t_cols.append(np.append(t, tkk))
    if st.mode == "sparse_only":
        st.Qv.append(v)
    else:
        st.Qv.append(st.Q.apply(v))
    return True


def _expand_u(st: FggkState, Dk_inv: Optional[SpdMap]) -> None:
    """Parts (b)-(d): ``w_k``, ``u_{k+1}`` and the QR update of ``W``."""
    v, Qv = st.v[-1], st.Qv[-1]
    if st.mode == "smooth_only":
        w = np.zeros_like(v)
        g = Qv
    else:
        if Dk_inv is None or Dk_inv.dim != st.n:
            raise DimensionError("D_k^{-1} must be an n x n operator")
        w = Dk_inv.apply(v)
        g = w if st.mode == "sparse_only" else Qv + w
    h = st.A.forward(g)
    h, mcol = _mgs(h, st.u, st.Rinv_u, st.reorth)
    Rh = st.Rinv.apply(h)
    mnext = float(np.sqrt(max(h @ Rh, 0.0)))
    st.w.append(w)
    if mnext <= st.tau_break * st.beta1:
        st.breakdown = "benign"
        st.u.append(np.zeros_like(h))
        st.Rinv_u.append(np.zeros_like(h))
        mnext = 0.0
    else:
        st.u.append(h / mnext)
        st.Rinv_u.append(Rh / mnext)
    st.m_cols.append(np.append(mcol, mnext))
    if st.mode != "smooth_only":
        st.QW, st.RW, flag = qr_update(st.QW, st.RW, w)
        st.qr_flags.append(flag)
    st.k += 1


def fggk_step(st: FggkState, Dk_inv: Optional[SpdMap] = None) -> FggkState:
    """Advance the process by one step with weighting ``D_k^{-1}``.

    On return ``st.breakdown`` is ``None``, ``"benign"`` (``m_{k+1,k}``
    vanished: the residual lies in the current subspace, the step itself
    is complete) or ``"v"`` (``t_{k,k}`` vanished: the step could not be
    taken and the state is unchanged).
    """
    if st.breakdown is not None:
        raise RuntimeError(f"process already broke down ({st.breakdown})")
    if _expand_v(st):
        _expand_u(st, Dk_inv)
    return st


def rw_factor(st: FggkState) -> np.ndarray:
    """``R_{W,k}``; zeros in smooth-only mode where ``W = 0``."""
    if st.RW is None:
        return np.zeros((st.k, st.k))
    return st.RW


# --- audits --------------------------------------------------------------------


def relation_residuals(st: FggkState, A_dense, Q_dense, Rinv_dense):
    """Relative Frobenius residuals of both matrix relations and of the
    two orthogonality conditions, recomputed densely.

    The second relation ``A^T R^{-1} U_{k+1} = V_{k+1} T_{k+1}`` needs
    ``v_{k+1}``; it is obtained on a snapshot so ``st`` is untouched.
    """
    k = st.k
    V, W, U = st.V[:, :k], st.W, st.U
    Qd = np.eye(st.n) if st.mode == "sparse_only" else Q_dense
    if st.mode == "sparse_only":
        lhs1 = A_dense @ W
    elif st.mode == "smooth_only":
        lhs1 = A_dense @ (Qd @ V)
    else:
        lhs1 = A_dense @ (Qd @ V) + A_dense @ W
    rel1 = np.linalg.norm(lhs1 - U @ st.M) / np.linalg.norm(lhs1)
    ext = st.snapshot()
    if len(ext.v) == k:
        _expand_v(ext)
    p = len(ext.v)
    lhs2 = A_dense.T @ (Rinv_dense @ U[:, :p])
    rel2 = np.linalg.norm(lhs2 - ext.V @ ext.T) / np.linalg.norm(lhs2)
    Uc = U[:, : k + 1] if st.breakdown != "benign" else U[:, :k]
    orth_u = np.linalg.norm(Uc.T @ Rinv_dense @ Uc - np.eye(Uc.shape[1]))
    orth_v = np.linalg.norm(ext.V.T @ Qd @ ext.V - np.eye(p))
    return {"AQZ": rel1, "ATRU": rel2, "orth_U": orth_u, "orth_V": orth_v}


def fixed_d_krylov_basis(A: LinearMap, Rinv: SpdMap, Q: SpdMap, Dhat_inv: SpdMap, c, k: int) -> np.ndarray:
    """Columns ``c, E c, ..., E^{k-1} c`` with ``E = A (Q + Dhat^{-1}) A^T R^{-1}``.

    Each power is rescaled to unit length; this leaves the span unchanged
    and keeps the columns representable.
    """
    c = np.asarray(c, dtype=float)
    if c.shape != (A.nrows,):
        raise DimensionError("c must have length m")
    cols = [c / np.linalg.norm(c)]
    for _ in range(k - 1):
        y = A.adjoint(Rinv.apply(cols[-1]))
        y = A.forward(Q.apply(y) + Dhat_inv.apply(y))
        cols.append(y / np.linalg.norm(y))
    return np.column_stack(cols)


# --- appendix variant ------------------------------------------------------------


@dataclass
class AltFggkState:
    """State of the stacked-vector variant.

    ``v_j = (v_top; v_bot)`` is orthonormal in ``blkdiag(Q, I)``;
    ``z_j = (v_top; D_j^{-1} v_bot)``.  ``QZb``/``RZb`` is a thin QR of the
    lower blocks of ``Z``, used for the regularization Gram matrix.
    """

    A: LinearMap
    Rinv: SpdMap
    Q: SpdMap
    beta1: float
    reorth: bool = True
    tau_break: float = 1e-12
    k: int = 0
    u: List[np.ndarray] = field(default_factory=list)
    Rinv_u: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
    Qhat_v: List[np.ndarray] = field(default_factory=list)
    zb: List[np.ndarray] = field(default_factory=list)
    g_cols: List[np.ndarray] = field(default_factory=list)
    h_cols: List[np.ndarray] = field(default_factory=list)
    QZb: Optional[np.ndarray] = None
    RZb: Optional[np.ndarray] = None
    breakdown: Optional[str] = None

    @property
    def n(self) -> int:
        return self.A.ncols

    @property
    def U(self):
        return np.column_stack(self.u)

    @property
    def V(self):
        return np.column_stack(self.v) if self.v else np.zeros((2 * self.n, 0))

    @property
    def QhatV(self):
        return np.column_stack(self.Qhat_v) if self.Qhat_v else np.zeros((2 * self.n, 0))

    @property
    def Z(self):
        n, k = self.n, self.k
        return np.vstack([self.V[:n, :k], np.column_stack(self.zb) if self.zb else np.zeros((n, 0))])

    @property
    def G(self):
        G = np.zeros((self.k + 1, self.k))
        for j, col in enumerate(self.g_cols):
            G[: j + 2, j] = col
        return G

    @property
    def H(self):
        p = len(self.h_cols)
        H = np.zeros((p, p))
        for j, col in enumerate(self.h_cols):
            H[: j + 1, j] = col
        return H

    def snapshot(self) -> "AltFggkState":
        return copy.deepcopy(self, memo={id(self.A): self.A, id(self.Q): self.Q, id(self.Rinv): self.Rinv})


def fggk_alt_init(A: LinearMap, Rinv: SpdMap, Q: SpdMap, c, reorth: bool = True,
                  tau_break: float = 1e-12) -> AltFggkState:
    c = np.asarray(c, dtype=float)
    if c.shape != (A.nrows,) or Rinv.dim != A.nrows or Q.dim != A.ncols:
        raise DimensionError("A, R^{-1}, Q and c do not conform")
    Rc = Rinv.apply(c)
    beta1 = float(np.sqrt(max(c @ Rc, 0.0)))
    if beta1 == 0.0:
        raise ZeroResidual("c = 0: nothing to solve")
    st = AltFggkState(A, Rinv, Q, beta1, reorth=reorth, tau_break=tau_break)
    st.u.append(c / beta1)
    st.Rinv_u.append(Rc / beta1)
    return st


def _alt_expand_v(st: AltFggkState) -> bool:
    n = st.n
    g = st.A.adjoint(st.Rinv_u[len(st.v)])
    h = np.concatenate([g, g])
    h, coef = _mgs(h, st.v, st.Qhat_v, st.reorth)
    hkk = float(np.sqrt(max(h[:n] @ st.Q.apply(h[:n]) + h[n:] @ h[n:], 0.0)))
    if hkk <= st.tau_break:
        st.breakdown = "v"
        return False
    v = h / hkk
    st.v.append(v)
    st.h_cols.append(np.append(coef, hkk))
    st.Qhat_v.append(np.concatenate([st.Q.apply(v[:n]), v[n:]]))
    return True


def _alt_expand_u(st: AltFggkState, Dk_inv: SpdMap) -> None:
    n = st.n
    v, Qhv = st.v[-1], st.Qhat_v[-1]
    zb = Dk_inv.apply(v[n:])
    # A Qhat z = A Q v_top + A D^{-1} v_bot, with Q v_top cached
    h = st.A.forward(Qhv[:n] + zb)
    h, gcol = _mgs(h, st.u, st.Rinv_u, st.reorth)
    Rh = st.Rinv.apply(h)
    gnext = float(np.sqrt(max(h @ Rh, 0.0)))
    st.zb.append(zb)
    if gnext <= st.tau_break * st.beta1:
        st.breakdown = "benign"
        st.u.append(np.zeros_like(h))
        st.Rinv_u.append(np.zeros_like(h))
        gnext = 0.0
    else:
        st.u.append(h / gnext)
        st.Rinv_u.append(Rh / gnext)
    st.g_cols.append(np.append(gcol, gnext))
    st.QZb, st.RZb, _ = qr_update(st.QZb, st.RZb, zb)
    st.k += 1


def fggk_alt_step(st: AltFggkState, Dk_inv: SpdMap) -> AltFggkState:
    """One step of the stacked-vector variant; breakdown handling as in :func:`fggk_step`."""
    if st.breakdown is not None:
        raise RuntimeError(f"process already broke down ({st.breakdown})")
    if _alt_expand_v(st):
        _alt_expand_u(st, Dk_inv)
    return st


def alt_relation_residuals(st: AltFggkState, A_dense, Q_dense, Rinv_dense):
    """Dense audit of ``Ahat Qhat Z_k = U_{k+1} G_k``,
    ``Ahat^T R^{-1} U_{k+1} = V_{k+1} H_{k+1}`` and both orthogonality conditions."""
    n, k = st.n, st.k
    Z, U = st.Z, st.U
    lhs1 = A_dense @ (Q_dense @ Z[:n]) + A_dense @ Z[n:]
    rel1 = np.linalg.norm(lhs1 - U @ st.G) / np.linalg.norm(lhs1)
    ext = st.snapshot()
    if len(ext.v) == k:
        _alt_expand_v(ext)
    p = len(ext.v)
    g = A_dense.T @ (Rinv_dense @ U[:, :p])
    lhs2 = np.vstack([g, g])
    rel2 = np.linalg.norm(lhs2 - ext.V @ ext.H) / np.linalg.norm(lhs2)
    Qhat = np.block([[Q_dense, np.zeros((n, n))], [np.zeros((n, n)), np.eye(n)]])
    Uc = U if st.breakdown != "benign" else U[:, :k]
    orth_u = np.linalg.norm(Uc.T @ Rinv_dense @ Uc - np.eye(Uc.shape[1]))
    orth_v = np.linalg.norm(ext.V.T @ Qhat @ ext.V - np.eye(p))
    return {"AQZ": rel1, "ATRU": rel2, "orth_U": orth_u, "orth_V": orth_v}
