"""Matrix-free operators and weighted inner products.

Every solver in the package talks to ``A``, ``Q``, ``R`` and the
reweighting matrices through the two small types defined here.  Dense
matrices are only one possible backing; anything exposing the right
callables works.

All ``forward``/``adjoint``/``apply`` callables accept either a vector of
shape ``(n,)`` or a block of column vectors of shape ``(n, k)``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

Array = np.ndarray
Apply = Callable[[Array], Array]


class DimensionError(ValueError):
    """Raised when operand sizes do not conform."""


class DefinitenessError(ValueError):
    """Raised when an operator that must be SPD is found not to be."""


@dataclass(frozen=True)
class LinearMap:
    """Linear map R^ncols -> R^nrows given by forward and adjoint callables."""

    nrows: int
    ncols: int
    forward: Apply
    adjoint: Apply
    matrix: Optional[object] = field(default=None, repr=False, compare=False)

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    def __matmul__(self, x):
        return self.forward(x)

    def todense(self) -> Array:
        if self.matrix is not None:
            M = self.matrix
            return M.toarray() if sp.issparse(M) else np.asarray(M)
        return self.forward(np.eye(self.ncols))


@dataclass(frozen=True)
class SpdMap:
    """Symmetric positive definite operator of size ``dim``.

    ``apply_inverse`` and ``apply_sqrt`` are optional capabilities.  The
    square root only needs to satisfy ``S S^T = M`` (a Cholesky factor
    qualifies), which is all that sampling requires.
    """

    dim: int
    apply: Apply
    apply_inverse: Optional[Apply] = None
    apply_sqrt: Optional[Apply] = None
    matrix: Optional[Array] = field(default=None, repr=False, compare=False)
    diag: Optional[Array] = field(default=None, repr=False, compare=False)

    def __matmul__(self, x):
        return self.apply(x)

    def inverse(self) -> "SpdMap":
        """The inverse operator; requires ``apply_inverse``."""
        if self.apply_inverse is None:
            raise ValueError("operator has no inverse capability")
        diag = None if self.diag is None else 1.0 / self.diag
        return SpdMap(self.dim, self.apply_inverse, self.apply, diag=diag)

    def todense(self) -> Array:
        if self.matrix is not None:
            return np.asarray(self.matrix)
        if self.diag is not None:
            return np.diag(self.diag)
        return self.apply(np.eye(self.dim))


def _check_len(x, n, what="vector"):
    if x.shape[0] != n:
        raise DimensionError(f"{what} has length {x.shape[0]}, expected {n}")


def matrix_map(A) -> LinearMap:
    """Wrap a dense array or scipy sparse matrix as a :class:`LinearMap`."""
    if sp.issparse(A):
        A = sp.csr_matrix(A)
        At = sp.csr_matrix(A.T)
        return LinearMap(A.shape[0], A.shape[1], lambda x: A @ x, lambda y: At @ y, matrix=A)
    A = np.asarray(A, dtype=float)
    return LinearMap(A.shape[0], A.shape[1], lambda x: A @ x, lambda y: A.T @ y, matrix=A)


def dense_spd(M, check: bool = True) -> SpdMap:
    """Wrap a dense SPD matrix; inverse and square root via Cholesky."""
    import scipy.linalg as sla

    M = np.asarray(M, dtype=float)
    if check and not np.allclose(M, M.T, rtol=1e-12, atol=1e-14 * np.abs(M).max()):
        raise DefinitenessError("matrix is not symmetric")
    try:
        L = sla.cholesky(M, lower=True)
    except np.linalg.LinAlgError as exc:
        lam_min = np.linalg.eigvalsh(M)[0]
        raise DefinitenessError(
            f"Cholesky factorization failed; smallest eigenvalue ~ {lam_min:.3e}"
        ) from exc
    cho = (L, True)
    return SpdMap(
        M.shape[0],
        lambda x: M @ x,
        lambda x: sla.cho_solve(cho, x),
        lambda z: L @ z,
        matrix=M,
    )


def diag_map(dvals) -> SpdMap:
    """Diagonal SPD operator with strictly positive entries ``dvals``."""
    d = np.asarray(dvals, dtype=float).ravel()
    if not np.all(d > 0) or not np.all(np.isfinite(d)):
        raise DefinitenessError("diagonal entries must be finite and strictly positive")
    sq = np.sqrt(d)

    def _scale(v):
        return lambda x: (v * x.T).T

    return SpdMap(d.size, _scale(d), _scale(1.0 / d), _scale(sq), diag=d)


def identity(n: int) -> SpdMap:
    ones = np.ones(n)
    f = lambda x: np.array(x, dtype=float, copy=True)
    return SpdMap(n, f, f, f, diag=ones)


def weighted_inner(x, y, M: SpdMap) -> float:
    """``x^T M y``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_len(x, M.dim, "x")
    _check_len(y, M.dim, "y")
    return float(x @ M.apply(y))


def weighted_norm(x, M: SpdMap) -> float:
    """``sqrt(x^T M x)``; raises if the quadratic form is clearly negative."""
    x = np.asarray(x, dtype=float)
    _check_len(x, M.dim, "x")
    q = float(x @ M.apply(x))
    if q < 0:
        if q < -1e-12 * float(x @ x):
            raise DefinitenessError(f"negative quadratic form {q:.3e}")
        return 0.0
    return float(np.sqrt(q))


def kron_apply(Qt: SpdMap, Qs: SpdMap, x) -> Array:
    """``(Qt kron Qs) x`` without forming the Kronecker product.

    ``x`` stacks ``r`` blocks of length ``g`` (spatial index fastest), i.e.
    ``x = vec(X)`` with ``X`` of shape ``(g, r)``; the result is
    ``vec(Qs X Qt^T)``.  A trailing block dimension is supported.
    """
    x = np.asarray(x, dtype=float)
    r, g = Qt.dim, Qs.dim
    if x.shape[0] != r * g:
        raise DimensionError(f"length {x.shape[0]} is not {r}*{g}")
    if x.ndim == 2:
        return np.column_stack([kron_apply(Qt, Qs, col) for col in x.T]) if x.shape[1] else x.copy()
    X = x.reshape(r, g).T  # (g, r), column-major view of x
    Y = Qs.apply(X)
    Y = Qt.apply(Y.T)  # (r, g) == (Qs X Qt^T)^T
    return Y.ravel()


def block_diag_spd(*blocks: SpdMap) -> SpdMap:
    """Block diagonal composition, e.g. ``Qhat = blkdiag(Q, I)``."""
    sizes = [b.dim for b in blocks]
    cuts = np.cumsum([0] + sizes)

    def make(attr):
        fns = [getattr(b, attr) for b in blocks]
        if any(f is None for f in fns):
            return None

        def run(x):
            return np.concatenate([f(x[a:b]) for f, a, b in zip(fns, cuts[:-1], cuts[1:])], axis=0)

        return run

    return SpdMap(int(cuts[-1]), make("apply"), make("apply_inverse"), make("apply_sqrt"))


def hstack_maps(*maps: LinearMap) -> LinearMap:
    """``[A1 A2 ...]``; ``hstack_maps(A, A)`` is the augmented map of the
    stacked smooth/sparse unknowns."""
    m = maps[0].nrows
    if any(op.nrows != m for op in maps):
        raise DimensionError("row counts differ")
    sizes = [op.ncols for op in maps]
    cuts = np.cumsum([0] + sizes)

    def fwd(x):
        return sum(op.forward(x[a:b]) for op, a, b in zip(maps, cuts[:-1], cuts[1:]))

    def adj(y):
        return np.concatenate([op.adjoint(y) for op in maps], axis=0)

    return LinearMap(m, int(cuts[-1]), fwd, adj)


def block_diag_maps(*maps: LinearMap) -> LinearMap:
    """Block diagonal linear map (one block per frame of a dynamic problem)."""
    rcuts = np.cumsum([0] + [op.nrows for op in maps])
    ccuts = np.cumsum([0] + [op.ncols for op in maps])

    def fwd(x):
        return np.concatenate([op.forward(x[a:b]) for op, a, b in zip(maps, ccuts[:-1], ccuts[1:])], axis=0)

    def adj(y):
        return np.concatenate([op.adjoint(y[a:b]) for op, a, b in zip(maps, rcuts[:-1], rcuts[1:])], axis=0)

    mats = [op.matrix for op in maps]
    matrix = sp.block_diag(mats, format="csr") if all(m is not None for m in mats) else None
    return LinearMap(int(rcuts[-1]), int(ccuts[-1]), fwd, adj, matrix=matrix)


# --- diagnostics ---------------------------------------------------------------


def adjoint_mismatch(A: LinearMap, n_probes: int = 20, seed: int = 0) -> float:
    """Largest relative defect of <Av, u> = <v, A^T u> over random probes."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_probes):
        v = rng.standard_normal(A.ncols)
        u = rng.standard_normal(A.nrows)
        Av = A.forward(v)
        Atu = A.adjoint(u)
        scale = max(np.linalg.norm(Av) * np.linalg.norm(u), np.linalg.norm(v) * np.linalg.norm(Atu), 1e-300)
        worst = max(worst, abs(Av @ u - v @ Atu) / scale)
    return worst


def symmetry_mismatch(M: SpdMap, n_probes: int = 20, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_probes):
        x = rng.standard_normal(M.dim)
        y = rng.standard_normal(M.dim)
        Mx, My = M.apply(x), M.apply(y)
        scale = max(np.linalg.norm(Mx) * np.linalg.norm(y), 1e-300)
        worst = max(worst, abs(Mx @ y - x @ My) / scale)
    return worst


def min_rayleigh(M: SpdMap, n_probes: int = 20, seed: int = 0) -> float:
    """Smallest ``x^T M x / x^T x`` over random probes."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((M.dim, n_probes))
    return float(np.min(np.einsum("ij,ij->j", X, M.apply(X)) / np.einsum("ij,ij->j", X, X)))


class CallCounter(Counter):
    """Tally of operator applications, keyed by a label per callable."""


def counting_map(A: LinearMap, counter: CallCounter, label: str = "A") -> LinearMap:
    def fwd(x):
        counter[label] += 1
        return A.forward(x)

    def adj(y):
        counter[label + "T"] += 1
        return A.adjoint(y)

    return LinearMap(A.nrows, A.ncols, fwd, adj, matrix=A.matrix)


def counting_spd(M: SpdMap, counter: CallCounter, label: str) -> SpdMap:
    def wrap(f, key):
        if f is None:
            return None

        def run(x):
            counter[key] += 1
            return f(x)

        return run

    return SpdMap(
        M.dim,
        wrap(M.apply, label),
        wrap(M.apply_inverse, label + "_inv"),
        wrap(M.apply_sqrt, label + "_sqrt"),
        matrix=M.matrix,
        diag=M.diag,
    )
