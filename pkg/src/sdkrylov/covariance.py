"""Prior covariance construction: kernels, grids, Kronecker products, sampling."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, eigsh
from scipy.spatial.distance import cdist
from scipy.special import gammaln, kve

from .operators import DefinitenessError, SpdMap, kron_apply

EARTH_RADIUS_KM = 6371.0
_HALF_INTEGER_NU = (0.5, 1.5, 2.5)


def _check_positive(**kw):
    for name, val in kw.items():
        if not (val > 0 and np.isfinite(val)):
            raise ValueError(f"{name} must be positive, got {val}")


def matern_general(d, nu: float, ell: float):
    """Matern correlation through the modified Bessel function K_nu.

    Evaluated in log space with the exponentially scaled ``kve`` so that
    neither small nor large arguments overflow.
    """
    _check_positive(nu=nu, ell=ell)
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distances must be nonnegative")
    z = np.sqrt(2.0 * nu) * d / ell
    out = np.ones_like(z)
    pos = z > 0
    zp = z[pos]
    with np.errstate(divide="ignore"):
        logk = (1.0 - nu) * np.log(2.0) - gammaln(nu) + nu * np.log(zp) + np.log(kve(nu, zp)) - zp
    out[pos] = np.exp(logk)
    return out if out.ndim else float(out)


def matern_kernel(d, nu: float, ell: float):
    """Matern correlation with smoothness ``nu`` and length scale ``ell``.

    ``nu`` in {1/2, 3/2, 5/2} uses the closed forms; anything else goes
    through :func:`matern_general`.
    """
    _check_positive(nu=nu, ell=ell)
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distances must be nonnegative")
    if nu == 0.5:
        out = np.exp(-d / ell)
    elif nu == 1.5:
        r = np.sqrt(3.0) * d / ell
        out = (1.0 + r) * np.exp(-r)
    elif nu == 2.5:
        r = np.sqrt(5.0) * d / ell
        out = (1.0 + r + r * r / 3.0) * np.exp(-r)
    else:
        return matern_general(d, nu, ell)
    return out if out.ndim else float(out)


def cubic_spherical_kernel(d, theta: float):
    """Compactly supported kernel ``1 - 1.5 r + 0.5 r^3`` for ``r = d/theta <= 1``."""
    _check_positive(theta=theta)
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distances must be nonnegative")
    r = d / theta
    out = np.where(r <= 1.0, 1.0 - 1.5 * r + 0.5 * r**3, 0.0)
    return out if out.ndim else float(out)


def great_circle_distance(p1, p2, radius: float = EARTH_RADIUS_KM):
    """Haversine distance in km between ``(lat, lon)`` points given in degrees.

    Accepts single points or arrays of shape ``(..., 2)``.
    """
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    for p in (p1, p2):
        lat, lon = p[..., 0], p[..., 1]
        if np.any(np.abs(lat) > 90) or np.any(lon < -180) or np.any(lon >= 360):
            raise ValueError("latitude must lie in [-90, 90] and longitude in [-180, 360)")
    lat1, lon1 = np.radians(p1[..., 0]), np.radians(p1[..., 1])
    lat2, lon2 = np.radians(p2[..., 0]), np.radians(p2[..., 1])
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    out = 2.0 * radius * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class KernelSpec:
    family: str = "matern"
    nu: float = 2.5
    ell: float = 0.05
    theta: float = 1.0

    def __post_init__(self):
        if self.family not in ("matern", "cubic_spherical"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        _check_positive(nu=self.nu, ell=self.ell, theta=self.theta)

    def __call__(self, d):
        if self.family == "matern":
            return matern_kernel(d, self.nu, self.ell)
        return cubic_spherical_kernel(d, self.theta)


@dataclass(frozen=True)
class GridGeometry:
    """Points ``zeta_j`` on which a field is represented.

    ``kind`` is informational (``unit_square``, ``lat_lon``,
    ``unit_cube_spacetime``, ``line``); ``distance`` selects the metric.
    """

    kind: str
    points: np.ndarray = field(repr=False)
    distance: str = "euclidean"
    shape: tuple = ()

    def __post_init__(self):
        if self.distance not in ("euclidean", "great_circle"):
            raise ValueError(f"unknown distance {self.distance!r}")
        if len(self.points) == 0:
            raise ValueError("grid is empty")

    @property
    def n(self) -> int:
        return len(self.points)

    def pairwise(self, rows=slice(None)) -> np.ndarray:
        P = np.asarray(self.points, dtype=float)
        if P.ndim == 1:
            P = P[:, None]
        if self.distance == "great_circle":
            return great_circle_distance(P[rows][:, None, :], P[None, :, :])
        return cdist(P[rows], P)

    def dist(self, i: int, j: int) -> float:
        return float(self.pairwise(slice(i, i + 1))[0, j])

    @classmethod
    def line(cls, n: int, length: float = 1.0):
        return cls("line", np.linspace(0.0, length, n)[:, None], shape=(n,))

    @classmethod
    def unit_square(cls, side: int):
        """``side x side`` pixel centers on [0,1]^2, row-major (column index fastest)."""
        t = np.linspace(0.0, 1.0, side)
        yy, xx = np.meshgrid(t, t, indexing="ij")
        return cls("unit_square", np.column_stack([xx.ravel(), yy.ravel()]), shape=(side, side))

    @classmethod
    def unit_cube_spacetime(cls, side: int, n_frames: int):
        """(x, y, t) with every axis scaled to [0, 1]; spatial index fastest."""
        s = np.linspace(0.0, 1.0, side)
        t = np.linspace(0.0, 1.0, n_frames) if n_frames > 1 else np.zeros(1)
        tt, yy, xx = np.meshgrid(t, s, s, indexing="ij")
        pts = np.column_stack([xx.ravel(), yy.ravel(), tt.ravel()])
        return cls("unit_cube_spacetime", pts, shape=(n_frames, side, side))

    @classmethod
    def lat_lon(cls, lats, lons):
        la, lo = np.meshgrid(np.asarray(lats, float), np.asarray(lons, float), indexing="ij")
        pts = np.column_stack([la.ravel(), lo.ravel()])
        return cls("lat_lon", pts, distance="great_circle", shape=la.shape)


def covariance_matrix(grid: GridGeometry, spec: KernelSpec, jitter: float = 0.0, block: int = 512) -> np.ndarray:
    """Dense ``Q_ij = kernel(dist(zeta_i, zeta_j)) + jitter * 1{i=j}``, built row block by row block."""
    n = grid.n
    Q = np.empty((n, n))
    for a in range(0, n, block):
        b = min(a + block, n)
        Q[a:b] = spec(grid.pairwise(slice(a, b)))
    if jitter:
        Q[np.diag_indices(n)] += jitter
    return Q


def build_covariance(grid: GridGeometry, spec: KernelSpec, jitter: Optional[float] = None, factorize: bool = True) -> SpdMap:
    """Dense prior covariance operator on ``grid``.

    ``jitter=None`` adds ``1e-10 * max(diag)``.  With ``factorize`` the
    Cholesky factor is computed up front and backs ``apply_sqrt`` and
    ``apply_inverse``; a failure raises :class:`DefinitenessError` with an
    estimate of the smallest eigenvalue.  Large operators used only for
    matvecs can skip the O(n^3) factorization.
    """
    if jitter is not None and jitter < 0:
        raise ValueError("jitter must be nonnegative")
    Q = covariance_matrix(grid, spec)
    if jitter is None:
        jitter = 1e-10 * float(np.max(np.diag(Q)))
    if jitter:
        Q[np.diag_indices(grid.n)] += jitter
    if not factorize:
        return SpdMap(grid.n, lambda x: Q @ x, matrix=Q)
    try:
        L = sla.cholesky(Q, lower=True)
    except np.linalg.LinAlgError as exc:
        lam = eigsh(Q, k=1, which="SA", return_eigenvectors=False)[0] if grid.n > 500 else np.linalg.eigvalsh(Q)[0]
        raise DefinitenessError(f"covariance is not positive definite (smallest eigenvalue ~ {lam:.3e})") from exc
    return SpdMap(grid.n, lambda x: Q @ x, lambda x: sla.cho_solve((L, True), x), lambda z: L @ z, matrix=Q)


def spatiotemporal_q(Qt: SpdMap, Qs: SpdMap, lambda_scale: float = 1.0) -> SpdMap:
    """``lambda^-2 (Qt kron Qs)`` applied through :func:`kron_apply`."""
    if lambda_scale == 0:
        raise ValueError("lambda_scale must be nonzero")
    c = lambda_scale ** -2.0
    fwd = lambda x: c * kron_apply(Qt, Qs, x)
    inv = None
    if Qt.apply_inverse is not None and Qs.apply_inverse is not None:
        ti, si = SpdMap(Qt.dim, Qt.apply_inverse), SpdMap(Qs.dim, Qs.apply_inverse)
        inv = lambda x: kron_apply(ti, si, x) / c
    sqrt = None
    if Qt.apply_sqrt is not None and Qs.apply_sqrt is not None:
        # Lt kron Ls is a square root of Qt kron Qs; it need not be symmetric.
        ts, ss = SpdMap(Qt.dim, Qt.apply_sqrt), SpdMap(Qs.dim, Qs.apply_sqrt)
        sqrt = lambda z: np.sqrt(c) * kron_apply(ts, ss, z)
    return SpdMap(Qt.dim * Qs.dim, fwd, inv, sqrt)


def kl_modes(Q: SpdMap, rank: int):
    """Leading ``rank`` eigenpairs of ``Q`` (descending), computed matrix-free."""
    n = Q.dim
    if rank >= n - 1:
        w, V = np.linalg.eigh(Q.todense())
        w, V = w[::-1][:rank], V[:, ::-1][:, :rank]
    else:
        op = LinearOperator((n, n), matvec=Q.apply, dtype=float)
        w, V = eigsh(op, k=rank, which="LA", v0=np.ones(n))
        order = np.argsort(w)[::-1]
        w, V = w[order], V[:, order]
    # fix eigenvector signs so draws are reproducible across LAPACK builds
    sgn = np.sign(V[np.argmax(np.abs(V), axis=0), np.arange(V.shape[1])])
    return np.clip(w, 0.0, None), V * sgn


def sample_smooth_field(Q: SpdMap, mean=None, seed: int = 0, rank: Optional[int] = None) -> np.ndarray:
    """Draw ``mean + Q^{1/2} z`` with ``z`` standard normal from ``seed``.

    With ``rank`` the draw uses a truncated Karhunen-Loeve expansion over
    the ``rank`` leading eigenpairs instead of the full square root.
    """
    rng = np.random.default_rng(seed)
    mean = np.zeros(Q.dim) if mean is None else np.asarray(mean, dtype=float)
    if rank is not None:
        w, V = kl_modes(Q, rank)
        return mean + V @ (np.sqrt(w) * rng.standard_normal(rank))
    if Q.apply_sqrt is None:
        raise ValueError("covariance has no square-root capability; pass rank= for a KL draw")
    return mean + Q.apply_sqrt(rng.standard_normal(Q.dim))
