"""Synthetic test problems: smooth-plus-sparse truths, forward operators,
noise and error metrics.

The case studies are desk-scale stand-ins: a Gaussian-footprint operator
replaces the atmospheric transport matrix, and a sparse spherical-means
operator on a detector ring replaces the photoacoustic projector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .covariance import GridGeometry, KernelSpec, build_covariance, kl_modes, sample_smooth_field
from .operators import LinearMap, block_diag_maps, diag_map, identity, matrix_map
from .solvers import InverseProblem

# noise standard deviation reported for the 50% noise flux experiment; their data is not distributable
SIGMA_CASE3 = 0.5648

MAX_UNKNOWNS = 10**6


@dataclass
class TestProblem:
    problem: InverseProblem
    s_true: np.ndarray
    s1_true: np.ndarray
    s2_true: np.ndarray
    seed: int
    descriptor: dict = field(default_factory=dict)
    grid_shape: tuple = ()

    __test__ = False  # not a pytest class


def rel_error(s_est, s_true) -> float:
    nt = np.linalg.norm(s_true)
    if nt == 0:
        raise ValueError("relative error undefined for a zero truth")
    return float(np.linalg.norm(np.asarray(s_est) - s_true) / nt)


def add_noise(A: LinearMap, s_true, nlevel: float, seed: int = 0):
    """``d = A s_true + sigma * nrand`` with ``sigma = nlevel ||A s_true|| / ||nrand||``.

    Returns ``(d, R, sigma)`` with ``R = sigma^2 I`` (``I`` when noiseless).
    """
    if nlevel < 0:
        raise ValueError("nlevel must be nonnegative")
    b = A.forward(np.asarray(s_true, dtype=float))
    if nlevel == 0:
        return b.copy(), identity(A.nrows), 0.0
    nrand = np.random.default_rng(seed).standard_normal(A.nrows)
    sigma = nlevel * np.linalg.norm(b) / np.linalg.norm(nrand)
    return b + sigma * nrand, diag_map(np.full(A.nrows, sigma**2)), float(sigma)


def gen_smooth_plus_spikes(grid: GridGeometry, smooth_spec: KernelSpec, n_spikes: int, amp_range=(2.0, 8.0),
                           seed: int = 0, relative_amp: bool = True, Q=None):
    """Smooth Gaussian-process draw plus ``n_spikes`` positive spikes.

    With ``relative_amp`` the amplitude range is in units of the smooth
    field's standard deviation.  The largest spike sits exactly at the top
    of the range.
    """
    lo, hi = amp_range
    if hi < lo:
        raise ValueError("amp_range must satisfy lo <= hi")
    if not 0 <= n_spikes <= grid.n:
        raise ValueError("n_spikes must lie in [0, n]")
    Q = build_covariance(grid, smooth_spec) if Q is None else Q
    s1 = sample_smooth_field(Q, seed=seed)
    s2 = np.zeros(grid.n)
    if n_spikes:
        rng = np.random.default_rng([seed, 1])
        scale = float(np.std(s1)) if relative_amp else 1.0
        idx = rng.choice(grid.n, size=n_spikes, replace=False)
        amps = rng.uniform(lo, hi, size=n_spikes)
        amps[0] = hi
        s2[idx] = scale * amps
    return s1, s2


def gen_footprint_operator(m: int, grid: GridGeometry, width: float, seed: int = 0) -> LinearMap:
    """Dense ``m x n`` operator whose rows are Gaussian footprints.

    Row ``i`` is ``exp(-|zeta_j - c_i|^2 / (2 width^2))`` around a grid point
    ``c_i`` drawn with ``seed``, rescaled to unit 1-norm.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if not width > 0:
        raise ValueError("width must be positive")
    rng = np.random.default_rng(seed)
    centers = rng.integers(0, grid.n, size=m)
    D = grid.pairwise(centers)
    # subtract the row minimum so tiny widths do not underflow to an all-zero row
    E = np.exp(-(D**2 - np.min(D, axis=1, keepdims=True) ** 2) / (2.0 * width**2))
    E /= E.sum(axis=1, keepdims=True)
    return matrix_map(E)


def _bilinear(x, y, side):
    """Pixel indices and weights for points in pixel coordinates ``[0, side-1]^2``."""
    j0 = np.clip(np.floor(x).astype(int), 0, side - 2)
    i0 = np.clip(np.floor(y).astype(int), 0, side - 2)
    fx, fy = x - j0, y - i0
    idx = [i0 * side + j0, i0 * side + j0 + 1, (i0 + 1) * side + j0, (i0 + 1) * side + j0 + 1]
    wts = [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy]
    return idx, wts


def gen_spherical_means(img_side: int, n_angles: int, angle_offset: float = 0.0, n_radii: Optional[int] = None) -> LinearMap:
    """Circular-means operator for an image on ``[-1, 1]^2``.

    View centers sit on the circle of radius ``sqrt(2)`` at ``n_angles``
    angles equally spaced in ``[offset, offset + 340]`` degrees; each view
    integrates the bilinearly interpolated image over circles with radii
    ``linspace(0, 2 sqrt(2), n_radii)``.  Row ``a * n_radii + b`` is view
    ``a``, radius ``b``.  Image index ``i * side + j`` holds the pixel at
    ``(x_j, y_i)``.
    """
    if img_side < 8:
        raise ValueError("img_side must be >= 8")
    side = img_side
    n_radii = int(np.ceil(side * np.sqrt(2))) if n_radii is None else n_radii
    h = 2.0 / (side - 1)
    radii = np.linspace(0.0, 2.0 * np.sqrt(2.0), n_radii)
    angles = np.deg2rad(np.linspace(angle_offset, angle_offset + 340.0, n_angles))
    rows, cols, vals = [], [], []
    for a, th in enumerate(angles):
        cx, cy = np.sqrt(2.0) * np.cos(th), np.sqrt(2.0) * np.sin(th)
        for b, r in enumerate(radii):
            if r == 0.0:
                continue
            n_pts = max(16, int(np.ceil(4.0 * 2.0 * np.pi * r / h)))
            phi = (np.arange(n_pts) + 0.5) * (2.0 * np.pi / n_pts)
            px, py = cx + r * np.cos(phi), cy + r * np.sin(phi)
            inside = (np.abs(px) <= 1.0) & (np.abs(py) <= 1.0)
            if not inside.any():
                continue
            gx, gy = (px[inside] + 1.0) / h, (py[inside] + 1.0) / h
            ds = 2.0 * np.pi * r / n_pts
            idx, wts = _bilinear(gx, gy, side)
            row = a * n_radii + b
            for ii, ww in zip(idx, wts):
                rows.append(np.full(ii.size, row))
                cols.append(ii)
                vals.append(ds * ww)
    m = n_angles * n_radii
    if rows:
        S = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, side * side))
    else:
        S = sp.coo_matrix((m, side * side))
    return matrix_map(S.tocsr())


def _finish(A, Q, s1, s2, nlevel, seed, descriptor, grid_shape):
    s_true = s1 + s2
    d, R, sigma = add_noise(A, s_true, nlevel, seed=seed + 7919)
    descriptor = dict(descriptor, sigma=sigma, m=A.nrows, n=A.ncols)
    return TestProblem(InverseProblem(A, R, Q, d), s_true, s1, s2, seed, descriptor, grid_shape)


def gen_case1(side: int = 32, seed: int = 0, nlevel: float = 0.04, m_frac: float = 0.3, n_spikes: int = 10,
              amp_range=(5.0, 20.0), truth_spec: KernelSpec = KernelSpec("matern", 2.5, 0.05),
              recon_spec: KernelSpec = KernelSpec("matern", 2.5, 0.05), footprint_width: float = 0.015) -> TestProblem:
    """Footprint-operator problem on a ``side x side`` unit-square grid."""
    grid = GridGeometry.unit_square(side)
    s1, s2 = gen_smooth_plus_spikes(grid, truth_spec, n_spikes, amp_range, seed=seed)
    m = max(1, int(round(m_frac * grid.n)))
    A = gen_footprint_operator(m, grid, footprint_width, seed=seed + 101)
    Q = build_covariance(grid, recon_spec)
    desc = dict(case="case1", side=side, seed=seed, nlevel=nlevel, m_frac=m_frac, n_spikes=n_spikes,
                amp_range=tuple(amp_range), amp_units="std(s1)", truth_nu=truth_spec.nu, truth_ell=truth_spec.ell,
                recon_nu=recon_spec.nu, recon_ell=recon_spec.ell, footprint_width=footprint_width)
    return _finish(A, Q, s1, s2, nlevel, seed, desc, (side, side))


def _cluster_spikes(side, n_clusters, per_cluster, radius, rng):
    """Pixel indices of clustered spikes, distinct, inside the image."""
    chosen = []
    for _ in range(n_clusters):
        ci, cj = rng.integers(radius, side - radius, size=2)
        offsets = [(di, dj) for di in range(-radius, radius + 1) for dj in range(-radius, radius + 1)
                   if di * di + dj * dj <= radius * radius]
        order = rng.permutation(len(offsets))
        picked = 0
        for o in order:
            p = (ci + offsets[o][0]) * side + (cj + offsets[o][1])
            if p not in chosen:
                chosen.append(int(p))
                picked += 1
            if picked == per_cluster:
                break
    return np.array(chosen)


DYNAMIC_SPEC_DEFAULTS = dict(truth_nu=0.2, truth_ell=0.2, kl_rank=30, recon_nu=0.5, recon_ell=0.4, n_clusters=3,
                             per_cluster=5, cluster_radius=3, amp_range=(2.0, 8.0))


def gen_dynamic_problem(n_frames: int = 8, img_side: int = 32, n_angles_per_frame: int = 6, specs: Optional[dict] = None,
                        seed: int = 0, nlevel: float = 0.02) -> TestProblem:
    """Image sequence observed through per-frame circular-means operators.

    Frame ``t`` (1-based) uses view angles starting at ``t`` degrees.  The
    smooth part is a truncated KL draw of an isotropic Matern field on the
    unit space-time cube; the sparse part is a static set of clustered
    spikes repeated in every frame.  Unknowns are ordered frame by frame,
    pixels row-major within a frame.
    """
    unknown = set(specs or {}) - set(DYNAMIC_SPEC_DEFAULTS)
    if unknown:
        raise ValueError(f"unknown dynamic-problem settings: {sorted(unknown)}")
    spec = dict(DYNAMIC_SPEC_DEFAULTS, **(specs or {}))
    n = n_frames * img_side**2
    if n > MAX_UNKNOWNS:
        raise MemoryError(f"{n} unknowns exceeds the limit of {MAX_UNKNOWNS}")
    grid = GridGeometry.unit_cube_spacetime(img_side, n_frames)
    Qtruth = build_covariance(grid, KernelSpec("matern", spec["truth_nu"], spec["truth_ell"]), factorize=False)
    rank = min(spec["kl_rank"], n - 1)
    w, V = kl_modes(Qtruth, rank)
    del Qtruth
    rng = np.random.default_rng(seed)
    s1 = V @ (np.sqrt(w) * rng.standard_normal(rank))
    pix = _cluster_spikes(img_side, spec["n_clusters"], spec["per_cluster"], spec["cluster_radius"], rng)
    lo, hi = spec["amp_range"]
    amps = rng.uniform(lo, hi, size=pix.size) * float(np.std(s1))
    amps[0] = hi * float(np.std(s1))
    frame = np.zeros(img_side**2)
    frame[pix] = amps
    s2 = np.tile(frame, n_frames)
    A = block_diag_maps(*[gen_spherical_means(img_side, n_angles_per_frame, angle_offset=t + 1.0) for t in range(n_frames)])
    Q = build_covariance(grid, KernelSpec("matern", spec["recon_nu"], spec["recon_ell"]), factorize=False)
    desc = dict(case="case2", n_frames=n_frames, side=img_side, n_angles=n_angles_per_frame, seed=seed,
                nlevel=nlevel, amp_units="std(s1)", **{k: v for k, v in spec.items()})
    return _finish(A, Q, s1, s2, nlevel, seed, desc, (n_frames, img_side, img_side))


def gen_custom(n: int = 64, m: int = 48, seed: int = 0, nlevel: float = 0.01, n_spikes: int = 3,
               smooth_amp: float = 1.0, kernel: KernelSpec = KernelSpec("matern", 1.5, 0.1)) -> TestProblem:
    """Small 1-D problem with a random Gaussian forward matrix."""
    grid = GridGeometry.line(n)
    Q = build_covariance(grid, kernel)
    s1, s2 = gen_smooth_plus_spikes(grid, kernel, n_spikes, seed=seed, Q=Q)
    s1 = smooth_amp * s1
    A = matrix_map(np.random.default_rng([seed, 2]).standard_normal((m, n)) / np.sqrt(m))
    desc = dict(case="custom", n=n, m=m, seed=seed, nlevel=nlevel, n_spikes=n_spikes, smooth_amp=smooth_amp,
                nu=kernel.nu, ell=kernel.ell)
    return _finish(A, Q, s1, s2, nlevel, seed, desc, (n,))


# --- persistence -------------------------------------------------------------------


def rebuild_prior(desc: dict):
    """Prior covariance of a generated problem, from its descriptor."""
    case = desc["case"]
    if case == "case1":
        return build_covariance(GridGeometry.unit_square(int(desc["side"])),
                                KernelSpec("matern", float(desc["recon_nu"]), float(desc["recon_ell"])))
    if case == "case2":
        grid = GridGeometry.unit_cube_spacetime(int(desc["side"]), int(desc["n_frames"]))
        return build_covariance(grid, KernelSpec("matern", float(desc["recon_nu"]), float(desc["recon_ell"])),
                                factorize=False)
    if case == "custom":
        return build_covariance(GridGeometry.line(int(desc["n"])),
                                KernelSpec("matern", float(desc["nu"]), float(desc["ell"])))
    raise ValueError(f"unknown case {case!r}")


def save_problem(tp: TestProblem, path) -> None:
    """Write ``tp`` to an ``SDKP1`` container.  ``Q`` is not stored; it is
    rebuilt from the descriptor on load."""
    from .io import write_container

    p = tp.problem
    arrays = {}
    M = p.A.matrix if p.A.matrix is not None else p.A.todense()
    if sp.issparse(M):
        C = sp.coo_matrix(M)
        arrays.update(A_rows=C.row, A_cols=C.col, A_vals=C.data, A_shape=np.array(C.shape))
    else:
        arrays["A"] = np.asarray(M)
    R = p.R.diag if p.R.diag is not None else np.diag(p.R.todense())
    arrays.update(d=p.d, R_diag=R, mu1=p.mu1, mu2=p.mu2, s_true=tp.s_true, s1_true=tp.s1_true, s2_true=tp.s2_true,
                  grid_shape=np.array(tp.grid_shape, dtype=float))
    meta = {k: repr(v) for k, v in tp.descriptor.items()}
    meta["seed"] = repr(tp.seed)
    write_container(path, arrays, meta)


def load_problem(path) -> TestProblem:
    import ast

    from .io import read_container

    arrays, meta = read_container(path)
    desc = {k: ast.literal_eval(v) for k, v in meta.items()}
    if "A" in arrays:
        A = matrix_map(arrays["A"])
    else:
        shape = tuple(int(x) for x in arrays["A_shape"])
        A = matrix_map(sp.csr_matrix((arrays["A_vals"], (arrays["A_rows"].astype(int), arrays["A_cols"].astype(int))),
                                     shape=shape))
    prob = InverseProblem(A, diag_map(arrays["R_diag"]), rebuild_prior(desc), arrays["d"], arrays["mu1"], arrays["mu2"])
    seed = int(desc["seed"])
    return TestProblem(prob, arrays["s1_true"] + arrays["s2_true"], arrays["s1_true"], arrays["s2_true"], seed, desc,
                       tuple(int(x) for x in arrays["grid_shape"]))
