"""Holomorphic and antiholomorphic integrating factors in the scalar case.

Given ``f = F(x) + alpha_j(x) v^j`` we build ``w`` on the SM grid with
``X w = -f`` and ``w`` holomorphic (only modes ``k >= 0``) or
antiholomorphic.  The construction follows the constructive direction of the
characterization of such ``f``:

1. split ``alpha = alpha_s + dp`` with ``p = 0`` on the boundary;
2. with ``b = F`` the odd transport solution ``(u^F)_-`` satisfies
   ``X (u^F)_- = -F``;
3. pick boundary data ``h`` with ``*d (h_psi)_0 = -i sigma alpha_s`` and
   ``h'`` with ``(Xperp h'_psi)_0 = -(Xperp u^F)_0``, where ``sigma = +1``
   for holomorphic and ``-1`` for antiholomorphic;
4. ``w_hat = (h_psi)_+ + (u^F)_- + (h'_psi)_-`` and
   ``w = (Id + i sigma H) w_hat - p``.

``h_psi`` is the extension of boundary data constant along geodesics.
Everything is scalar.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import cumulative_simpson
from scipy.linalg import cho_factor, cho_solve

from . import bundle
from .bundle import SMGrid, SMField, metric_arrays
from .geometry import TWO_PI, phase_to_entry, shoot
from .splines import SplineBasis, ray_integrals
from .transport import BoundaryGrid


class HoloError(RuntimeError):
    """Resolution insufficient or a solve failed."""


# ---------------------------------------------------------------------------
# grid bookkeeping
# ---------------------------------------------------------------------------

def disk_index(grid: SMGrid):
    """Boolean mask of grid points in the closed unit disk."""
    X1, X2 = grid.mesh()
    return X1**2 + X2**2 <= 1.0 + 1e-12


@dataclass
class SMRays:
    """Backtraced entry data of every SM grid point in the closed disk.

    ``beta, mu`` have shape ``(N, ntheta)`` with ``N`` closed-disk points in
    C order; ``s`` is the time since entry and ``acc`` holds integrals of the
    requested scalar sources over the backward path, i.e. ``u^F(x, -v)``.
    """

    grid: SMGrid
    disk: np.ndarray
    beta: np.ndarray
    mu: np.ndarray
    s: np.ndarray
    acc: list


def backtrace_grid(metric, grid: SMGrid, dt=4e-3, sources=()) -> SMRays:
    disk = disk_index(grid)
    X1, X2 = grid.mesh()
    x1 = np.repeat(X1[disk], grid.ntheta)
    x2 = np.repeat(X2[disk], grid.ntheta)
    th = np.tile(grid.theta, int(disk.sum()))
    k = len(sources)
    extra = y0 = None
    if k:
        def extra(a1, a2, at, y):
            return np.stack([np.asarray(F(a1, a2), dtype=complex) for F in sources], axis=1)
        y0 = np.zeros((x1.size, k), dtype=complex)
    r = shoot(metric, x1, x2, th + np.pi, dt=dt, extra=extra, y0=y0)
    beta, mu = phase_to_entry(r.x1, r.x2, r.theta + np.pi)
    shape = (int(disk.sum()), grid.ntheta)
    acc = [r.y[:, j].reshape(shape) for j in range(k)] if k else []
    return SMRays(grid, disk, beta.reshape(shape), mu.reshape(shape), r.tau.reshape(shape), acc)


def _lagrange4(t):
    """Cubic Lagrange weights on nodes -1, 0, 1, 2 at offset ``t`` in [0, 1]."""
    return np.stack([-t * (t - 1) * (t - 2) / 6.0,
                     (t + 1) * (t - 1) * (t - 2) / 2.0,
                     -(t + 1) * t * (t - 2) / 2.0,
                     (t + 1) * t * (t - 1) / 6.0], axis=-1)


def boundary_interp_matrix(bgrid: BoundaryGrid, beta, mu, extrapolate=True) -> sp.csr_matrix:
    """Sparse weights interpolating boundary samples at ``(beta, mu)``.

    Periodic cubic in ``beta`` and cubic in ``mu``.  Glancing directions
    beyond the sampled ``mu`` range use the end cubic (``extrapolate``) or the
    nearest sample.
    """
    beta = np.asarray(beta, dtype=float).ravel()
    mu = np.asarray(mu, dtype=float).ravel()
    nb, nm = bgrid.n_beta, bgrid.n_mu
    fb = np.mod(beta, TWO_PI) / (TWO_PI / nb)
    ib = np.floor(fb).astype(int)
    wb = _lagrange4(fb - ib)
    mus = bgrid.mu
    if not extrapolate:
        mu = np.clip(mu, mus[0], mus[-1])
    fm = (mu - mus[0]) / bgrid.dmu
    if nm >= 4:
        im = np.clip(np.floor(fm).astype(int), 1, nm - 3)
        wm = _lagrange4(fm - im)
        om = np.arange(-1, 3)
    else:
        im = np.clip(np.floor(fm).astype(int), 0, max(nm - 2, 0))
        t = fm - im
        wm = np.stack([1 - t, t], axis=-1) if nm > 1 else np.ones((mu.size, 1))
        om = np.arange(wm.shape[1])
    ob = np.arange(-1, 3)
    cols_b = np.mod(ib[:, None] + ob[None, :], nb)            # (N, 4)
    cols_m = np.clip(im[:, None] + om[None, :], 0, nm - 1)     # (N, q)
    cols = (cols_b[:, :, None] * nm + cols_m[:, None, :]).reshape(beta.size, -1)
    vals = (wb[:, :, None] * wm[:, None, :]).reshape(beta.size, -1)
    rows = np.repeat(np.arange(beta.size), cols.shape[1])
    return sp.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(beta.size, nb * nm))


# ---------------------------------------------------------------------------
# adjoint operator
# ---------------------------------------------------------------------------

@dataclass
class AdjointOperator:
    """Dense maps from boundary data to functions on the closed-disk grid points.

    ``M0 h = (h_psi)_0``, ``Mc h = (cos(theta) h_psi)_0`` and
    ``Ms h = (sin(theta) h_psi)_0``.  Rows follow :func:`disk_index`.
    """

    grid: SMGrid
    bgrid: BoundaryGrid
    M0: np.ndarray
    Mc: np.ndarray
    Ms: np.ndarray
    key: str = ""
    dt: float = 4e-3

    @property
    def disk(self):
        return disk_index(self.grid)

    def apply(self, h) -> np.ndarray:
        """``I* h`` as an ``(nx, nx)`` array, zero outside the disk."""
        out = np.zeros(self.disk.shape, dtype=np.result_type(h, float))
        out[self.disk] = self.M0 @ h
        return out

    def to_csv(self, path):
        write_matrix_csv(path, self.M0)

    @staticmethod
    def read_matrix_csv(path):
        with open(path) as fh:
            head = fh.readline().split()
            shape = (int(head[2]), int(head[3]))
            M = np.loadtxt(fh, delimiter=",", ndmin=2)
        return M.reshape(shape)


def write_matrix_csv(path, M):
    """Dense matrix as CSV with a ``# shape r c`` header, written atomically."""
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(f"# shape {M.shape[0]} {M.shape[1]}\n")
        np.savetxt(fh, M, delimiter=",", fmt="%.17g")
    os.replace(tmp, path)


def operator_key(metric, grid, bgrid, dt) -> str:
    blob = json.dumps({"metric": metric.describe(), "grid": [grid.nx, grid.ntheta, grid.kmax],
                       "bgrid": [bgrid.n_beta, bgrid.n_mu, bgrid.delta], "dt": dt},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@lru_cache(maxsize=8)
def _rays_cached(metric, grid, dt):
    return backtrace_grid(metric, grid, dt)


def assemble_adjoint(metric, grid: SMGrid, bgrid: BoundaryGrid, dt=4e-3, cache_dir=None,
                     rays: SMRays | None = None) -> AdjointOperator:
    """Assemble the adjoint maps, optionally cached on disk as CSV."""
    key = operator_key(metric, grid, bgrid, dt)
    paths = None
    if cache_dir is not None:
        paths = [os.path.join(cache_dir, f"adjoint_{key}_{nm}.csv") for nm in ("M0", "Mc", "Ms")]
        if all(os.path.exists(p) for p in paths):
            mats = [AdjointOperator.read_matrix_csv(p) for p in paths]
            return AdjointOperator(grid, bgrid, *mats, key=key, dt=dt)
    if rays is None:
        rays = _rays_cached(metric, grid, dt)
    N, nt = rays.beta.shape
    P = boundary_interp_matrix(bgrid, rays.beta, rays.mu)  # (N*nt, Nb)
    avg = sp.kron(sp.eye(N), np.ones((1, nt)) / nt, format="csr")
    c = np.tile(np.cos(grid.theta), N)
    s = np.tile(np.sin(grid.theta), N)
    M0 = (avg @ P).toarray()
    Mc = (avg @ sp.diags(c) @ P).toarray()
    Ms = (avg @ sp.diags(s) @ P).toarray()
    op = AdjointOperator(grid, bgrid, M0, Mc, Ms, key=key, dt=dt)
    if paths is not None:
        os.makedirs(cache_dir, exist_ok=True)
        for p, M in zip(paths, (M0, Mc, Ms)):
            write_matrix_csv(p, M)
    return op


def adjoint_Istar(metric, h, grid=None, bgrid=None, op=None, dt=4e-3):
    """``I* h = (h_psi)_0`` on the closed-disk grid points."""
    if op is None:
        op = assemble_adjoint(metric, grid, bgrid, dt)
    return op.apply(np.asarray(h))


def ray_transform_matrix(metric, grid: SMGrid, bgrid: BoundaryGrid, dt=4e-3,
                         components=("0",)) -> sp.csr_matrix:
    """Unattenuated transform of grid functions by bilinear interpolation along rays.

    Rows are boundary samples, columns closed-disk grid points.  Each entry
    of ``components`` adds a column block: ``"0"`` integrates a function,
    ``"1"`` and ``"2"`` integrate ``g dx^j(v) = e^{-lam} g v^j`` (cosine and
    sine of the path angle).
    """
    return _ray_matrices(metric, grid, bgrid, dt, tuple(components))


@lru_cache(maxsize=8)
def _ray_matrices(metric, grid, bgrid, dt, components):
    from .geometry import boundary_to_phase

    b, m = bgrid.points()
    x1, x2, th = boundary_to_phase(b, m)
    res = shoot(metric, x1, x2, th, dt=dt, record=True)
    disk = disk_index(grid)
    nd = int(disk.sum())
    col = -np.ones(disk.shape, dtype=int)
    col[disk] = np.arange(nd)
    rows, cols, vals = [], [], []
    for r, path in enumerate(res.paths):
        t, p1, p2, pth, _ = path
        wt = np.zeros_like(t)
        dtt = np.diff(t)
        wt[:-1] += dtt / 2
        wt[1:] += dtt / 2
        el = np.exp(-metric.lam(p1, p2))
        fx = (p1 + 1.0) / grid.h
        fy = (p2 + 1.0) / grid.h
        i = np.clip(np.floor(fx).astype(int), 0, grid.nx - 2)
        j = np.clip(np.floor(fy).astype(int), 0, grid.nx - 2)
        a, bb = fx - i, fy - j
        for blk, comp in enumerate(components):
            cw = {"0": 1.0, "1": el * np.cos(pth), "2": el * np.sin(pth)}[comp] * wt
            for di, dj, w in ((0, 0, (1 - a) * (1 - bb)), (1, 0, a * (1 - bb)),
                              (0, 1, (1 - a) * bb), (1, 1, a * bb)):
                cc = col[i + di, j + dj]
                ok = cc >= 0
                rows.append(np.full(ok.sum(), r))
                cols.append(cc[ok] + blk * nd)
                vals.append((cw * w)[ok])
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(bgrid.size, nd * len(components)))


def adjoint_pairing(metric, grid, bgrid, f_grid, h, op=None, dt=4e-3):
    """Both sides of ``<I f, h>_{d+SM} = 2 pi <f, (h_psi)_0>_M``.

    ``f_grid`` is an ``(nx, nx)`` array and ``h`` boundary data.
    """
    if op is None:
        op = assemble_adjoint(metric, grid, bgrid, dt)
    disk = disk_index(grid)
    R = ray_transform_matrix(metric, grid, bgrid, dt)
    lhs = np.sum(bgrid.weights(metric) * (R @ f_grid[disk]) * np.conj(h))
    lam = metric_arrays(metric, grid.nx)[0][..., 0]
    wx = np.exp(2 * lam[disk]) * grid.h**2 * _disk_quad_fraction(grid)[disk]
    rhs = TWO_PI * np.sum(wx * f_grid[disk] * np.conj(op.M0 @ h))
    return complex(lhs), complex(rhs)


def _disk_quad_fraction(grid):
    """Midpoint weights with half weight on grid cells cut by the unit circle."""
    X1, X2 = grid.mesh()
    r = np.hypot(X1, X2)
    return np.clip((1.0 - r) / grid.h + 0.5, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Helmholtz split and potentials
# ---------------------------------------------------------------------------

@dataclass
class HelmholtzSplit:
    alpha_s: tuple
    p: np.ndarray
    div_residual: float


def _d(u, axis, h):
    return bundle.d_space(u, axis, h)


def helmholtz(metric, grid: SMGrid, alpha1, alpha2) -> HelmholtzSplit:
    """``alpha = alpha_s + dp`` with ``p = 0`` on the boundary circle.

    In two dimensions the conformal factors cancel from ``Delta_g p =
    delta_g alpha``, leaving the flat problem ``Delta p = div alpha`` with
    Dirichlet data.  It is solved with the 5-point Laplacian, using
    Shortley-Weller arms where a neighbour lies outside the disk so the
    boundary condition sits on the circle itself.  ``alpha_s`` is
    ``alpha - dp`` with the grid stencils, so ``alpha(v) = alpha_s(v) + X p``
    holds exactly on the grid.
    """
    h = grid.h
    a1 = np.asarray(alpha1)
    a2 = np.asarray(alpha2)
    div = _d(a1, 0, h) + _d(a2, 1, h)
    X1, X2 = grid.mesh()
    inside = X1**2 + X2**2 < 1.0
    idx = -np.ones(inside.shape, dtype=int)
    n = int(inside.sum())
    idx[inside] = np.arange(n)
    I, J = np.nonzero(inside)
    x1, x2 = X1[inside], X2[inside]
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    for axis in (0, 1):
        pos = x1 if axis == 0 else x2
        other = x2 if axis == 0 else x1
        half = np.sqrt(np.maximum(1.0 - other**2, 0.0))
        arms = []
        for sgn in (1, -1):
            ii = I + (sgn if axis == 0 else 0)
            jj = J + (sgn if axis == 1 else 0)
            ok = (ii >= 0) & (ii < grid.nx) & (jj >= 0) & (jj < grid.nx)
            k = np.full(n, -1)
            k[ok] = idx[ii[ok], jj[ok]]
            # distance to the circle along this grid line when the neighbour is outside
            dist = np.where(k >= 0, h, np.minimum(np.abs(sgn * half - pos), h))
            arms.append((k, np.maximum(dist, 1e-3 * h)))
        (kp, hp), (km, hm) = arms
        cp = 2.0 / (hp * (hp + hm))
        cm = 2.0 / (hm * (hp + hm))
        diag -= cp + cm
        for k, c in ((kp, cp), (km, cm)):
            good = k >= 0
            rows.append(np.flatnonzero(good))
            cols.append(k[good])
            vals.append(c[good])
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    L = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    try:
        sol = spla.spsolve(L.tocsc(), div[inside])
    except Exception as exc:  # pragma: no cover - scipy raises several types
        raise HoloError(f"Poisson solve failed: {exc}") from exc
    p = np.zeros(inside.shape, dtype=np.result_type(div, float))
    p[inside] = sol
    s1 = a1 - _d(p, 0, h)
    s2 = a2 - _d(p, 1, h)
    m = grid.mask
    dres = _d(s1, 0, h) + _d(s2, 1, h)
    scale = max(float(np.max(np.abs(a1[m]))), float(np.max(np.abs(a2[m]))), 1e-300) / h
    return HelmholtzSplit((s1, s2), p, float(np.max(np.abs(dres[m])) / scale))


@dataclass
class Potential:
    F: np.ndarray
    path_residual: float
    closedness: float


def potential_of_solenoidal(metric, grid: SMGrid, beta1, beta2, tol=None) -> Potential:
    """``F`` with ``dF = -*beta``, that is ``d1 F = beta2`` and ``d2 F = -beta1``.

    Integrates along the two staircase paths from the grid point nearest the
    origin (Simpson), averages them and normalizes ``F(0) = 0``.  The
    closedness residual is ``max |div beta|`` on the mask relative to
    ``max |beta| / h``; ``tol`` turns it into an error.
    """
    h = grid.h
    g1 = np.asarray(beta2)
    g2 = -np.asarray(beta1)
    c = grid.nx // 2

    def cum(a, axis, start):
        # integral from index ``start`` along ``axis``
        if np.iscomplexobj(a):
            return cum(a.real, axis, start) + 1j * cum(a.imag, axis, start)
        a = np.moveaxis(a, axis, 0)
        fwd = cumulative_simpson(a[start:], dx=h, axis=0, initial=0)
        bwd = cumulative_simpson(a[: start + 1][::-1], dx=-h, axis=0, initial=0)[::-1]
        out = np.concatenate([bwd[:-1], fwd], axis=0)
        return np.moveaxis(out, 0, axis)

    # path A: along x1 at row c, then along x2
    base_a = cum(g1[:, c], 0, c)
    FA = base_a[:, None] + cum(g2, 1, c)
    # path B: along x2 at column c, then along x1
    base_b = cum(g2[c, :], 0, c)
    FB = base_b[None, :] + cum(g1, 0, c)
    F = 0.5 * (FA + FB)
    m = grid.mask
    div = _d(np.asarray(beta1), 0, h) + _d(np.asarray(beta2), 1, h)
    scale = max(np.max(np.abs(np.asarray(beta1)[m])), np.max(np.abs(np.asarray(beta2)[m])), 1e-300) / h
    closed = float(np.max(np.abs(div[m])) / scale)
    if tol is not None and closed > tol:
        raise HoloError(f"1-form is not closed under the Hodge star: residual {closed:.3e}")
    # normalize F(0) = 0 by bilinear interpolation at the origin
    x = grid.x
    i0 = np.searchsorted(x, 0.0) - 1
    t = (0.0 - x[i0]) / h
    F0 = ((1 - t) ** 2 * F[i0, i0] + t * (1 - t) * (F[i0 + 1, i0] + F[i0, i0 + 1]) + t * t * F[i0 + 1, i0 + 1])
    F = F - F0
    pr = float(np.max(np.abs(FA - FB)[m]))
    return Potential(F, pr, closed)


# ---------------------------------------------------------------------------
# regularized solves
# ---------------------------------------------------------------------------

def _weights_x(metric, grid, rows_mask):
    lam = metric_arrays(metric, grid.nx)[0][..., 0]
    return (np.exp(2.0 * lam) * grid.h**2)[rows_mask]


def ridge_solve(A, b, wx, wp, ridge=None, ridge_rel=1e-9):
    """Minimize ``|A g - b|^2_wx + ridge |g|^2_wp``; default ridge ``ridge_rel sigma_max^2``.

    ``wx`` and ``wp`` are diagonal weights of the data and parameter norms;
    ``sigma_max`` is the largest singular value of ``A`` between them.
    """
    sx = np.sqrt(wx)
    D = 1.0 / np.sqrt(wp)
    As = (A * sx[:, None]) * D[None, :]
    G = As.T @ As
    smax2 = float(np.linalg.eigvalsh(G)[-1])
    if ridge is None:
        ridge = ridge_rel * smax2
    cf = cho_factor(G + ridge * np.eye(G.shape[0]))
    y = cho_solve(cf, As.T @ (sx * b))
    return D * y, ridge, smax2


@dataclass
class IstarSolution:
    h: np.ndarray
    residual: float
    ridge: float
    sigma_max2: float


def range_basis(metric, op: AdjointOperator, components=("0",), m=10, weighted=True):
    """Boundary data spanned by ray transforms of ``spline / sqrt(1 - |x|^2)``.

    A plain minimum-norm solution on the boundary samples is too rough for the
    derivative stencils.  Transforms of smooth integrands stay smooth, and the
    weight is needed because ``I* I`` maps smooth functions onto functions
    with a square-root boundary singularity removed: preimages of smooth
    targets carry the factor ``(1 - |x|^2)^{-1/2}``.
    """
    bg = op.bgrid
    return ray_integrals(metric, SplineBasis(m), bg.n_beta, bg.n_mu, bg.delta, op.dt, tuple(components),
                         weighted)


def solve_Istar(metric, F, op: AdjointOperator, ridge=None, bound=5e-3, ridge_rel=1e-9,
                spline_m=10, scale=0.0) -> IstarSolution:
    """Boundary data ``h`` with ``I* h ~ F``, sought as ``h = I g``.

    ``F`` is an ``(nx, nx)`` array.  ``g`` minimizes
    ``|I* I g - F|^2 + ridge |g|^2`` in the volume norm over the closed-disk
    grid points.  The residual ``|I* h - F| / |F|`` is measured on the mask;
    :class:`HoloError` is raised when it exceeds ``bound``.
    """
    grid = op.grid
    F = np.asarray(F)
    disk = op.disk
    if not np.any(F[grid.mask]):
        return IstarSolution(np.zeros(op.M0.shape[1], dtype=F.dtype), 0.0, 0.0 if ridge is None else ridge, 0.0)
    wx = _weights_x(metric, grid, disk)
    R = range_basis(metric, op, m=spline_m)
    g, rid, s2 = ridge_solve(op.M0 @ R, F[disk], wx, np.ones(R.shape[1]), ridge, ridge_rel)
    h = R @ g
    fit = op.apply(h)
    m = grid.mask
    wm = _weights_x(metric, grid, m)
    den = max(float(np.sum(wm * np.abs(F[m]) ** 2)), scale**2)
    res = float(np.sqrt(np.sum(wm * np.abs(fit[m] - F[m]) ** 2) / den))
    if bound is not None and res > bound:
        raise HoloError(f"resolution insufficient: I* residual {res:.3e} exceeds {bound:.1e}")
    return IstarSolution(h, res, rid, s2)


# ---------------------------------------------------------------------------
# integrating factors
# ---------------------------------------------------------------------------

def _stencil_matrix(grid, axis, rows_mask, cols_mask):
    """Sparse fourth order derivative from ``cols_mask`` points to ``rows_mask`` points."""
    h = grid.h
    nx = grid.nx
    cidx = -np.ones((nx, nx), dtype=int)
    cidx[cols_mask] = np.arange(int(cols_mask.sum()))
    I, J = np.nonzero(rows_mask)
    R, C, V = [], [], []
    for off, w in ((-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0)):
        ii = I + (off if axis == 0 else 0)
        jj = J + (off if axis == 1 else 0)
        ok = (ii >= 0) & (ii < nx) & (jj >= 0) & (jj < nx)
        k = np.full(I.size, -1)
        k[ok] = cidx[ii[ok], jj[ok]]
        good = k >= 0
        R.append(np.nonzero(good)[0])
        C.append(k[good])
        V.append(np.full(good.sum(), w / (12.0 * h)))
    return sp.csr_matrix((np.concatenate(V), (np.concatenate(R), np.concatenate(C))),
                         shape=(I.size, int(cols_mask.sum())))


def xperp_average_operator(metric, op: AdjointOperator):
    """Matrix of ``h -> (Xperp h_psi)_0`` on the mask.

    Integrating by parts in ``theta`` gives
    ``(Xperp u)_0 = e^{-lam}[(D1 + l1)(sin u)_0 - (D2 + l2)(cos u)_0]``, which
    equals the fiber average of the stencil ``Xperp`` to rounding.
    """
    grid = op.grid
    lam, l1, l2, _ = (a[..., 0] for a in metric_arrays(metric, grid.nx))
    disk = op.disk
    mask = grid.mask
    D1 = _stencil_matrix(grid, 0, mask, disk)
    D2 = _stencil_matrix(grid, 1, mask, disk)
    sel = mask[disk]
    el = np.exp(-lam[mask])[:, None]
    return el * (D1 @ op.Ms + l1[mask][:, None] * op.Ms[sel] - D2 @ op.Mc - l2[mask][:, None] * op.Mc[sel])


@dataclass
class IntegratingFactor:
    """Result of :func:`build_integrating_factor`."""

    w: SMField
    orientation: str
    residual: float
    wrong_mode_mass: float
    h: np.ndarray
    h_prime: np.ndarray
    p: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def _eval_grid(fun, grid):
    X1, X2 = grid.mesh()
    if fun is None:
        return np.zeros(X1.shape, dtype=complex)
    return np.asarray(fun(X1, X2), dtype=complex) * np.ones(X1.shape)


def _sm_from_disk(grid, disk, vals):
    out = np.zeros((grid.nx, grid.nx, grid.ntheta), dtype=complex)
    out[disk] = vals
    return out


def build_integrating_factor(metric, grid: SMGrid, bgrid: BoundaryGrid, F=None, alpha=(None, None),
                             orientation="holo", ridge=None, ridge_rel=1e-9, dt=4e-3,
                             istar_bound=5e-3, residual_bound=None, op=None, spline_m=10) -> IntegratingFactor:
    """Holomorphic (or antiholomorphic) ``w`` with ``X w = -(F + alpha_j v^j)``.

    Parameters
    ----------
    F : callable ``F(x1, x2)`` or None
    alpha : pair of callables ``(alpha1, alpha2)`` (entries may be None)
    orientation : {"holo", "antiholo"}
    ridge, ridge_rel : regularization of both boundary solves
    residual_bound : float, optional
        Raise :class:`HoloError` if ``|X w + f| / |f|`` exceeds it.
    """
    if orientation not in ("holo", "antiholo"):
        raise ValueError("orientation must be 'holo' or 'antiholo'")
    sigma = 1 if orientation == "holo" else -1
    Fg = _eval_grid(F, grid)
    a1 = _eval_grid(alpha[0], grid)
    a2 = _eval_grid(alpha[1], grid)
    disk = disk_index(grid)
    nt = grid.ntheta
    th = grid.theta
    c = np.cos(th)
    s = np.sin(th)
    lam = metric_arrays(metric, grid.nx)[0][..., 0]
    el = np.exp(-lam)[..., None]
    f_sm = Fg[..., None] + el * (a1[..., None] * c + a2[..., None] * s)
    diag = {}
    if not np.any(f_sm[grid.mask]):
        z = SMField(grid, np.zeros((grid.nx, grid.nx, nt), dtype=complex))
        nb = bgrid.size
        return IntegratingFactor(z, orientation, 0.0, 0.0, np.zeros(nb), np.zeros(nb),
                                 np.zeros((grid.nx, grid.nx)), {"trivial": True})

    # 1. Helmholtz split
    split = helmholtz(metric, grid, a1, a2)
    as1, as2 = split.alpha_s
    diag["helmholtz_div_residual"] = split.div_residual

    # 2. odd part of u^F from one backtrace of every SM point: acc = u^F(x, -v)
    sources = (F,) if F is not None else ()
    rays = backtrace_grid(metric, grid, dt, sources=sources)
    if op is None:
        op = assemble_adjoint(metric, grid, bgrid, dt, rays=rays)
    if F is not None:
        u_minus_v = rays.acc[0]                              # u^F(x, -v)
        u_v = np.roll(u_minus_v, -nt // 2, axis=1)           # u^F(x, v)
        uF = _sm_from_disk(grid, disk, u_v)
    else:
        uF = np.zeros((grid.nx, grid.nx, nt), dtype=complex)
    uF_odd = 0.5 * (uF - np.roll(uF, -nt // 2, axis=2))

    # 3a. h with *d(I* h) = -i sigma alpha_s via the potential
    b1 = -1j * sigma * as1
    b2 = -1j * sigma * as2
    pot = potential_of_solenoidal(metric, grid, b1, b2)
    diag["potential_path_residual"] = pot.path_residual
    diag["potential_closedness"] = pot.closedness
    # a potential of size |alpha| is the natural reference when alpha_s is only discretization noise
    ref = float(np.sqrt(np.sum(_weights_x(metric, grid, grid.mask)
                               * (np.abs(a1[grid.mask]) ** 2 + np.abs(a2[grid.mask]) ** 2))))
    sol_h = solve_Istar(metric, pot.F, op, ridge=ridge, bound=istar_bound, ridge_rel=ridge_rel,
                        spline_m=spline_m, scale=ref)
    diag["istar_residual_h"] = sol_h.residual

    # 3b. h' with (Xperp h'_psi)_0 = -(Xperp u^F)_0
    T = xperp_average_operator(metric, op)
    G = -bundle.fiber_average(bundle.Xperp_op(metric, grid, uF_odd))
    m = grid.mask
    if np.any(G[m]):
        wx = _weights_x(metric, grid, m)
        R1 = range_basis(metric, op, ("1", "2"), m=spline_m)
        q, _, _ = ridge_solve(T @ R1, G[m], wx, np.ones(R1.shape[1]), ridge, ridge_rel)
        hp = R1 @ q
        fit = T @ hp
        diag["xperp_fit_residual"] = float(np.sqrt(np.sum(wx * np.abs(fit - G[m]) ** 2)
                                                   / np.sum(wx * np.abs(G[m]) ** 2)))
    else:
        hp = np.zeros(bgrid.size, dtype=complex)
        diag["xperp_fit_residual"] = 0.0

    # 4. assemble
    P = boundary_interp_matrix(bgrid, rays.beta, rays.mu)
    h_psi = _sm_from_disk(grid, disk, (P @ sol_h.h).reshape(rays.beta.shape))
    hp_psi = _sm_from_disk(grid, disk, (P @ hp).reshape(rays.beta.shape))
    flip = lambda u: np.roll(u, -nt // 2, axis=2)
    w_hat = 0.5 * (h_psi + flip(h_psi)) + uF_odd + 0.5 * (hp_psi - flip(hp_psi))
    proj = bundle.id_plus_iH if sigma == 1 else bundle.id_minus_iH
    w = proj(w_hat) - split.p[..., None]
    w = w * disk[..., None]

    res = bundle.X_op(metric, grid, w) + f_sm
    n_f = np.sqrt(bundle.norm2(f_sm, grid, metric))
    residual = float(np.sqrt(bundle.norm2(res, grid, metric)) / n_f)
    wrong = bundle.negative_mode_mass(w, grid, metric, sign=-sigma)
    diag["ridge"] = sol_h.ridge
    if residual_bound is not None and residual > residual_bound:
        raise HoloError(f"integrating factor residual {residual:.3e} exceeds {residual_bound:.1e}")
    return IntegratingFactor(SMField(grid, w, {"orientation": orientation}), orientation, residual,
                             wrong, sol_h.h, hp, split.p, diag)


def integrating_factor_for_form(metric, grid, bgrid, phi=(None, None), orientation="holo", **kw):
    """``w`` with ``X w = i phi(v)`` for a real 1-form ``phi``, i.e. ``f = -i phi``."""
    a = tuple(None if q is None else (lambda x1, x2, q=q: -1j * np.asarray(q(x1, x2))) for q in phi)
    return build_integrating_factor(metric, grid, bgrid, F=None, alpha=a, orientation=orientation, **kw)


@dataclass
class ShiftCheck:
    """Two-path comparison of ``e^{s w} u`` with the shifted transport solution."""

    s: float
    relative_error: float
    n_points: int


def exp_shift_check(metric, factor: IntegratingFactor, s, f, pair=None, n_points=200, seed=0,
                    dt=4e-3, r_max=0.7) -> ShiftCheck:
    """Compare ``e^{s w} u^f_A`` with ``u^{e^{s w} f}`` for the connection ``A - i s phi``.

    ``factor`` must satisfy ``X w = i phi(v)`` with ``phi`` the area primitive
    used by :func:`gauge.build_As`, so that the shifted connection is
    ``build_As(pair, metric, s)``.  ``f(x1, x2, theta)`` is a scalar source,
    ideally vanishing near the boundary.  Points are grid nodes with
    ``|x| <= r_max`` drawn with a seeded generator.
    """
    from .gauge import build_As, zero_pair
    from .transport import GridSource, transport_rays

    grid = factor.w.grid
    pair = zero_pair(1) if pair is None else pair
    w = factor.w.values
    X1, X2, TH = np.broadcast_arrays(*grid.sm_mesh())
    fv = np.asarray(f(X1, X2, TH), dtype=complex) * np.ones(X1.shape)
    src = GridSource(np.exp(s * w) * fv, grid, kmax=grid.ntheta // 2 - 1)
    cand = np.argwhere((X1**2 + X2**2 <= r_max**2))
    rng = np.random.Generator(np.random.Philox(seed))
    pick = cand[rng.choice(len(cand), size=min(n_points, len(cand)), replace=False)]
    i, j, k = pick.T
    x1, x2, th = X1[i, j, k], X2[i, j, k], TH[i, j, k]
    u = transport_rays(pair, metric, x1, x2, th, f=lambda a, b, t: f(a, b, t), dt=dt).J[:, 0, 0]
    shifted = build_As(pair, metric, s)
    ut = transport_rays(shifted, metric, x1, x2, th, f=src, dt=dt).J[:, 0, 0]
    lhs = np.exp(s * w[i, j, k]) * u
    err = float(np.linalg.norm(ut - lhs) / max(np.linalg.norm(lhs), 1e-300))
    return ShiftCheck(float(s), err, len(pick))
