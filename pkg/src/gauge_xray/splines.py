"""Tensor cubic B-splines on the square and their ray integrals."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import BSpline, CubicHermiteSpline

from .geometry import boundary_to_phase, shoot


@dataclass(frozen=True)
class SplineBasis:
    """Clamped uniform B-splines of degree ``k`` with ``m`` functions per axis on ``[-1, 1]``.

    Basis functions are indexed ``i * m + j`` for ``phi_i(x1) phi_j(x2)``.
    """

    m: int = 10
    k: int = 3

    def __post_init__(self):
        if self.m < self.k + 1:
            raise ValueError("need at least k + 1 functions per axis")

    @property
    def knots(self):
        inner = np.linspace(-1.0, 1.0, self.m - self.k + 1)
        return np.concatenate([np.full(self.k, -1.0), inner, np.full(self.k, 1.0)])

    @property
    def size(self):
        return self.m * self.m

    def design_1d(self, x):
        x = np.clip(np.asarray(x, dtype=float).ravel(), -1.0, 1.0)
        return BSpline.design_matrix(x, self.knots, self.k).tocsr()

    def design(self, x1, x2) -> sp.csr_matrix:
        """Sparse ``(N, m^2)`` matrix of basis values at the points."""
        A = self.design_1d(x1)
        B = self.design_1d(x2)
        n = A.shape[0]
        ka = np.diff(A.indptr).max(initial=0)
        kb = np.diff(B.indptr).max(initial=0)
        Ad = _dense_rows(A, ka)
        Bd = _dense_rows(B, kb)
        cols = (Ad[0][:, :, None] * self.m + Bd[0][:, None, :]).reshape(n, -1)
        vals = (Ad[1][:, :, None] * Bd[1][:, None, :]).reshape(n, -1)
        rows = np.repeat(np.arange(n), cols.shape[1])
        return sp.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(n, self.size))

    def dense_1d(self, x, nu=0):
        """Dense ``(N, m)`` values (or ``nu``-th derivatives) of the 1-D basis."""
        x = np.clip(np.asarray(x, dtype=float).ravel(), -1.0, 1.0)
        b = BSpline(self.knots, np.eye(self.m), self.k)
        if nu:
            b = b.derivative(nu)
        return b(x)

    def tensor(self, x1, x2, nu=(0, 0)) -> np.ndarray:
        """Dense ``(N, m^2)`` values of ``d^nu phi_i(x1) phi_j(x2)``."""
        A = self.dense_1d(x1, nu[0])
        B = self.dense_1d(x2, nu[1])
        return (A[:, :, None] * B[:, None, :]).reshape(A.shape[0], -1)

    def evaluate(self, coef, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        out = self.design(x1, x2) @ np.asarray(coef).reshape(self.size, -1)
        return out.reshape(x1.shape + np.asarray(coef).shape[1:])


def _dense_rows(M, k):
    """Column indices and values of a CSR matrix padded to ``k`` per row."""
    n = M.shape[0]
    cols = np.zeros((n, k), dtype=int)
    vals = np.zeros((n, k))
    counts = np.diff(M.indptr)
    pos = np.arange(M.indices.size) - np.repeat(M.indptr[:-1], counts)
    r = np.repeat(np.arange(n), counts)
    cols[r, pos] = M.indices
    vals[r, pos] = M.data
    return cols, vals


def _node_positions(metric, res, s):
    """Ray positions at ``t = tau s`` for fractions ``s`` in (0, 1).

    Uses cubic Hermite interpolation of the recorded steps with the exact
    velocity ``e^{-lam}(cos theta, sin theta)``.
    """
    n_nodes = s.size
    out = np.empty((len(res.paths), n_nodes, 4))
    taus = np.empty(len(res.paths))
    for r, (t, a1, a2, th, _) in enumerate(res.paths):
        tau = t[-1]
        taus[r] = tau
        tn = tau * s
        if t.size < 2:
            out[r] = np.array([a1[0], a2[0], th[0], 1.0])
            continue
        el = np.exp(-metric.lam(a1, a2))
        x = CubicHermiteSpline(t, a1, el * np.cos(th))(tn)
        y = CubicHermiteSpline(t, a2, el * np.sin(th))(tn)
        ang = np.interp(tn, t, np.unwrap(th))
        out[r, :, 0], out[r, :, 1], out[r, :, 2] = x, y, ang
        out[r, :, 3] = tn
    return out, taus


@lru_cache(maxsize=8)
def ray_integrals(metric, basis: SplineBasis, n_beta, n_mu, delta, dt=4e-3, components=("0",),
                  weighted=True, n_nodes=48):
    """Ray transforms of every basis function over a boundary grid.

    Returns a dense ``(n_beta * n_mu, len(components) * m^2)`` array.  The
    component ``"0"`` integrates the function, ``"1"`` and ``"2"`` integrate
    it against ``dx^1(v)`` and ``dx^2(v)``.  With ``weighted`` each basis
    function is divided by ``sqrt(1 - |x|^2)``; the endpoint singularity is
    removed by the substitution ``t = tau (1 - cos phi) / 2`` and the result
    integrated with the midpoint rule in ``phi``; otherwise Gauss-Legendre
    nodes in ``t`` are used.
    """
    from .transport import BoundaryGrid

    bg = BoundaryGrid(n_beta, n_mu, delta)
    b, mu = bg.points()
    x1, x2, th = boundary_to_phase(b, mu)
    res = shoot(metric, x1, x2, th, dt=dt, record=True)
    if weighted:
        phi = (np.arange(n_nodes) + 0.5) * np.pi / n_nodes
        frac = 0.5 * (1.0 - np.cos(phi))
    else:
        gx, gw = np.polynomial.legendre.leggauss(n_nodes)
        frac = 0.5 * (1.0 + gx)
    nodes, taus = _node_positions(metric, res, frac)
    p1 = nodes[..., 0].ravel()
    p2 = nodes[..., 1].ravel()
    pth = nodes[..., 2].ravel()
    tn = nodes[..., 3]
    tau = taus[:, None]
    if weighted:
        rho = 1.0 - nodes[..., 0] ** 2 - nodes[..., 1] ** 2
        k = np.maximum(rho, 0.0) / np.maximum(tn * (tau - tn), 1e-300)
        wt = (np.pi / n_nodes) / np.sqrt(np.maximum(k, 1e-300))
    else:
        wt = 0.5 * tau * gw[None, :]
    wt = wt.ravel()
    ray = np.repeat(np.arange(len(taus)), n_nodes)
    D = basis.design(p1, p2)
    el = np.exp(-metric.lam(p1, p2))
    blocks = []
    for comp in components:
        cw = {"0": wt, "1": wt * el * np.cos(pth), "2": wt * el * np.sin(pth)}[comp]
        S = sp.csr_matrix((cw, (ray, np.arange(p1.size))), shape=(len(taus), p1.size))
        blocks.append((S @ D).toarray())
    return np.hstack(blocks)
