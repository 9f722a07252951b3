"""Discretized unit circle bundle of the disk.

Fields on SM are stored as arrays of shape ``(nx, nx, ntheta, *component)``
over the square ``[-1, 1]^2`` times the circle.  Spatial derivatives use
centered fourth order stencils with zero padding beyond the square, and the
fiber derivative is spectral.  Test fields are expected to vanish in a
collar of the disk, so the zero padding never enters a result on the mask.

Fiber Fourier modes follow ``u(x, theta) = sum_k u_k(x) e^{i k theta}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .geometry import IsothermalMetric

TWO_PI = 2.0 * np.pi


class StencilError(ValueError):
    """The interior mask is too close to the edge of the square for the stencils."""


@dataclass(frozen=True)
class SMGrid:
    """Tensor grid on ``[-1, 1]^2 x S^1`` with a disk mask.

    Parameters
    ----------
    nx : int
        Points per spatial axis, ``h = 2 / (nx - 1)``.
    ntheta : int
        Angular samples, even.
    kmax : int
        Fiber mode cutoff; requires ``ntheta >= 2 kmax + 2``.
    margin : float, optional
        Width of the excluded collar; defaults to ``2 h``.
    """

    nx: int = 64
    ntheta: int = 64
    kmax: int = 16
    margin: float | None = None

    def __post_init__(self):
        if self.nx < 8:
            raise ValueError("nx must be at least 8")
        if self.ntheta % 2:
            raise ValueError("ntheta must be even")
        if self.ntheta < 2 * self.kmax + 2:
            raise ValueError("ntheta must be at least 2*kmax + 2")
        if self.margin is None:
            object.__setattr__(self, "margin", 2.0 * self.h)
        if self.margin < 2.0 * self.h - 1e-14:
            raise StencilError("mask collar narrower than the stencil half-width 2h")

    @property
    def h(self) -> float:
        return 2.0 / (self.nx - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.nx)

    @property
    def theta(self) -> np.ndarray:
        return TWO_PI * np.arange(self.ntheta) / self.ntheta

    @property
    def dtheta(self) -> float:
        return TWO_PI / self.ntheta

    def mesh(self):
        """Spatial mesh ``(X1, X2)``, indexed ``[ix, iy]``."""
        return np.meshgrid(self.x, self.x, indexing="ij")

    def sm_mesh(self):
        """Broadcastable ``(X1, X2, TH)`` of shapes ``(nx, nx, 1)`` and ``(1, 1, ntheta)``."""
        X1, X2 = self.mesh()
        return X1[..., None], X2[..., None], self.theta[None, None, :]

    @property
    def mask(self) -> np.ndarray:
        X1, X2 = self.mesh()
        return X1**2 + X2**2 <= (1.0 - self.margin) ** 2

    def describe(self) -> dict:
        return {"nx": self.nx, "ntheta": self.ntheta, "kmax": self.kmax,
                "margin": self.margin, "h": self.h,
                "note": "square grid masked to the disk minus a collar"}


@dataclass
class SMField:
    """Values of a function on SM over an :class:`SMGrid`."""

    grid: SMGrid
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values)
        g = self.grid
        if v.shape[:3] != (g.nx, g.nx, g.ntheta):
            raise ValueError(f"field shape {v.shape} does not match grid")
        if not np.all(np.isfinite(v)):
            raise ValueError("field has non-finite entries")
        self.values = v

    @property
    def comp_shape(self):
        return self.values.shape[3:]

    def with_values(self, values) -> "SMField":
        return SMField(self.grid, values, dict(self.meta))

    def to_csv(self, path) -> None:
        """Write rows ``ix, iy, itheta, component, re, im`` for mask points."""
        g = self.grid
        v = self.values.reshape(g.nx, g.nx, g.ntheta, -1)
        ix, iy = np.nonzero(g.mask)
        nc = v.shape[3]
        it = np.arange(g.ntheta)
        I, T, C = np.meshgrid(np.arange(ix.size), it, np.arange(nc), indexing="ij")
        vals = v[ix[I], iy[I], T, C]
        rows = np.column_stack([ix[I].ravel(), iy[I].ravel(), T.ravel(), C.ravel(),
                                vals.real.ravel(), vals.imag.ravel()])
        header = "ix,iy,itheta,component,re,im"
        np.savetxt(path, rows, delimiter=",", header=header, comments="",
                   fmt=["%d", "%d", "%d", "%d", "%.17g", "%.17g"])


def sample(grid: SMGrid, func, meta=None) -> SMField:
    """Evaluate ``func(x1, x2, theta)`` on the grid.

    ``func`` receives broadcastable arrays and returns an array whose leading
    shape is ``(nx, nx, ntheta)``.
    """
    X1, X2, TH = grid.sm_mesh()
    v = np.asarray(func(X1, X2, TH))
    v = np.broadcast_to(v, (grid.nx, grid.nx, grid.ntheta) + v.shape[3:]).copy()
    return SMField(grid, v, meta or {})


# ---------------------------------------------------------------------------
# metric on the grid
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def metric_arrays(metric: IsothermalMetric, nx: int):
    """``(lam, l1, l2, K)`` on the spatial grid, shapes ``(nx, nx, 1)``.

    Points outside the closed disk use the values at the radial projection
    onto the circle; they never enter masked results.
    """
    x = np.linspace(-1.0, 1.0, nx)
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    r = np.hypot(X1, X2)
    scale = np.where(r > 1.0, 1.0 / np.maximum(r, 1e-300), 1.0)
    lam, l1, l2, lap = metric.all(X1 * scale, X2 * scale)
    K = -np.exp(-2.0 * lam) * lap
    out = tuple(a[..., None] for a in (lam, l1, l2, K))
    for a in out:
        a.setflags(write=False)
    return out


def _bcast(a, ndim):
    return a.reshape(a.shape + (1,) * (ndim - a.ndim))


# ---------------------------------------------------------------------------
# derivatives
# ---------------------------------------------------------------------------

def d_space(u: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Fourth order centered first derivative along a spatial axis."""
    pad = [(0, 0)] * u.ndim
    pad[axis] = (2, 2)
    p = np.pad(u, pad)
    n = u.shape[axis]

    def sl(k):
        s = [slice(None)] * u.ndim
        s[axis] = slice(2 + k, 2 + k + n)
        return p[tuple(s)]

    return (-sl(2) + 8.0 * sl(1) - 8.0 * sl(-1) + sl(-2)) / (12.0 * h)


def _wavenumbers(nt):
    k = np.fft.fftfreq(nt, 1.0 / nt)
    k[nt // 2] = 0.0  # Nyquist mode carries no derivative
    return k


def d_theta(u: np.ndarray) -> np.ndarray:
    """Spectral derivative along the fiber (axis 2)."""
    nt = u.shape[2]
    k = _bcast(_wavenumbers(nt)[None, None, :], u.ndim)
    return np.fft.ifft(1j * k * np.fft.fft(u, axis=2), axis=2)


def _frame_parts(metric, grid, ndim):
    lam, l1, l2, _ = metric_arrays(metric, grid.nx)
    th = grid.theta[None, None, :]
    c, s = np.cos(th), np.sin(th)
    el = np.exp(-lam)
    return tuple(_bcast(a, ndim) for a in (el, c, s, l1, l2))


def X_op(metric, grid, u):
    """Geodesic vector field on an array field."""
    el, c, s, l1, l2 = _frame_parts(metric, grid, u.ndim)
    h = grid.h
    return el * (c * d_space(u, 0, h) + s * d_space(u, 1, h) + (-l1 * s + l2 * c) * d_theta(u))


def Xperp_op(metric, grid, u):
    """``X_perp = [X, V]`` on an array field."""
    el, c, s, l1, l2 = _frame_parts(metric, grid, u.ndim)
    h = grid.h
    return el * (s * d_space(u, 0, h) - c * d_space(u, 1, h) + (l1 * c + l2 * s) * d_theta(u))


def V_op(u):
    return d_theta(u)


def apply_frame_field(f: SMField, which: str, metric: IsothermalMetric) -> SMField:
    """Apply ``X``, ``Xperp`` or ``V`` to a field.

    Values are meaningful on the grid mask, where the stencils only touch
    points of the square.
    """
    u = f.values
    if which == "X":
        out = X_op(metric, f.grid, u)
    elif which in ("Xperp", "X_perp", "Xp"):
        out = Xperp_op(metric, f.grid, u)
    elif which == "V":
        out = V_op(u)
    else:
        raise ValueError(f"unknown frame field {which!r}")
    return f.with_values(out)


def eta_op(metric, grid, u, sign):
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    return 0.5 * (X_op(metric, grid, u) + sign * 1j * Xperp_op(metric, grid, u))


def eta(f: SMField, sign: int, metric) -> SMField:
    """``eta_+ = (X + i Xperp)/2`` or ``eta_- = (X - i Xperp)/2``."""
    return f.with_values(eta_op(metric, f.grid, f.values, sign))


# ---------------------------------------------------------------------------
# fiber Fourier analysis
# ---------------------------------------------------------------------------

@dataclass
class FourierModes:
    """Fiber modes ``u_k`` for ``|k| <= kmax``; ``modes[k + kmax]`` is ``u_k``."""

    grid: SMGrid
    modes: np.ndarray
    kmax: int

    def __getitem__(self, k: int) -> np.ndarray:
        if abs(k) > self.kmax:
            return np.zeros_like(self.modes[0])
        return self.modes[k + self.kmax]

    def ks(self):
        return np.arange(-self.kmax, self.kmax + 1)


def modes_array(u: np.ndarray, kmax: int) -> np.ndarray:
    """Return array of shape ``(2 kmax + 1, nx, nx, *comp)``."""
    nt = u.shape[2]
    if 2 * kmax + 1 > nt:
        raise ValueError("kmax too large for ntheta")
    U = np.fft.fft(u, axis=2) / nt
    idx = np.arange(-kmax, kmax + 1) % nt
    return np.moveaxis(U[:, :, idx], 2, 0)


def from_modes_array(m: np.ndarray, nt: int) -> np.ndarray:
    kmax = (m.shape[0] - 1) // 2
    shape = m.shape[1:3] + (nt,) + m.shape[3:]
    U = np.zeros(shape, dtype=complex)
    idx = np.arange(-kmax, kmax + 1) % nt
    U[:, :, idx] = np.moveaxis(m, 0, 2)
    return np.fft.ifft(U, axis=2) * nt


def fiber_modes(f: SMField, kmax: int | None = None) -> FourierModes:
    kmax = f.grid.kmax if kmax is None else kmax
    return FourierModes(f.grid, modes_array(f.values, kmax), kmax)


def inverse_modes(m: FourierModes) -> SMField:
    return SMField(m.grid, from_modes_array(m.modes, m.grid.ntheta))


def mode_multiplier(u: np.ndarray, mult) -> np.ndarray:
    """Multiply fiber mode ``k`` by ``mult(k)`` (FFT ordering, Nyquist passed as 0)."""
    nt = u.shape[2]
    k = _wavenumbers(nt)
    w = _bcast(np.asarray(mult(k), dtype=complex)[None, None, :], u.ndim)
    return np.fft.ifft(w * np.fft.fft(u, axis=2), axis=2)


def hilbert(u: np.ndarray) -> np.ndarray:
    """``H u_k = -i sgn(k) u_k`` with ``sgn(0) = 0``."""
    return mode_multiplier(u, lambda k: -1j * np.sign(k))


def hilbert_transform(f: SMField) -> SMField:
    return f.with_values(hilbert(f.values))


def id_plus_iH(u):
    """``(Id + iH) u = u_0 + 2 sum_{k>0} u_k``."""
    return mode_multiplier(u, lambda k: 1.0 + np.sign(k))


def id_minus_iH(u):
    """``(Id - iH) u = u_0 + 2 sum_{k<0} u_k``."""
    return mode_multiplier(u, lambda k: 1.0 - np.sign(k))


def project_holo(f: SMField, orientation: str) -> SMField:
    """Apply ``(Id - iH)`` for ``"holo"`` or ``(Id + iH)`` for ``"antiholo"``.

    Not a projector: ``"holo"`` keeps ``u_0``, doubles the modes ``k < 0``
    and kills ``k > 0``; ``"antiholo"`` is the mirror image.  The labels
    name the orientation whose defect is measured: ``(Id - iH) u = u_0``
    exactly when ``u`` is holomorphic.
    """
    if orientation == "holo":
        return f.with_values(id_minus_iH(f.values))
    if orientation == "antiholo":
        return f.with_values(id_plus_iH(f.values))
    raise ValueError("orientation must be 'holo' or 'antiholo'")


def fiber_average(u: np.ndarray) -> np.ndarray:
    """Zeroth fiber mode."""
    return u.mean(axis=2)


def negative_mode_mass(u, grid, metric=None, kmax=None, sign=-1):
    """Relative mass ``sum_{k<0} ||u_k||^2 / ||u||^2`` on the mask (``sign=+1`` for k>0)."""
    nt = u.shape[2]
    k = _wavenumbers(nt)
    k_full = np.fft.fftfreq(nt, 1.0 / nt)
    U = np.fft.fft(u, axis=2)
    w = np.ones(grid.mask.shape)
    if metric is not None:
        w = np.exp(2.0 * metric_arrays(metric, grid.nx)[0][..., 0])
    w = w * grid.mask
    sel = (k_full * sign > 0) & (k != 0)
    p = np.abs(U) ** 2
    p = p.reshape(p.shape[:3] + (-1,)).sum(axis=3)
    tot = np.sum(w[..., None] * p)
    if tot == 0:
        return 0.0
    return float(np.sum(w[..., None] * p[:, :, sel]) / tot)


# ---------------------------------------------------------------------------
# inner products
# ---------------------------------------------------------------------------

def quad_weights(grid: SMGrid, metric: IsothermalMetric) -> np.ndarray:
    """Midpoint weights of ``dSigma^3 = e^{2 lam} dx dtheta`` on the mask, shape ``(nx, nx, 1)``."""
    lam = metric_arrays(metric, grid.nx)[0]
    return np.exp(2.0 * lam) * grid.mask[..., None] * grid.h**2 * grid.dtheta


def inner(u, v, grid, metric) -> complex:
    """``int_SM <u, v>`` with ``<a, b> = sum a_i conj(b_i)``."""
    w = _bcast(quad_weights(grid, metric), u.ndim)
    return complex(np.sum(w * u * np.conj(v)))


def norm2(u, grid, metric) -> float:
    return float(inner(u, u, grid, metric).real)


def inner_product(u: SMField, v: SMField, metric) -> complex:
    if u.grid != v.grid:
        raise ValueError("fields live on different grids")
    if u.comp_shape != v.comp_shape:
        raise ValueError("component shapes differ")
    return inner(u.values, v.values, u.grid, metric)


def spatial_inner(a, b, grid, metric) -> complex:
    """``int_M <a, b> e^{2 lam} dx`` for arrays of shape ``(nx, nx, *comp)``."""
    lam = metric_arrays(metric, grid.nx)[0][..., 0]
    w = np.exp(2.0 * lam) * grid.mask * grid.h**2
    w = w.reshape(w.shape + (1,) * (a.ndim - 2))
    return complex(np.sum(w * a * np.conj(b)))


# ---------------------------------------------------------------------------
# structure equations
# ---------------------------------------------------------------------------

def structure_residuals(metric, u: SMField) -> dict:
    """L^2 norms of ``[V,X]u + Xperp u``, ``[V,Xperp]u - X u`` and ``[X,Xperp]u + K V u``.

    Each is reported absolutely and relative to ``||u||``.
    """
    g = u.grid
    a = u.values
    Xa, Pa, Va = X_op(metric, g, a), Xperp_op(metric, g, a), V_op(a)
    K = _bcast(metric_arrays(metric, g.nx)[3], a.ndim)
    r1 = V_op(Xa) - X_op(metric, g, Va) + Pa
    r2 = V_op(Pa) - Xperp_op(metric, g, Va) - Xa
    r3 = X_op(metric, g, Pa) - Xperp_op(metric, g, Xa) + K * Va
    nu = np.sqrt(norm2(a, g, metric))
    out = {}
    for name, r in (("VX", r1), ("VXperp", r2), ("XXperp", r3)):
        n = np.sqrt(norm2(r, g, metric))
        out[name] = n
        out[name + "_rel"] = n / nu if nu > 0 else 0.0
    return out
