"""Attenuated transport along geodesics.

For a pair ``(A, Phi)`` write ``Att(x, v) = Phi(x) + A(v)``.  Along the ray
from ``(x, v)`` to its exit at time ``tau`` we integrate

    W' = W Att,  W(0) = Id,
    J' = W f,    J(0) = 0,

so that ``u^f(x, v) = J(tau)`` solves ``(X + A + Phi) u = -f`` with ``u = 0``
at the exit, and ``W(tau)`` is the fundamental solution equal to ``Id`` on
the outgoing boundary.  Started on the incoming boundary, ``W(t)`` is the
inverse of ``U_-`` along the ray and ``J`` is the integral representation of
the transform.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (TWO_PI, BoundaryPoint, GeometryError, boundary_to_phase,
                       flow_for, phase_to_entry, phase_to_exit, shoot)


class TransportError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# sources
# ---------------------------------------------------------------------------

def _as3(v, n):
    """Normalize a source value to shape ``(B, n, m)``."""
    v = np.asarray(v, dtype=complex)
    if v.ndim == 1 and n == 1:
        v = v[:, None]
    if v.ndim == 2:
        v = v[:, :, None]
    return v


class Source:
    """Right-hand side ``f(x1, x2, theta) -> (B, n)`` or ``(B, n, m)``."""

    def __call__(self, x1, x2, th):
        raise NotImplementedError


class FunctionSource(Source):
    def __init__(self, fun):
        self.fun = fun

    def __call__(self, x1, x2, th):
        return self.fun(x1, x2, th)


class FormSource(Source):
    """``f = F(x) + alpha_j(x) v^j`` from callables of ``x`` only.

    Each callable returns ``(B, n)`` or ``(B, n, m)``; ``None`` means zero.
    """

    def __init__(self, metric, F=None, a1=None, a2=None):
        self.metric, self.F, self.a1, self.a2 = metric, F, a1, a2

    def __call__(self, x1, x2, th):
        out = 0.0
        if self.F is not None:
            out = out + np.asarray(self.F(x1, x2))
        if self.a1 is not None or self.a2 is not None:
            el = np.exp(-self.metric.lam(x1, x2))
            c, s = el * np.cos(th), el * np.sin(th)
            for a, w in ((self.a1, c), (self.a2, s)):
                if a is None:
                    continue
                v = np.asarray(a(x1, x2))
                out = out + w.reshape(w.shape + (1,) * (v.ndim - 1)) * v
        return out


class ExactSource(Source):
    """``f = (X + A + Phi) p`` for ``p(x)``; ``p`` returns ``(B, n[, m])``, ``dp`` a pair."""

    def __init__(self, pair, metric, p, dp):
        self.pair, self.metric, self.p, self.dp = pair, metric, p, dp

    def __call__(self, x1, x2, th):
        P = _as3(self.p(x1, x2), self.pair.n)
        d1, d2 = (_as3(d, self.pair.n) for d in self.dp(x1, x2))
        el = np.exp(-self.metric.lam(x1, x2))
        c = (el * np.cos(th))[:, None, None]
        s = (el * np.sin(th))[:, None, None]
        return c * d1 + s * d2 + self.pair.attenuation(self.metric, x1, x2, th) @ P


class GridSource(Source):
    """Interpolate an SM grid field: bilinear in ``x``, trigonometric in ``theta``."""

    def __init__(self, values, grid, kmax=None):
        from .bundle import modes_array

        self.grid = grid
        kmax = grid.kmax if kmax is None else kmax
        v = np.asarray(values)
        self.modes = modes_array(v, kmax)  # (2K+1, nx, nx, *comp)
        # point-major copy for gathers: (nx, nx, 2K+1, *comp)
        self._pm = np.ascontiguousarray(np.moveaxis(self.modes, 0, 2))
        self.kmax = kmax

    def _phases(self, th):
        K = self.kmax
        z = np.exp(1j * np.asarray(th, dtype=float))
        ph = np.empty((z.size, 2 * K + 1), dtype=complex)
        ph[:, K] = 1.0
        if K:
            ph[:, K + 1:] = np.cumprod(np.broadcast_to(z[:, None], (z.size, K)), axis=1)
            ph[:, :K] = np.conj(ph[:, K + 1:][:, ::-1])
        return ph

    def __call__(self, x1, x2, th):
        g = self.grid
        fx = (np.asarray(x1) + 1.0) / g.h
        fy = (np.asarray(x2) + 1.0) / g.h
        i = np.clip(np.floor(fx).astype(int), 0, g.nx - 2)
        j = np.clip(np.floor(fy).astype(int), 0, g.nx - 2)
        a = fx - i
        b = fy - j
        M = self._pm
        wsh = (-1,) + (1,) * (M.ndim - 2)
        a = a.reshape(wsh)
        b = b.reshape(wsh)
        m = ((1 - a) * (1 - b) * M[i, j] + a * (1 - b) * M[i + 1, j]
             + (1 - a) * b * M[i, j + 1] + a * b * M[i + 1, j + 1])  # (B, 2K+1, *comp)
        return np.einsum("bk...,bk->b...", m, self._phases(th))


# ---------------------------------------------------------------------------
# boundary grid and ray data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundaryGrid:
    """Incoming boundary samples, ``beta`` uniform and ``mu`` at midpoints of ``[-pi/2+delta, pi/2-delta]``."""

    n_beta: int = 64
    n_mu: int = 32
    delta: float = 0.05

    def __post_init__(self):
        if not 0 < self.delta < np.pi / 2:
            raise ValueError("delta must lie in (0, pi/2)")
        if self.n_beta < 1 or self.n_mu < 1:
            raise ValueError("empty boundary grid")

    @property
    def beta(self):
        return TWO_PI * np.arange(self.n_beta) / self.n_beta

    @property
    def dmu(self):
        return (np.pi - 2 * self.delta) / self.n_mu

    @property
    def mu(self):
        return -np.pi / 2 + self.delta + (np.arange(self.n_mu) + 0.5) * self.dmu

    def points(self):
        """Flattened ``(beta, mu)``, beta major."""
        B, M = np.meshgrid(self.beta, self.mu, indexing="ij")
        return B.ravel(), M.ravel()

    @property
    def size(self):
        return self.n_beta * self.n_mu

    def samples(self):
        return [BoundaryPoint(b, m) for b, m in zip(*self.points())]

    def weights(self, metric=None):
        """Weights of ``cos(mu) e^{lam} dbeta dmu``, the measure ``-<v, nu> d(dSM)``."""
        b, m = self.points()
        w = np.cos(m) * (TWO_PI / self.n_beta) * self.dmu
        if metric is not None:
            w = w * np.exp(metric.lam(np.cos(b), np.sin(b)))
        return w


@dataclass
class RayData:
    """Values on boundary samples, ``values`` of shape ``(B, n)`` or ``(B, n, n)``."""

    beta: np.ndarray
    mu: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise TransportError("non-finite ray data")

    def to_csv(self, path):
        v = self.values
        if v.ndim == 2:
            v = v[:, :, None]
        B, r, c = v.shape
        I, R, C = np.meshgrid(np.arange(B), np.arange(r), np.arange(c), indexing="ij")
        vals = v[I, R, C]
        rows = np.column_stack([self.beta[I].ravel(), self.mu[I].ravel(), R.ravel(), C.ravel(),
                                vals.real.ravel(), vals.imag.ravel()])
        np.savetxt(path, rows, delimiter=",", header="beta,mu,component_row,component_col,re,im",
                   comments="", fmt=["%.17g", "%.17g", "%d", "%d", "%.17g", "%.17g"])


# ---------------------------------------------------------------------------
# core integrators
# ---------------------------------------------------------------------------

@dataclass
class TransportResult:
    tau: np.ndarray
    W: np.ndarray          # (B, n, n) fundamental solution at exit
    J: np.ndarray | None   # (B, n, m) accumulated source
    exit: tuple            # (x1, x2, theta) at exit


def transport_rays(pair, metric, x1, x2, th, f=None, dt=1e-3, t_max=20.0):
    """Integrate ``W`` and ``J`` from phase points to their exits."""
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    th = np.atleast_1d(np.asarray(th, dtype=float))
    x1, x2, th = np.broadcast_arrays(x1, x2, th)
    B = x1.size
    n = pair.n
    m = 0
    if f is not None:
        m = _as3(f(x1[:1], x2[:1], th[:1]), n).shape[2]
    y0 = np.zeros((B, n, n + m), dtype=complex)
    y0[:, :, :n] = np.eye(n)

    def rhs(a1, a2, at, y):
        att = pair.attenuation(metric, a1, a2, at)
        if m:
            att = np.concatenate([att, _as3(f(a1, a2, at), n)], axis=2)
        return y[:, :, :n] @ att

    res = shoot(metric, x1, x2, th, dt=dt, t_max=t_max, extra=rhs, y0=y0)
    y = res.y
    return TransportResult(res.tau, y[:, :, :n], y[:, :, n:] if m else None,
                           (res.x1, res.x2, res.theta))


def _reversed_rhs(pair, metric, f=None, left=False):
    """Right-hand sides on a reversed geodesic (``theta`` is the reversed angle).

    ``Att`` at the original direction is ``Phi - A(v_rev)``.
    """
    n = pair.n

    def att_orig(a1, a2, at):
        return pair.attenuation(metric, a1, a2, at + np.pi)

    if left:
        # H' = -H Att
        def rhs(a1, a2, at, y):
            return -y @ att_orig(a1, a2, at)
        return rhs

    def rhs(a1, a2, at, y):
        out = att_orig(a1, a2, at) @ y
        if f is not None:
            out = out + _as3(f(a1, a2, at + np.pi), n)
        return out
    return rhs


def solve_uf(pair, metric, f, x1, x2, th, dt=1e-3, method="forward"):
    """Values of ``u^f`` at phase points, shape ``(B, n)`` or ``(B, n, m)``.

    ``method="forward"`` uses the integral representation; ``"backward"``
    integrates ``u' = -Att u - f`` from ``u = 0`` at the exit back to the point.
    """
    if method == "forward":
        r = transport_rays(pair, metric, x1, x2, th, f=f, dt=dt)
        J = r.J
    elif method == "backward":
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        x2 = np.atleast_1d(np.asarray(x2, dtype=float))
        th = np.atleast_1d(np.asarray(th, dtype=float))
        ex = shoot(metric, x1, x2, th, dt=dt)
        n = pair.n
        m = _as3(f(x1[:1], x2[:1], th[:1]), n).shape[2]
        y0 = np.zeros((x1.size, n, m), dtype=complex)
        J = _fixed_reverse(metric, ex.x1, ex.x2, ex.theta + np.pi, ex.tau,
                           _reversed_rhs(pair, metric, f), y0, dt)
    else:
        raise ValueError("method must be 'forward' or 'backward'")
    if J.shape[2] == 1:
        return J[:, :, 0]
    return J


def _fixed_reverse(metric, x1, x2, th, durations, rhs, y0, dt):
    """Integrate each ray for its own duration with a per-ray step ``duration / N``."""
    durations = np.asarray(durations, dtype=float)
    N = max(int(np.ceil(np.max(durations, initial=0.0) / dt)), 1)
    h = durations / N
    from .geometry import _rk4
    state = (np.asarray(x1, float).copy(), np.asarray(x2, float).copy(),
             np.asarray(th, float).copy(), np.array(y0, copy=True))
    for _ in range(N):
        state = _rk4(metric, state, h, rhs)
    return state[3]


def ray_transform(pair, metric, f, grid: BoundaryGrid, dt=1e-3, check=False) -> RayData:
    """``I_{A,Phi} f`` on the boundary grid.

    With ``check`` the backward ODE is solved too and the largest
    discrepancy is stored in ``meta["cross_check"]``.
    """
    b, m = grid.points()
    x1, x2, th = boundary_to_phase(b, m)
    r = transport_rays(pair, metric, x1, x2, th, f=f, dt=dt)
    vals = r.J[:, :, 0] if r.J.shape[2] == 1 else r.J
    meta = {"dt": dt, "tau": r.tau}
    if check:
        back = solve_uf(pair, metric, f, x1, x2, th, dt=dt, method="backward")
        meta["cross_check"] = float(np.max(np.abs(back - vals)))
    return RayData(b, m, vals, meta)


# ---------------------------------------------------------------------------
# fundamental solutions and scattering data
# ---------------------------------------------------------------------------

@dataclass
class UPath:
    t: np.ndarray
    U: np.ndarray            # (T, n, n)
    unitarity: float         # max ||U* U - Id|| along the path (nan if not unitary pair)
    side: str


def propagate_U(pair, metric, b: BoundaryPoint, side="minus", dt=1e-3) -> UPath:
    """``U_-`` (``Id`` at entry) or ``U_+`` (``Id`` at exit) along the geodesic of ``b``.

    Times ``t`` are measured from the entry point in both cases.
    """
    if b.outgoing:
        raise GeometryError("propagate_U expects an incoming boundary point")
    p = b.to_phase()
    n = pair.n
    if side == "minus":
        def rhs(a1, a2, at, y):
            return -pair.attenuation(metric, a1, a2, at) @ y
        res = shoot(metric, [p.x1], [p.x2], [p.theta], dt=dt, extra=rhs,
                    y0=np.eye(n, dtype=complex)[None], record=True)
        t, _, _, _, U = res.paths[0]
    elif side == "plus":
        ex = shoot(metric, [p.x1], [p.x2], [p.theta], dt=dt)
        tau = float(ex.tau[0])
        # U_+(t) = Y(t) with Y' = -Att Y, Y(tau) = Id; on the reversed path dY/ds = Att Y
        rhs = _reversed_rhs(pair, metric)
        res = shoot(metric, ex.x1, ex.x2, ex.theta + np.pi, dt=dt, extra=rhs,
                    y0=np.eye(n, dtype=complex)[None], record=True)
        s, _, _, _, U = res.paths[0]
        t = tau - s[::-1]
        U = U[::-1]
    else:
        raise ValueError("side must be 'minus' or 'plus'")
    uni = float("nan")
    if pair.unitary:
        E = np.conj(np.swapaxes(U, -1, -2)) @ U - np.eye(n)
        uni = float(np.max(np.linalg.norm(E, axis=(-2, -1), ord=2)))
    return UPath(np.asarray(t), np.asarray(U), uni, side)


@dataclass
class ScatteringData:
    """``C_-`` at the exits reached from the incoming grid and ``C_+`` at the incoming grid.

    ``exit_beta, exit_mu`` record the outgoing endpoint of each sample.
    """

    beta: np.ndarray
    mu: np.ndarray
    exit_beta: np.ndarray
    exit_mu: np.ndarray
    tau: np.ndarray
    C_minus: np.ndarray
    C_plus: np.ndarray
    relation_residual: float
    unitarity_minus: float
    unitarity_plus: float

    def ray_data(self, which="minus") -> RayData:
        C = self.C_minus if which == "minus" else self.C_plus
        return RayData(self.beta, self.mu, C, {"side": which})


def _unitarity(C):
    n = C.shape[-1]
    E = np.conj(np.swapaxes(C, -1, -2)) @ C - np.eye(n)
    return float(np.max(np.linalg.norm(E, axis=(-2, -1), ord=2), initial=0.0))


def scattering_data(pair, metric, grid: BoundaryGrid, dt=1e-3, tol=1e-6, strict=False) -> ScatteringData:
    """Scattering data ``C_-`` and ``C_+`` from two independent integrations.

    ``C_-`` comes from integrating ``U_-`` forward from each incoming sample;
    ``C_+`` from integrating ``U_+`` backward from the exit.  The residual of
    ``C_-^{-1} = C_+ o alpha`` is reported; with ``strict`` exceeding ``tol``
    raises :class:`TransportError`.
    """
    b, m = grid.points()
    x1, x2, th = boundary_to_phase(b, m)
    n = pair.n
    I = np.broadcast_to(np.eye(n, dtype=complex), (b.size, n, n)).copy()

    def rhs(a1, a2, at, y):
        return -pair.attenuation(metric, a1, a2, at) @ y

    fw = shoot(metric, x1, x2, th, dt=dt, extra=rhs, y0=I)
    Cm = fw.y
    eb, em = phase_to_exit(fw.x1, fw.x2, fw.theta)
    bw = shoot(metric, fw.x1, fw.x2, fw.theta + np.pi, dt=dt,
               extra=_reversed_rhs(pair, metric), y0=I)
    Cp = bw.y
    rel = float(np.max(np.abs(np.linalg.inv(Cm) - Cp), initial=0.0))
    un_m = _unitarity(Cm) if pair.unitary else float("nan")
    un_p = _unitarity(Cp) if pair.unitary else float("nan")
    if strict and rel > tol:
        raise TransportError(f"scattering relation residual {rel:.3e} exceeds {tol:.1e}")
    return ScatteringData(b, m, eb, em, fw.tau, Cm, Cp, rel, un_m, un_p)


def unitarity_along_rays(pair, metric, grid: BoundaryGrid, dt=1e-3, batch=256) -> np.ndarray:
    """``max_t ||U_-^* U_- - Id||_2`` along the ray of every grid sample.

    Every RK4 step is recorded, in batches of ``batch`` rays to bound memory.
    """
    b, m = grid.points()
    x1, x2, th = boundary_to_phase(b, m)
    n = pair.n

    def rhs(a1, a2, at, y):
        return -pair.attenuation(metric, a1, a2, at) @ y

    out = np.empty(b.size)
    for lo in range(0, b.size, batch):
        sl = slice(lo, lo + batch)
        k = x1[sl].size
        I = np.broadcast_to(np.eye(n, dtype=complex), (k, n, n)).copy()
        res = shoot(metric, x1[sl], x2[sl], th[sl], dt=dt, extra=rhs, y0=I, record=True)
        for j, path in enumerate(res.paths):
            U = path[4]
            E = np.conj(np.swapaxes(U, -1, -2)) @ U - np.eye(n)
            out[lo + j] = np.max(np.linalg.norm(E, axis=(-2, -1), ord=2))
    return out


# ---------------------------------------------------------------------------
# propagation of boundary data
# ---------------------------------------------------------------------------

@dataclass
class Backtrace:
    """Entry data of phase points: entry ``(beta, mu)``, time since entry and ``U_-(x, v)``."""

    beta: np.ndarray
    mu: np.ndarray
    s: np.ndarray
    U: np.ndarray | None


def backtrace(metric, x1, x2, th, pair=None, dt=1e-3) -> Backtrace:
    """Follow each ``(x, v)`` backward to its incoming boundary point."""
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    th = np.atleast_1d(np.asarray(th, dtype=float))
    x1, x2, th = np.broadcast_arrays(x1, x2, th)
    if pair is None:
        r = shoot(metric, x1, x2, th + np.pi, dt=dt)
        U = None
    else:
        n = pair.n
        I = np.broadcast_to(np.eye(n, dtype=complex), (x1.size, n, n)).copy()
        r = shoot(metric, x1, x2, th + np.pi, dt=dt, extra=_reversed_rhs(pair, metric, left=True), y0=I)
        U = r.y
    beta, mu = phase_to_entry(r.x1, r.x2, r.theta + np.pi)
    return Backtrace(beta, mu, r.tau, U)


def w_sharp(pair, metric, w, x1, x2, th, dt=1e-3, mu_max=None):
    """``w#(x, v) = U_-(x, v) w(entry(x, v))``.

    Parameters
    ----------
    w : callable
        ``w(beta, mu) -> (B, n)`` or ``(B, n, n)``, boundary data on the incoming side.
    pair : AttenuationPair or None
        ``None`` means zero attenuation, giving ``h_psi``.
    mu_max : float, optional
        Entries with ``|mu| > mu_max`` are masked to NaN.
    """
    bt = backtrace(metric, x1, x2, th, pair=pair, dt=dt)
    vals = np.asarray(w(bt.beta, bt.mu))
    if bt.U is not None:
        v3 = vals if vals.ndim == 3 else vals[:, :, None]
        out = bt.U @ v3
        vals = out if vals.ndim == 3 else out[:, :, 0]
    if mu_max is not None:
        bad = np.abs(bt.mu) > mu_max
        vals = np.where(bad.reshape((-1,) + (1,) * (vals.ndim - 1)), np.nan, vals)
    return vals


# ---------------------------------------------------------------------------
# gauge invariance
# ---------------------------------------------------------------------------

def gauge_invariance_check(pair, Q, metric, f, grid: BoundaryGrid, dt=1e-3) -> dict:
    """Residuals of the two gauge identities for a boundary-identity ``Q``.

    ``transform``: ``max |I_B(Q^{-1} f) - Q^{-1}|_{dSM} I_A f|``;
    ``scattering``: ``max |C_-^B - C_-^A|``.
    """
    from .gauge import apply_gauge

    B = apply_gauge(pair, Q, metric)

    def fq(x1, x2, th):
        v = _as3(f(x1, x2, th), pair.n)
        return np.linalg.solve(Q.value(x1, x2), v)

    IA = ray_transform(pair, metric, f, grid, dt=dt)
    IB = ray_transform(B, metric, FunctionSource(fq), grid, dt=dt)
    b, _ = grid.points()
    Qb = Q.value(np.cos(b), np.sin(b))
    va = _as3(IA.values, pair.n)
    vb = _as3(IB.values, pair.n)
    tr = float(np.max(np.abs(vb - np.linalg.solve(Qb, va))))
    SA = scattering_data(pair, metric, grid, dt=dt)
    SB = scattering_data(B, metric, grid, dt=dt)
    sc = float(np.max(np.abs(SA.C_minus - SB.C_minus)))
    return {"transform": tr, "scattering": sc,
            "boundary_Q_minus_Id": float(np.max(np.abs(Qb - np.eye(pair.n))))}
