"""Isothermal metrics on the unit disk and their geodesic flow.

Points of the unit circle bundle are written ``(x1, x2, theta)`` where
``theta`` is the Euclidean angle of the unit vector ``v = e^{-lam}(cos, sin)``.
The flow equations in these coordinates are

    x1' = e^{-lam} cos(theta)
    x2' = e^{-lam} sin(theta)
    theta' = e^{-lam} (-d1 lam sin(theta) + d2 lam cos(theta))

All ray work goes through :func:`shoot`, a fixed step RK4 integrator that
advances a whole batch of rays at once and locates the boundary crossing of
each ray by bisection on its final step.  Extra per-ray state (transport
matrices, accumulators, Jacobi fields) is integrated in the same RK4 stages,
so the exit bisection applies to it too.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi


class GeometryError(RuntimeError):
    """Raised for domain violations and failed geodesic computations."""


class TrappedError(GeometryError):
    """A ray did not reach the boundary before ``t_max``."""


class ConjugatePointError(GeometryError):
    """A Jacobi field vanished inside the disk."""


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _flat(x1, x2, c):
    z = np.zeros(np.broadcast(x1, x2).shape)
    return z, z, z, z


def _positive(x1, x2, c):
    # lam = c log(2 / (1 + r^2)), a scaled stereographic sphere
    r2 = x1 * x1 + x2 * x2
    lam = c * np.log(2.0 / (1.0 + r2))
    g = -2.0 * c / (1.0 + r2)
    lap = -4.0 * c / (1.0 + r2) ** 2
    return lam, g * x1, g * x2, lap


def _negative(x1, x2, c):
    # lam = c log(2 / (2 - r^2)); defined for r < sqrt(2)
    r2 = x1 * x1 + x2 * x2
    lam = c * np.log(2.0 / (2.0 - r2))
    g = 2.0 * c / (2.0 - r2)
    lap = 8.0 * c / (2.0 - r2) ** 2
    return lam, g * x1, g * x2, lap


def _bump(x1, x2, c, x0=(0.3, -0.2), sigma=0.5):
    d1 = x1 - x0[0]
    d2 = x2 - x0[1]
    q = (d1 * d1 + d2 * d2) / sigma**2
    lam = c * np.exp(-q)
    s2 = sigma**2
    return lam, -2.0 * d1 / s2 * lam, -2.0 * d2 / s2 * lam, lam * (4.0 * q / s2 - 4.0 / s2)


_FAMILIES = {
    "flat": _flat,
    "positive": _positive,
    "negative": _negative,
    "bump": _bump,
}


@dataclass(frozen=True)
class IsothermalMetric:
    """Conformal metric ``g = e^{2 lam} (dx1^2 + dx2^2)`` on the closed unit disk.

    Parameters
    ----------
    name : {"flat", "positive", "negative", "bump"}
        Family of the conformal factor.
    c : float
        Strength parameter.  ``positive`` is ``c log(2/(1+r^2))`` and is a
        round hemisphere for ``c = 1`` (boundary totally geodesic), so values
        ``c < 1`` are the strictly convex ones.
    x0, sigma :
        Centre and width of the ``bump`` family ``c exp(-|x-x0|^2/sigma^2)``.
    """

    name: str = "flat"
    c: float = 1.0
    x0: tuple = (0.3, -0.2)
    sigma: float = 0.5

    def __post_init__(self):
        if self.name not in _FAMILIES:
            raise ValueError(f"unknown metric family {self.name!r}; expected one of {sorted(_FAMILIES)}")
        if self.name == "bump" and self.sigma <= 0:
            raise ValueError("bump width must be positive")

    def _eval(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        if self.name == "bump":
            return _bump(x1, x2, self.c, self.x0, self.sigma)
        return _FAMILIES[self.name](x1, x2, self.c)

    def lam(self, x1, x2):
        return self._eval(x1, x2)[0]

    def grad(self, x1, x2):
        """Return ``(d1 lam, d2 lam)``."""
        _, l1, l2, _ = self._eval(x1, x2)
        return l1, l2

    def laplacian(self, x1, x2):
        return self._eval(x1, x2)[3]

    def all(self, x1, x2):
        """``(lam, d1 lam, d2 lam, laplacian lam)`` in one evaluation."""
        return self._eval(x1, x2)

    def gaussian_curvature(self, x1, x2):
        lam, _, _, lap = self._eval(x1, x2)
        return -np.exp(-2.0 * lam) * lap

    def describe(self) -> dict:
        d = {"name": self.name, "c": self.c}
        if self.name == "bump":
            d.update(x0=list(self.x0), sigma=self.sigma)
        return d


def metric_from_spec(spec: dict) -> IsothermalMetric:
    spec = dict(spec)
    if "x0" in spec:
        spec["x0"] = tuple(spec["x0"])
    return IsothermalMetric(**spec)


def _check_in_disk(x1, x2, tol=1e-12):
    r2 = np.asarray(x1) ** 2 + np.asarray(x2) ** 2
    if np.any(r2 > 1.0 + tol):
        raise GeometryError("point outside the closed unit disk")


def curvature(metric: IsothermalMetric, x1, x2):
    """Gaussian curvature ``K = -e^{-2 lam} laplacian(lam)`` at points of the disk."""
    _check_in_disk(x1, x2)
    return metric.gaussian_curvature(x1, x2)


# ---------------------------------------------------------------------------
# phase space points
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhasePoint:
    x1: float
    x2: float
    theta: float

    def __post_init__(self):
        if self.x1**2 + self.x2**2 > 1.0 + 1e-12:
            raise GeometryError("phase point outside the disk")
        object.__setattr__(self, "theta", float(np.mod(self.theta, TWO_PI)))


@dataclass(frozen=True)
class BoundaryPoint:
    """Boundary point ``(cos beta, sin beta)`` with incidence angle ``mu``.

    On the incoming boundary ``mu`` is the counterclockwise angle of ``v``
    from the inward normal; on the outgoing boundary it is measured from the
    outward normal.  ``|mu| < pi/2`` excludes tangential directions.
    """

    beta: float
    mu: float
    outgoing: bool = False

    def __post_init__(self):
        if abs(self.mu) >= np.pi / 2:
            raise GeometryError("tangential or outward incidence angle")
        object.__setattr__(self, "beta", float(np.mod(self.beta, TWO_PI)))

    def to_phase(self) -> PhasePoint:
        th = self.beta + self.mu + (0.0 if self.outgoing else np.pi)
        return PhasePoint(np.cos(self.beta), np.sin(self.beta), th)

    def reversed(self) -> "BoundaryPoint":
        """Same base point with ``v -> -v`` (swaps incoming and outgoing)."""
        return BoundaryPoint(self.beta, self.mu, not self.outgoing)


def boundary_to_phase(beta, mu):
    """Vectorized incoming boundary ``(beta, mu)`` to ``(x1, x2, theta)``."""
    beta = np.asarray(beta, dtype=float)
    mu = np.asarray(mu, dtype=float)
    return np.cos(beta), np.sin(beta), np.mod(beta + np.pi + mu, TWO_PI)


def phase_to_exit(x1, x2, theta):
    """Outgoing ``(beta, mu)`` of phase points on the boundary."""
    beta = np.mod(np.arctan2(x2, x1), TWO_PI)
    mu = np.mod(theta - beta + np.pi, TWO_PI) - np.pi
    return beta, mu


def phase_to_entry(x1, x2, theta):
    """Incoming ``(beta, mu)`` of phase points on the boundary."""
    beta = np.mod(np.arctan2(x2, x1), TWO_PI)
    mu = np.mod(theta - beta, TWO_PI) - np.pi
    return beta, mu


# ---------------------------------------------------------------------------
# batched RK4 engine
# ---------------------------------------------------------------------------

def _geo_rhs(metric, x1, x2, th):
    lam, l1, l2, _ = metric.all(x1, x2)
    el = np.exp(-lam)
    c = np.cos(th)
    s = np.sin(th)
    return el * c, el * s, el * (-l1 * s + l2 * c)


def _rk4(metric, state, h, extra):
    """One RK4 step of size ``h`` (scalar or per-ray array)."""
    x1, x2, th, y = state
    hh = np.asarray(h, dtype=float)
    if hh.ndim:
        hy = hh.reshape(hh.shape + (1,) * (y.ndim - 1)) if y is not None else None
    else:
        hy = hh

    def f(a1, a2, at, ay):
        d1, d2, dt = _geo_rhs(metric, a1, a2, at)
        dy = extra(a1, a2, at, ay) if extra is not None else None
        return d1, d2, dt, dy

    k1 = f(x1, x2, th, y)
    k2 = f(x1 + 0.5 * hh * k1[0], x2 + 0.5 * hh * k1[1], th + 0.5 * hh * k1[2],
           None if y is None else y + 0.5 * hy * k1[3])
    k3 = f(x1 + 0.5 * hh * k2[0], x2 + 0.5 * hh * k2[1], th + 0.5 * hh * k2[2],
           None if y is None else y + 0.5 * hy * k2[3])
    k4 = f(x1 + hh * k3[0], x2 + hh * k3[1], th + hh * k3[2],
           None if y is None else y + hy * k3[3])
    w = hh / 6.0
    nx1 = x1 + w * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    nx2 = x2 + w * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    nth = th + w * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    ny = None
    if y is not None:
        ny = y + (hy / 6.0) * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
    return nx1, nx2, nth, ny


@dataclass
class ShotResult:
    """Exit data of a batch of rays.

    ``tau`` is the exit time, ``x1, x2, theta`` the exit state and ``y`` the
    extra state at exit.  ``paths`` holds per-step samples when recorded:
    a list with one ``(t, x1, x2, theta, y)`` tuple of arrays per ray.
    """

    tau: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    theta: np.ndarray
    y: np.ndarray | None
    paths: list | None = None


def _locate_exit(metric, sx, dt, extra, tol):
    """Fraction ``s`` of the step at which ``|x|^2 = 1`` and the state there.

    Safeguarded Newton on ``g(s) = |x(s dt)|^2 - 1`` where ``x(s dt)`` is one
    RK4 step of size ``s dt``; bisection fallback keeps the bracket.
    """
    x1, x2, th, _ = sx
    lo = np.zeros(x1.size)
    hi = np.ones(x1.size)
    # initial guess from the chord through the start point along the start direction
    d1, d2, _ = _geo_rhs(metric, x1, x2, th)
    a = d1 * d1 + d2 * d2
    bq = x1 * d1 + x2 * d2
    cq = x1 * x1 + x2 * x2 - 1.0
    disc = np.maximum(bq * bq - a * cq, 0.0)
    t0 = (-bq + np.sqrt(disc)) / np.maximum(a, 1e-300)
    s = np.clip(t0 / dt, 0.0, 1.0)
    s = np.where((s <= 0.0) | (s >= 1.0), 0.5, s)
    stol = tol / dt
    for _ in range(60):
        st = _rk4(metric, sx, s * dt, extra)
        g = st[0] ** 2 + st[1] ** 2 - 1.0
        lo = np.where(g <= 0.0, s, lo)
        hi = np.where(g > 0.0, s, hi)
        v1, v2, _ = _geo_rhs(metric, st[0], st[1], st[2])
        dg = 2.0 * (st[0] * v1 + st[1] * v2) * dt
        with np.errstate(divide="ignore", invalid="ignore"):
            sn = s - g / dg
        bad = ~np.isfinite(sn) | (sn <= lo) | (sn >= hi)
        sn = np.where(bad, 0.5 * (lo + hi), sn)
        done = (np.abs(sn - s) < stol) | (hi - lo < stol)
        s = sn
        if np.all(done):
            break
    return s, _rk4(metric, sx, s * dt, extra)


def shoot(metric, x1, x2, theta, dt=1e-3, t_max=50.0, extra=None, y0=None,
          record=False, bisect_tol=1e-12):
    """Integrate a batch of rays until each one leaves the closed unit disk.

    Parameters
    ----------
    metric : IsothermalMetric
    x1, x2, theta : array_like, shape (B,)
        Starting phase points, inside the disk or on its boundary.
    dt : float
        RK4 step.
    t_max : float
        Rays still inside after this time raise :class:`TrappedError`.
    extra : callable, optional
        ``extra(x1, x2, theta, y) -> dy/dt`` for additional per-ray state.
    y0 : ndarray, optional
        Initial extra state, leading dimension ``B``.
    record : bool
        Keep every step (for traces and Riccati scans).
    bisect_tol : float
        Tolerance in time for the boundary crossing, located by safeguarded
        Newton iteration on the final step.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x1 = np.atleast_1d(np.asarray(x1, dtype=float)).copy()
    x2 = np.atleast_1d(np.asarray(x2, dtype=float)).copy()
    theta = np.atleast_1d(np.asarray(theta, dtype=float)).copy()
    x1, x2, theta = np.broadcast_arrays(x1, x2, theta)
    x1, x2, theta = x1.copy(), x2.copy(), theta.copy()
    B = x1.shape[0]
    # exit points located by the Newton step may sit ~1e-12 outside
    if np.any(x1**2 + x2**2 > 1.0 + 1e-9):
        raise GeometryError("ray start outside the disk")
    y = None
    if y0 is not None:
        y = np.array(y0, copy=True)
        if y.shape[0] != B:
            raise ValueError("extra state must have one row per ray")

    tau = np.zeros(B)
    ox1, ox2, oth = x1.copy(), x2.copy(), theta.copy()
    oy = None if y is None else y.copy()
    paths = [None] * B if record else None

    # rays starting on the boundary and not pointing inward exit at once
    r2 = x1**2 + x2**2
    on_edge = r2 >= 1.0 - 1e-13
    outward = on_edge & (x1 * np.cos(theta) + x2 * np.sin(theta) >= 0.0)
    active = np.nonzero(~outward)[0]
    if record:
        for i in np.nonzero(outward)[0]:
            paths[i] = (np.array([0.0]), x1[i:i + 1], x2[i:i + 1], theta[i:i + 1],
                        None if y is None else y[i:i + 1])
        rec = {i: ([0.0], [x1[i]], [x2[i]], [theta[i]], [] if y is None else [y[i].copy()])
               for i in active}

    cx1, cx2, cth = x1[active], x2[active], theta[active]
    cy = None if y is None else y[active]
    t = 0.0
    n_steps = int(np.ceil(t_max / dt))
    for _ in range(n_steps):
        if active.size == 0:
            break
        nx1, nx2, nth, ny = _rk4(metric, (cx1, cx2, cth, cy), dt, extra)
        t_new = t + dt
        out = nx1**2 + nx2**2 > 1.0
        if np.any(out):
            idx = np.nonzero(out)[0]
            sx = (cx1[idx], cx2[idx], cth[idx], None if cy is None else cy[idx])
            s, (e1, e2, eth, ey) = _locate_exit(metric, sx, dt, extra, bisect_tol)
            gidx = active[idx]
            tau[gidx] = t + s * dt
            ox1[gidx], ox2[gidx], oth[gidx] = e1, e2, eth
            if oy is not None:
                oy[gidx] = ey
            if record:
                for j, g in enumerate(gidx):
                    r = rec.pop(g)
                    r[0].append(t + s[j] * dt)
                    r[1].append(e1[j])
                    r[2].append(e2[j])
                    r[3].append(eth[j])
                    if oy is not None:
                        r[4].append(ey[j].copy())
                    paths[g] = tuple(np.asarray(a) for a in r[:4]) + (
                        np.asarray(r[4]) if oy is not None else None,)
            keep = ~out
            active = active[keep]
            cx1, cx2, cth = nx1[keep], nx2[keep], nth[keep]
            cy = None if ny is None else ny[keep]
        else:
            cx1, cx2, cth, cy = nx1, nx2, nth, ny
        if record:
            for j, g in enumerate(active):
                r = rec[g]
                r[0].append(t_new)
                r[1].append(cx1[j])
                r[2].append(cx2[j])
                r[3].append(cth[j])
                if cy is not None:
                    r[4].append(cy[j].copy())
        t = t_new
    if active.size:
        raise TrappedError(f"{active.size} ray(s) did not exit within t_max={t_max} (possibly trapped)")
    return ShotResult(tau, ox1, ox2, np.mod(oth, TWO_PI), oy, paths)


def flow_for(metric, x1, x2, theta, duration, dt=1e-3, extra=None, y0=None):
    """Integrate rays for a fixed time ignoring the boundary.

    Used to extend geodesics slightly past the disk, where the analytic
    conformal factor is still defined.  A negative ``duration`` runs the
    flow backward by reversing the direction and reversing back at the end.
    """
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    back = duration < 0
    T = abs(duration)
    th = theta + np.pi if back else theta
    n = max(int(np.ceil(T / dt)), 1)
    h = T / n
    state = (x1.copy(), x2.copy(), th.copy(), None if y0 is None else np.array(y0, copy=True))
    for _ in range(n):
        state = _rk4(metric, state, h, extra)
    e1, e2, eth, ey = state
    if back:
        eth = eth + np.pi
    return e1, e2, np.mod(eth, TWO_PI), ey


# ---------------------------------------------------------------------------
# traces, exit times, scattering relation
# ---------------------------------------------------------------------------

@dataclass
class GeodesicTrace:
    t: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    theta: np.ndarray
    exit_time: float
    exit_point: BoundaryPoint | None
    start: PhasePoint = field(default=None)

    def to_csv(self, path) -> None:
        data = np.column_stack([self.t, self.x1, self.x2, self.theta])
        np.savetxt(path, data, delimiter=",", header="t,x1,x2,theta", comments="", fmt="%.17g")


def _as_phase(p):
    if isinstance(p, BoundaryPoint):
        return p.to_phase()
    return p


def geodesic_flow(metric, start, t_max=10.0, dt=1e-3) -> GeodesicTrace:
    """Trace one geodesic from ``start`` to the boundary."""
    p = _as_phase(start)
    res = shoot(metric, [p.x1], [p.x2], [p.theta], dt=dt, t_max=t_max, record=True)
    t, a1, a2, th, _ = res.paths[0]
    tau = float(res.tau[0])
    exit_pt = None
    if tau > 0:
        b, m = phase_to_exit(res.x1[0], res.x2[0], res.theta[0])
        exit_pt = BoundaryPoint(float(b), float(m), outgoing=True)
    return GeodesicTrace(t, a1, a2, np.mod(th, TWO_PI), tau, exit_pt, p)


def exit_time(metric, p, dt=1e-3, t_max=10.0) -> float:
    p = _as_phase(p)
    return float(shoot(metric, [p.x1], [p.x2], [p.theta], dt=dt, t_max=t_max).tau[0])


def exit_times(metric, x1, x2, theta, dt=1e-3, t_max=10.0):
    """Vectorized exit times."""
    return shoot(metric, x1, x2, theta, dt=dt, t_max=t_max).tau


def scattering_relation_alpha(metric, b: BoundaryPoint, dt=1e-3, t_max=10.0) -> BoundaryPoint:
    """Map an incoming boundary point to the outgoing end of its geodesic."""
    if b.outgoing:
        raise GeometryError("scattering relation expects an incoming boundary point")
    p = b.to_phase()
    res = shoot(metric, [p.x1], [p.x2], [p.theta], dt=dt, t_max=t_max)
    beta, mu = phase_to_exit(res.x1[0], res.x2[0], res.theta[0])
    return BoundaryPoint(float(beta), float(mu), outgoing=True)


def alpha_batch(metric, beta, mu, dt=1e-3, t_max=10.0):
    """Vectorized scattering relation: ``(beta', mu', tau)`` on the outgoing side."""
    x1, x2, th = boundary_to_phase(beta, mu)
    res = shoot(metric, x1, x2, th, dt=dt, t_max=t_max)
    b2, m2 = phase_to_exit(res.x1, res.x2, res.theta)
    return b2, m2, res.tau


# ---------------------------------------------------------------------------
# Jacobi fields and the Riccati equation
# ---------------------------------------------------------------------------

def _jacobi_extra(metric):
    def rhs(x1, x2, th, y):
        K = metric.gaussian_curvature(x1, x2)
        return np.stack([y[:, 1], -K * y[:, 0]], axis=1)
    return rhs


@dataclass
class RiccatiSolution:
    """``a = y'/y`` along a trace, with the Jacobi field that produced it."""

    t: np.ndarray
    a: np.ndarray
    y: np.ndarray
    dy: np.ndarray
    K: np.ndarray
    eps: float

    def __call__(self, t):
        return np.interp(t, self.t, self.a)

    def residual(self):
        """Pointwise ``a' + a^2 + K`` with ``a'`` from the Jacobi state."""
        da = (-self.K * self.y * self.y - self.dy * self.dy) / (self.y * self.y)
        return da + self.a**2 + self.K


def riccati_along(metric, trace: GeodesicTrace, eps=0.1, dt=None) -> RiccatiSolution:
    """Riccati solution along ``trace`` from a Jacobi field vanishing before entry.

    The Jacobi field satisfies ``y'' + K y = 0`` with ``y = 0, y' = 1`` at a
    point ``eps`` before the entry point of the extended geodesic.  Raises
    :class:`ConjugatePointError` if ``y`` vanishes on ``[0, tau]``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if dt is None:
        dt = float(np.min(np.diff(trace.t))) if trace.t.size > 1 else 1e-3
        dt = max(dt, 1e-4)
    x1, x2, th = trace.x1[0], trace.x2[0], trace.theta[0]
    # backward time from the trace start to its entry point
    back = shoot(metric, [x1], [x2], [th + np.pi], dt=dt).tau[0]
    b1, b2, bth, _ = flow_for(metric, [x1], [x2], [th], -(back + eps), dt=dt)
    jac = _jacobi_extra(metric)
    state = (b1, b2, bth, np.array([[0.0, 1.0]]))
    lead = back + eps
    n = max(int(np.ceil(lead / dt)), 1)
    for _ in range(n):
        state = _rk4(metric, state, lead / n, jac)
    ys = [state[3][0].copy()]
    for k in range(1, trace.t.size):
        state = _rk4(metric, state, trace.t[k] - trace.t[k - 1], jac)
        ys.append(state[3][0].copy())
    ys = np.array(ys)
    y, dy = ys[:, 0], ys[:, 1]
    if np.any(y <= 0):
        raise ConjugatePointError("Jacobi field vanished along the geodesic (conjugate point)")
    K = metric.gaussian_curvature(trace.x1, trace.x2)
    return RiccatiSolution(trace.t.copy(), dy / y, y, dy, K, eps)


def riccati_field(metric, x1, x2, theta, eps=0.1, dt=2e-3):
    """Riccati value ``a(x, v)`` at arbitrary phase points.

    For each point the Jacobi propagator is integrated backward to ``eps``
    before the entry point; the initial slope that makes ``y`` vanish there
    gives ``a = y'/y`` at the point.  This solves ``X a + a^2 + K = 0`` up to
    the ODE error, pointwise, without interpolation.
    """
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    B = x1.size
    # on the reversed flow (y, y') evolves by (-y', K y)
    def rev_mat(a1, a2, at, Y):
        K = metric.gaussian_curvature(a1, a2)
        out = np.empty_like(Y)
        out[:, 0, :] = -Y[:, 1, :]
        out[:, 1, :] = K[:, None] * Y[:, 0, :]
        return out

    Y0 = np.broadcast_to(np.eye(2), (B, 2, 2)).copy()
    res = shoot(metric, x1, x2, theta + np.pi, dt=dt, extra=rev_mat, y0=Y0)
    e1, e2, eth, Y = flow_for(metric, res.x1, res.x2, res.theta, eps, dt=dt, extra=rev_mat, y0=res.y)
    # Y maps (y, y') at the point to (y, y') eps before entry
    a = -Y[:, 0, 0] / Y[:, 0, 1]
    return a


# ---------------------------------------------------------------------------
# simplicity diagnostics
# ---------------------------------------------------------------------------

def check_simple(metric, n_beta=32, n_mu=33, delta=0.05, dt=2e-3, eps=0.1) -> dict:
    """Report boundary convexity, maximal exit time and a conjugate point scan.

    Simplicity is certified only at the sampled resolution.
    """
    beta = np.linspace(0, TWO_PI, n_beta, endpoint=False)
    lam, l1, l2, _ = metric.all(np.cos(beta), np.sin(beta))
    # second fundamental form of the unit circle, up to a positive factor
    margin = np.exp(-lam) * (1.0 + np.cos(beta) * l1 + np.sin(beta) * l2)
    mu = np.linspace(-np.pi / 2 + delta, np.pi / 2 - delta, n_mu)
    B, M = np.meshgrid(beta, mu, indexing="ij")
    x1, x2, th = boundary_to_phase(B.ravel(), M.ravel())
    # Jacobi field started eps before entry, tracked to the exit
    jac = _jacobi_extra(metric)
    s1, s2, sth, _ = flow_for(metric, x1, x2, th, -eps, dt=dt)
    y0 = np.tile([0.0, 1.0], (x1.size, 1))
    _, _, _, y_entry = flow_for(metric, s1, s2, sth, eps, dt=dt, extra=jac, y0=y0)
    res = shoot(metric, x1, x2, th, dt=dt, extra=jac, y0=y_entry, record=True)
    min_y = min(float(np.min(p[4][:, 0])) for p in res.paths)
    conj_free = min_y > 0
    strictly_convex = bool(np.min(margin) > 0)
    return {
        "metric": metric.describe(),
        "convexity_margin": float(np.min(margin)),
        "strictly_convex": strictly_convex,
        "max_exit_time": float(np.max(res.tau)),
        "min_jacobi": min_y,
        "no_conjugate_points": bool(conj_free),
        "simple_at_resolution": bool(strictly_convex and conj_free),
    }
