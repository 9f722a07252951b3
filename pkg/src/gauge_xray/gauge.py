"""Connections, Higgs fields and gauge transformations on the disk.

Matrix valued functions of ``x`` are objects with ``value(x1, x2)`` and
``grad(x1, x2)`` returning arrays of shape ``(..., n, n)``.  Shipped fields
are polynomials times a compactly supported envelope, with exact gradients;
composite fields (gauge transforms, shifted connections) combine exact
pieces, and anything else falls back to fourth order finite differences.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.interpolate import RectBivariateSpline
from scipy.linalg import expm

from .geometry import IsothermalMetric, GeometryError

# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

_S1 = np.array([[0, 1], [1, 0]], dtype=complex)
_S2 = np.array([[0, -1j], [1j, 0]], dtype=complex)
_S3 = np.array([[1, 0], [0, -1]], dtype=complex)


def generator(name: str, n: int) -> np.ndarray:
    """Named basis matrix.

    ``"1"`` and ``"i"`` are ``Id`` and ``i Id`` for any ``n``; for ``n = 2``
    ``"s1".."s3"`` are the Pauli matrices and ``"is1".."is3"`` their skew
    Hermitian multiples.  ``"Eab"`` is the matrix unit at row ``a``, column ``b``.
    """
    I = np.eye(n, dtype=complex)
    if name == "1":
        return I
    if name == "i":
        return 1j * I
    if name.startswith("E") and len(name) == 3:
        a, b = int(name[1]), int(name[2])
        E = np.zeros((n, n), dtype=complex)
        E[a, b] = 1.0
        return E
    pauli = {"s1": _S1, "s2": _S2, "s3": _S3}
    if n == 2:
        if name in pauli:
            return pauli[name].copy()
        if name.startswith("i") and name[1:] in pauli:
            return 1j * pauli[name[1:]]
    raise ValueError(f"unknown generator {name!r} for n={n}")


def _coef(c) -> complex:
    if isinstance(c, (list, tuple)):
        return complex(c[0], c[1])
    return complex(c)


# ---------------------------------------------------------------------------
# matrix fields
# ---------------------------------------------------------------------------

_FD_STEP = 1e-3


def fd_grad(fun, x1, x2, step=_FD_STEP):
    """Fourth order central differences of a matrix function of ``x``."""
    def d(axis):
        def at(k):
            return fun(x1 + k * step, x2) if axis == 0 else fun(x1, x2 + k * step)
        return (-at(2) + 8 * at(1) - 8 * at(-1) + at(-2)) / (12.0 * step)
    return d(0), d(1)


class MatrixField:
    """Base class: ``value`` must be overridden, ``grad`` defaults to finite differences."""

    n: int

    def value(self, x1, x2):
        raise NotImplementedError

    def grad(self, x1, x2):
        return fd_grad(self.value, x1, x2)

    def __call__(self, x1, x2):
        return self.value(x1, x2)


def _shape(x1, x2):
    return np.broadcast(np.asarray(x1), np.asarray(x2)).shape


class ZeroField(MatrixField):
    def __init__(self, n):
        self.n = n

    def value(self, x1, x2):
        return np.zeros(_shape(x1, x2) + (self.n, self.n), dtype=complex)

    def grad(self, x1, x2):
        z = self.value(x1, x2)
        return z, z.copy()


class ConstantField(MatrixField):
    def __init__(self, M):
        self.M = np.asarray(M, dtype=complex)
        self.n = self.M.shape[0]

    def value(self, x1, x2):
        return np.broadcast_to(self.M, _shape(x1, x2) + self.M.shape).copy()

    def grad(self, x1, x2):
        z = np.zeros(_shape(x1, x2) + self.M.shape, dtype=complex)
        return z, z.copy()


def envelope(x1, x2, rho=0.9, m=4):
    """``chi = (1 - r^2/rho^2)_+^m`` and its gradient."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    q = 1.0 - (x1 * x1 + x2 * x2) / rho**2
    qp = np.maximum(q, 0.0)
    chi = qp**m
    dchi = -2.0 * m * qp ** (m - 1) / rho**2
    return chi, dchi * x1, dchi * x2


class EnvelopeField(MatrixField):
    """``chi(x) sum_g p_g(x) G_g + C`` with exact gradient.

    Parameters
    ----------
    n : int
    terms : list of (generator name, polynomial coefficients)
    const : list of (generator name, coefficient), optional
        Constant part, not multiplied by the envelope.
    rho, m : envelope radius and exponent.
    """

    def __init__(self, n, terms=(), const=(), rho=0.9, m=4):
        self.n = n
        self.terms = [(generator(g, n), list(c)) for g, c in terms]
        self.C = np.zeros((n, n), dtype=complex)
        for g, c in const:
            self.C += _coef(c) * generator(g, n)
        self.rho, self.m = rho, m
        # monomial coefficient matrices, shape (6, n*n)
        self._M = np.zeros((6, n * n), dtype=complex)
        for G, coefs in self.terms:
            for i, c in enumerate(coefs[:6]):
                self._M[i] += _coef(c) * G.reshape(-1)
        self.spec = {"terms": [[g, list(c)] for g, c in terms],
                     "const": [[g, c] for g, c in const], "rho": rho, "m": m}

    def _eval(self, x1, x2, need_grad):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        sh = _shape(x1, x2)
        n = self.n
        if not self.terms:
            v = np.broadcast_to(self.C, sh + (n, n)).astype(complex)
            z = np.zeros(sh + (n, n), dtype=complex)
            return v, z, z.copy()
        x1, x2 = np.broadcast_arrays(x1, x2)
        chi, c1, c2 = envelope(x1, x2, self.rho, self.m)
        one = np.ones_like(x1)
        zero = np.zeros_like(x1)
        mono = np.stack([one, x1, x2, x1 * x1, x1 * x2, x2 * x2], axis=-1)
        v = (chi[..., None] * mono) @ self._M + self.C.reshape(-1)
        v = v.reshape(sh + (n, n))
        if not need_grad:
            return v, None, None
        m1 = np.stack([zero, one, zero, 2 * x1, x2, zero], axis=-1)
        m2 = np.stack([zero, zero, one, zero, x1, 2 * x2], axis=-1)
        g1 = ((c1[..., None] * mono + chi[..., None] * m1) @ self._M).reshape(sh + (n, n))
        g2 = ((c2[..., None] * mono + chi[..., None] * m2) @ self._M).reshape(sh + (n, n))
        return v, g1, g2

    def value(self, x1, x2):
        return self._eval(x1, x2, False)[0]

    def grad(self, x1, x2):
        _, g1, g2 = self._eval(x1, x2, True)
        return g1, g2


class SumField(MatrixField):
    def __init__(self, *fields):
        self.fields = fields
        self.n = fields[0].n

    def value(self, x1, x2):
        return sum(f.value(x1, x2) for f in self.fields)

    def grad(self, x1, x2):
        gs = [f.grad(x1, x2) for f in self.fields]
        return sum(g[0] for g in gs), sum(g[1] for g in gs)


class ScalarTimesId(MatrixField):
    """``c * s(x) * Id`` for a scalar function with known gradient."""

    def __init__(self, n, fun, c=1.0):
        self.n, self.fun, self.c = n, fun, c

    def value(self, x1, x2):
        p = getattr(self.fun, "p", None)
        v = p(x1, x2) if p is not None else self.fun(x1, x2)[0]
        return (self.c * v)[..., None, None] * np.eye(self.n)

    def grad(self, x1, x2):
        _, d1, d2 = self.fun(x1, x2)
        I = np.eye(self.n)
        return (self.c * d1)[..., None, None] * I, (self.c * d2)[..., None, None] * I


# ---------------------------------------------------------------------------
# connections, Higgs fields, pairs
# ---------------------------------------------------------------------------

def _is_skew_on(fieldobj, pts, tol=1e-12):
    v = fieldobj.value(*pts)
    return bool(np.max(np.abs(v + np.conj(np.swapaxes(v, -1, -2))), initial=0.0) <= tol)


def _test_points():
    t = np.linspace(-1, 1, 13)
    X1, X2 = np.meshgrid(t, t, indexing="ij")
    keep = X1**2 + X2**2 <= 1.0
    return X1[keep], X2[keep]


@dataclass
class Connection:
    """``A = A1 dx1 + A2 dx2`` with matrix valued components."""

    A1: MatrixField
    A2: MatrixField
    unitary_flag: bool = False

    def __post_init__(self):
        if self.A1.n != self.A2.n:
            raise ValueError("connection components differ in size")
        if self.unitary_flag:
            pts = _test_points()
            if not (_is_skew_on(self.A1, pts) and _is_skew_on(self.A2, pts)):
                raise ValueError("connection flagged unitary is not skew-Hermitian")

    @property
    def n(self):
        return self.A1.n


@dataclass
class HiggsField:
    phi: MatrixField
    skew_flag: bool = False

    def __post_init__(self):
        if self.skew_flag and not _is_skew_on(self.phi, _test_points()):
            raise ValueError("Higgs field flagged skew is not skew-Hermitian")

    @property
    def n(self):
        return self.phi.n


@dataclass
class AttenuationPair:
    connection: Connection
    higgs: HiggsField
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.connection.n != self.higgs.n:
            raise ValueError("connection and Higgs field sizes differ")

    @property
    def n(self):
        return self.connection.n

    @property
    def unitary(self):
        return self.connection.unitary_flag and self.higgs.skew_flag

    def fields(self, x1, x2):
        """``(A1, A2, Phi)`` at points."""
        c = self.connection
        return c.A1.value(x1, x2), c.A2.value(x1, x2), self.higgs.phi.value(x1, x2)

    def attenuation(self, metric, x1, x2, theta):
        """``Phi(x) + e^{-lam}(A1 cos + A2 sin)`` for arrays of phase points."""
        A1, A2, P = self.fields(x1, x2)
        el = np.exp(-metric.lam(x1, x2))
        c = (el * np.cos(theta))[..., None, None]
        s = (el * np.sin(theta))[..., None, None]
        return P + c * A1 + s * A2

    def a_of_v(self, metric, x1, x2, theta):
        """Connection part ``A(v)`` alone."""
        c = self.connection
        el = np.exp(-metric.lam(x1, x2))
        return ((el * np.cos(theta))[..., None, None] * c.A1.value(x1, x2)
                + (el * np.sin(theta))[..., None, None] * c.A2.value(x1, x2))


def make_pair(A1, A2, phi, unitary=None, meta=None) -> AttenuationPair:
    if unitary is None:
        pts = _test_points()
        conn_u = _is_skew_on(A1, pts) and _is_skew_on(A2, pts)
        phi_u = _is_skew_on(phi, pts)
    else:
        conn_u = phi_u = unitary
    return AttenuationPair(Connection(A1, A2, conn_u), HiggsField(phi, phi_u), meta or {})


def zero_pair(n=1) -> AttenuationPair:
    return make_pair(ZeroField(n), ZeroField(n), ZeroField(n), meta={"family": "zero", "n": n})


def pair_from_spec(spec: dict) -> AttenuationPair:
    """Build a pair from a config dictionary.

    Either ``{"preset": name, ...overrides}`` or an explicit
    ``{"n": n, "A1": terms, "A2": terms, "Phi": terms, "Phi_const": const,
    "rho": 0.9, "m": 4}`` where ``terms`` is a list of
    ``[generator, [c0, c1, c2, c11, c12, c22]]`` and ``const`` a list of
    ``[generator, coefficient]``.  Coefficients are real numbers or
    ``[re, im]`` pairs.
    """
    spec = dict(spec)
    if "preset" in spec:
        name = spec.pop("preset")
        if name not in PRESETS:
            raise ValueError(f"unknown pair preset {name!r}; expected one of {sorted(PRESETS)}")
        base = PRESETS[name](**spec)
        return pair_from_spec(base) if isinstance(base, dict) else base
    allowed = {"n", "A1", "A2", "Phi", "Phi_const", "A1_const", "A2_const", "rho", "m", "family"}
    unknown = set(spec) - allowed
    if unknown:
        raise ValueError(f"unknown pair keys {sorted(unknown)}")
    n = int(spec.get("n", 1))
    rho = float(spec.get("rho", 0.9))
    m = int(spec.get("m", 4))
    A1 = EnvelopeField(n, spec.get("A1", []), spec.get("A1_const", []), rho, m)
    A2 = EnvelopeField(n, spec.get("A2", []), spec.get("A2_const", []), rho, m)
    P = EnvelopeField(n, spec.get("Phi", []), spec.get("Phi_const", []), rho, m)
    meta = {"spec": {k: v for k, v in spec.items()}}
    return make_pair(A1, A2, P, meta=meta)


def _preset_zero(n=1):
    return {"n": n, "family": "zero"}


def _preset_constant_higgs(c=(0.7, 0.0), n=1, gen="1"):
    """``Phi = c G`` constant; with ``c`` purely imaginary and ``G = Id`` this is ``i kappa``."""
    return {"n": n, "Phi_const": [[gen, list(c) if isinstance(c, (list, tuple)) else c]],
            "family": "constant_higgs"}


def _preset_scalar_unitary(scale=1.0):
    s = scale
    return {"n": 1, "family": "scalar_unitary",
            "A1": [["i", [0.3 * s, 0.0, 1.2 * s]]],
            "A2": [["i", [-0.4 * s, -0.9 * s, 0.0, 0.0, 0.5 * s]]],
            "Phi": [["i", [0.6 * s, 0.8 * s, 0.0, 0.0, 0.0, -0.5 * s]]]}


def _preset_su2(scale=1.0, higgs=True):
    s = scale
    d = {"n": 2, "family": "su2",
         "A1": [["is1", [0.5 * s, 0.0, 0.8 * s]], ["is3", [0.2 * s, -0.6 * s]],
                ["i", [0.3 * s]]],
         "A2": [["is2", [-0.4 * s, 0.7 * s]], ["is3", [0.3 * s, 0.0, 0.0, 0.5 * s]],
                ["is1", [0.0, 0.0, -0.4 * s]]]}
    if higgs:
        d["Phi"] = [["is3", [0.6 * s, 0.0, 0.5 * s]], ["is1", [0.0, 0.7 * s]], ["i", [0.25 * s]]]
    return d


def _preset_su2_connection(scale=1.0):
    d = _preset_su2(scale, higgs=False)
    d["family"] = "su2_connection"
    return d


def _preset_general(scale=1.0):
    """Non-unitary ``gl(2)`` pair."""
    s = scale
    return {"n": 2, "family": "general",
            "A1": [["s1", [0.4 * s, 0.3 * s]], ["E01", [0.0, 0.0, 0.5 * s]]],
            "A2": [["is2", [0.3 * s, 0.0, -0.4 * s]], ["1", [0.2 * s, 0.3 * s]]],
            "Phi": [["s3", [0.5 * s]], ["E10", [0.0, 0.4 * s]]]}


PRESETS = {
    "zero": _preset_zero,
    "constant_higgs": _preset_constant_higgs,
    "scalar_unitary": _preset_scalar_unitary,
    "su2": _preset_su2,
    "su2_connection": _preset_su2_connection,
    "general": _preset_general,
}


# ---------------------------------------------------------------------------
# pointwise operations
# ---------------------------------------------------------------------------

def _pt(p):
    x1, x2, th = p.x1, p.x2, p.theta
    if x1 * x1 + x2 * x2 > 1.0 + 1e-12:
        raise GeometryError("point outside the disk")
    return np.array(x1), np.array(x2), np.array(th)


def eval_attenuation(pair, metric, p):
    """``Phi(x) + e^{-lam(x)}(A1 cos + A2 sin)`` at a phase point."""
    return pair.attenuation(metric, *_pt(p))


def star_A(pair, metric, p, check=True, tol=1e-8):
    """``(*A)(v) = e^{-lam}(A1 sin - A2 cos) = -V(A(v))``.

    The coordinate value is returned; when ``check`` the spectral fiber
    derivative of ``A(v)`` is compared against it.
    """
    x1, x2, th = _pt(p)
    c = pair.connection
    el = np.exp(-metric.lam(x1, x2))
    coord = el * (c.A1.value(x1, x2) * np.sin(th) - c.A2.value(x1, x2) * np.cos(th))
    if check:
        spec = -spectral_theta_derivative(lambda t: pair.a_of_v(metric, x1, x2, t), th)
        err = np.max(np.abs(spec - coord))
        if err > tol * max(1.0, np.max(np.abs(coord))):
            raise ArithmeticError(f"star_A consistency failure: {err:.3e}")
    return coord


def spectral_theta_derivative(fun, theta, nt=8):
    """Derivative in ``theta`` of a fiber band-limited function by sampling and FFT."""
    ts = 2 * np.pi * np.arange(nt) / nt
    vals = np.stack([fun(t) for t in ts], axis=0)
    F = np.fft.fft(vals, axis=0) / nt
    k = np.fft.fftfreq(nt, 1.0 / nt)
    k[nt // 2] = 0.0
    ph = np.exp(1j * k * theta)
    return np.tensordot(1j * k * ph, F, axes=(0, 0))


def star_F_coord(pair, metric, x1, x2):
    """``*F_A = e^{-2 lam}(d1 A2 - d2 A1 + [A1, A2])`` at points."""
    c = pair.connection
    A1 = c.A1.value(x1, x2)
    A2 = c.A2.value(x1, x2)
    _, d2A1 = c.A1.grad(x1, x2)
    d1A2, _ = c.A2.grad(x1, x2)
    e = np.exp(-2.0 * metric.lam(x1, x2))[..., None, None]
    return e * (d1A2 - d2A1 + A1 @ A2 - A2 @ A1)


def curvature_star_FA(pair, metric, x):
    """``*F_A`` at a spatial point ``x = (x1, x2)`` (or arrays of points)."""
    x1, x2 = np.asarray(x[0], dtype=float), np.asarray(x[1], dtype=float)
    if np.any(x1**2 + x2**2 > 1.0 + 1e-12):
        raise GeometryError("point outside the disk")
    return star_F_coord(pair, metric, x1, x2)


def star_F_sm(pair, metric, grid):
    """Second path: ``Xperp(A) - X(*A) + [*A, A]`` on the SM grid, fiber averaged.

    Returns ``(average, fiber_spread)`` with shapes ``(nx, nx, n, n)`` and a
    scalar measuring how far the SM expression is from fiber-constant.
    """
    from . import bundle

    F = pair_on_grid(pair, metric, grid)
    A = F["Av"]
    sA = F["starA"]
    comm = sA @ A - A @ sA
    val = bundle.Xperp_op(metric, grid, A) - bundle.X_op(metric, grid, sA) + comm
    avg = val.mean(axis=2)
    spread = float(np.max(np.abs(val - avg[:, :, None])[grid.mask]))
    return avg, spread


def cov_dPhi(pair, metric, p):
    """``(d_A Phi)(v)`` and ``(*d_A Phi)(v)`` at a phase point."""
    x1, x2, th = _pt(p)
    return cov_dPhi_arrays(pair, metric, x1, x2, th)


def dA_Phi_components(pair, x1, x2):
    """Coordinate components ``d_j Phi + [A_j, Phi]``."""
    c = pair.connection
    P = pair.higgs.phi.value(x1, x2)
    g1, g2 = pair.higgs.phi.grad(x1, x2)
    A1, A2 = c.A1.value(x1, x2), c.A2.value(x1, x2)
    return g1 + A1 @ P - P @ A1, g2 + A2 @ P - P @ A2


def cov_dPhi_arrays(pair, metric, x1, x2, th):
    D1, D2 = dA_Phi_components(pair, x1, x2)
    el = np.exp(-metric.lam(x1, x2))[..., None, None]
    c = np.cos(th)[..., None, None]
    s = np.sin(th)[..., None, None]
    return el * (c * D1 + s * D2), el * (s * D1 - c * D2)


# ---------------------------------------------------------------------------
# gauge transformations
# ---------------------------------------------------------------------------

class _ExpFactor:
    """``exp(psi(x) G)`` for constant ``G`` via one eigendecomposition."""

    def __init__(self, G, psi):
        self.G = np.asarray(G, dtype=complex)
        self.psi = psi
        n = self.G.shape[0]
        self.nilpotent = np.allclose(np.linalg.matrix_power(self.G, n), 0.0, atol=1e-14)
        w, P = np.linalg.eig(self.G)
        # other defective generators go through expm
        self.diag = np.linalg.cond(P) < 1e6
        if self.diag:
            self.w, self.P, self.Pinv = w, P, np.linalg.inv(P)

    def exp(self, t):
        t = np.asarray(t, dtype=float)
        if self.nilpotent:
            n = self.G.shape[0]
            out = np.broadcast_to(np.eye(n, dtype=complex), t.shape + (n, n)).copy()
            term = out.copy()
            for k in range(1, n):
                term = term @ self.G * (t[..., None, None] / k)
                out = out + term
            return out
        if not self.diag:
            return expm(t[..., None, None] * self.G)
        e = np.exp(t[..., None] * self.w)
        return (self.P * e[..., None, :]) @ self.Pinv


def bump_profile(q0=1.0, rho=0.9, m=4):
    def f(x1, x2):
        chi, c1, c2 = envelope(x1, x2, rho, m)
        return q0 * chi, q0 * c1, q0 * c2
    return f


def poly_profile(q0=1.0):
    """``q0 (1 - r^2)^2``: equals zero on the unit circle only."""
    def f(x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        w = 1.0 - x1 * x1 - x2 * x2
        return q0 * w * w, -4.0 * q0 * w * x1, -4.0 * q0 * w * x2
    return f


class GaugeTransform(MatrixField):
    """``Q(x) = prod_j exp(psi_j(x) G_j)`` with exact ``Q^{-1} dQ``.

    Parameters
    ----------
    factors : list of (G, profile)
        ``profile(x1, x2) -> (psi, d1 psi, d2 psi)``.
    boundary_identity_flag : bool
        Assert ``Q = Id`` on ``|x| >= 1 - collar``.
    collar : float
    """

    def __init__(self, n, factors, boundary_identity_flag=True, collar=0.0, meta=None):
        self.n = n
        self.factors = [_ExpFactor(G, p) for G, p in factors]
        self.boundary_identity_flag = boundary_identity_flag
        self.collar = collar
        self.meta = meta or {}
        if boundary_identity_flag:
            b = np.linspace(0, 2 * np.pi, 64, endpoint=False)
            for r in np.linspace(1.0 - collar, 1.0, 3 if collar > 0 else 1):
                q = self.value(r * np.cos(b), r * np.sin(b))
                if np.max(np.abs(q - np.eye(n))) >= 1e-10:
                    raise ValueError("gauge flagged boundary-identity differs from Id on the collar")

    def evaluate(self, x1, x2):
        """``(Q, Q^{-1}, Q^{-1} d1 Q, Q^{-1} d2 Q)`` in one pass."""
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        sh = _shape(x1, x2) + (self.n, self.n)
        Q = np.broadcast_to(np.eye(self.n, dtype=complex), sh).copy()
        Qi = Q.copy()
        w1 = np.zeros(sh, dtype=complex)
        w2 = np.zeros(sh, dtype=complex)
        # Q = E_1 ... E_m; fold factors from the left: Q_new = Q E, so
        # Q_new^{-1} dQ_new = E^{-1} (Q^{-1} dQ) E + dpsi G
        for f in self.factors:
            psi, d1, d2 = f.psi(x1, x2)
            psi = np.broadcast_to(psi, sh[:-2])
            E = f.exp(psi)
            Ei = f.exp(-psi)
            w1 = Ei @ w1 @ E + np.asarray(d1)[..., None, None] * f.G
            w2 = Ei @ w2 @ E + np.asarray(d2)[..., None, None] * f.G
            Q = Q @ E
            Qi = Ei @ Qi
        return Q, Qi, w1, w2

    def value(self, x1, x2):
        return self.evaluate(x1, x2)[0]

    def inverse(self, x1, x2):
        return self.evaluate(x1, x2)[1]

    def maurer_cartan(self, x1, x2):
        """``Q^{-1} d_1 Q`` and ``Q^{-1} d_2 Q``."""
        _, _, w1, w2 = self.evaluate(x1, x2)
        return w1, w2

    def grad(self, x1, x2):
        Q, _, w1, w2 = self.evaluate(x1, x2)
        return Q @ w1, Q @ w2


def identity_gauge(n=1):
    return GaugeTransform(n, [], meta={"family": "identity", "n": n})


def gauge_from_spec(spec: dict) -> GaugeTransform:
    """Build ``Q`` from ``{"n", "factors": [{"gen", "coef", "profile", "q0", "rho", "m"}], "collar"}``.

    ``profile`` is ``"poly"`` (``q0 (1-r^2)^2``, identity only at ``r = 1``)
    or ``"bump"`` (``q0 chi``, identity on ``|x| >= rho``).  ``gen`` may be a
    list of ``[generator, coefficient]`` pairs to form a combination.
    """
    spec = dict(spec)
    if "preset" in spec:
        name = spec.pop("preset")
        if name not in GAUGE_PRESETS:
            raise ValueError(f"unknown gauge preset {name!r}")
        return gauge_from_spec(GAUGE_PRESETS[name](**spec))
    allowed = {"n", "factors", "collar", "family", "boundary_identity"}
    unknown = set(spec) - allowed
    if unknown:
        raise ValueError(f"unknown gauge keys {sorted(unknown)}")
    n = int(spec.get("n", 1))
    facs = []
    for f in spec.get("factors", []):
        gen = f["gen"]
        if isinstance(gen, str):
            G = _coef(f.get("coef", 1.0)) * generator(gen, n)
        else:
            G = sum(_coef(c) * generator(g, n) for g, c in gen)
        prof = f.get("profile", "bump")
        q0 = float(f.get("q0", 1.0))
        if prof == "bump":
            p = bump_profile(q0, float(f.get("rho", 0.9)), int(f.get("m", 4)))
        elif prof == "poly":
            p = poly_profile(q0)
        else:
            raise ValueError(f"unknown gauge profile {prof!r}")
        facs.append((G, p))
    return GaugeTransform(n, facs, bool(spec.get("boundary_identity", True)),
                          float(spec.get("collar", 0.0)), meta={"spec": spec})


def _gauge_scalar_phase(q0=1.0, profile="poly"):
    return {"n": 1, "family": "scalar_phase",
            "factors": [{"gen": "i", "profile": profile, "q0": q0}]}


def _gauge_su2(q0=1.0):
    """Product of two non-commuting ``SU(2)`` bumps, identity outside ``|x| < 0.9``."""
    return {"n": 2, "family": "su2", "collar": 0.1,
            "factors": [{"gen": [["is1", 1.0], ["is3", 0.5]], "profile": "bump", "q0": 1.6 * q0},
                        {"gen": "is2", "profile": "bump", "q0": 1.2 * q0, "rho": 0.8, "m": 3}]}


def _gauge_gl2(q0=1.0):
    """Non-unitary ``GL(2)`` gauge."""
    return {"n": 2, "family": "gl2", "collar": 0.1,
            "factors": [{"gen": [["s1", 0.6], ["is3", 1.0]], "profile": "bump", "q0": q0},
                        {"gen": "E01", "profile": "bump", "q0": 1.5 * q0, "rho": 0.85}]}


GAUGE_PRESETS = {
    "scalar_phase": _gauge_scalar_phase,
    "su2": _gauge_su2,
    "gl2": _gauge_gl2,
}


class _GaugedA(MatrixField):
    def __init__(self, Q, A, j):
        self.Q, self.A, self.j, self.n = Q, A, j, A.n

    def value(self, x1, x2):
        Q, Qi, w1, w2 = self.Q.evaluate(x1, x2)
        return (w1, w2)[self.j] + Qi @ self.A.value(x1, x2) @ Q


class _GaugedPhi(MatrixField):
    def __init__(self, Q, P):
        self.Q, self.P, self.n = Q, P, P.n

    def value(self, x1, x2):
        Q, Qi, _, _ = self.Q.evaluate(x1, x2)
        return Qi @ self.P.value(x1, x2) @ Q

    def grad(self, x1, x2):
        # d(Q^-1 P Q) = -w Q^-1PQ + Q^-1 dP Q + Q^-1 P Q w
        Q, Qi, w1, w2 = self.Q.evaluate(x1, x2)
        B = Qi @ self.P.value(x1, x2) @ Q
        g1, g2 = self.P.grad(x1, x2)
        return (-w1 @ B + Qi @ g1 @ Q + B @ w1,
                -w2 @ B + Qi @ g2 @ Q + B @ w2)


class GaugedPair(AttenuationPair):
    """Gauge transform of a pair; evaluates ``Q`` once per call of :meth:`fields`."""

    def __init__(self, connection, higgs, meta, base, Q):
        super().__init__(connection, higgs, meta)
        self.base, self.Q = base, Q

    def fields(self, x1, x2):
        Q, Qi, w1, w2 = self.Q.evaluate(x1, x2)
        A1, A2, P = self.base.fields(x1, x2)
        return w1 + Qi @ A1 @ Q, w2 + Qi @ A2 @ Q, Qi @ P @ Q


def apply_gauge(pair, Q: GaugeTransform, metric=None, cond_max=1e10) -> AttenuationPair:
    """``(Q^{-1} dQ + Q^{-1} A Q, Q^{-1} Phi Q)``."""
    if Q.n != pair.n:
        raise ValueError("gauge and pair sizes differ")
    x1, x2 = _test_points()
    qs = Q.value(x1, x2)
    if np.max(np.linalg.cond(qs)) > cond_max:
        raise np.linalg.LinAlgError("gauge transformation is near singular")
    q_unitary = np.allclose(np.conj(np.swapaxes(qs, -1, -2)) @ qs, np.eye(pair.n), atol=1e-12)
    conn = pair.connection
    return GaugedPair(
        Connection(_GaugedA(Q, conn.A1, 0), _GaugedA(Q, conn.A2, 1), conn.unitary_flag and q_unitary),
        HiggsField(_GaugedPhi(Q, pair.higgs.phi), pair.higgs.skew_flag and q_unitary),
        {"gauged": True, "base": pair.meta, "gauge": Q.meta}, pair, Q)


# ---------------------------------------------------------------------------
# area primitive and the shifted family
# ---------------------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(40)
_TABLE_HALF = 1.05


@lru_cache(maxsize=16)
def _p_table(metric):
    """Spline of ``int_0^{x1} e^{2 lam(t, x2)} dt`` on a square slightly larger than the disk.

    The conformal factor is evaluated without radial clipping up to
    ``|x| = 1.3`` so the tabulated function is smooth across the circle.
    """
    g = np.linspace(-_TABLE_HALF, _TABLE_HALF, 211)
    A1, A2 = np.meshgrid(g, g, indexing="ij")
    half = 0.5 * A1[..., None]
    t = half * (_GL_X + 1.0)
    x2 = np.broadcast_to(A2[..., None], t.shape)
    r = np.hypot(t, x2)
    sc = np.where(r > 1.3, 1.3 / np.maximum(r, 1e-300), 1.0)
    P = np.sum(_GL_W * np.exp(2.0 * metric.lam(t * sc, x2 * sc)), axis=-1) * half[..., 0]
    return RectBivariateSpline(g, g, P, kx=5, ky=5)


def _clip(metric, t, x2):
    r = np.hypot(t, x2)
    sc = np.where(r > 1.0, 1.0 / np.maximum(r, 1e-300), 1.0)
    return metric.all(t * sc, x2 * sc)


@dataclass
class AreaPrimitive:
    """``phi = p dx2`` with ``p(x1, x2) = int_0^{x1} e^{2 lam(t, x2)} dt``."""

    metric: IsothermalMetric

    def p(self, x1, x2):
        """Value only, from a quintic spline table on ``[-1.05, 1.05]^2``."""
        x1, x2 = np.broadcast_arrays(np.asarray(x1, dtype=float), np.asarray(x2, dtype=float))
        if x1.size and max(np.abs(x1).max(), np.abs(x2).max()) > _TABLE_HALF:
            return self._eval(x1, x2)[0]
        return _p_table(self.metric).ev(x1, x2)

    def _eval(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        x1, x2 = np.broadcast_arrays(x1, x2)
        half = 0.5 * x1[..., None]
        t = half * (_GL_X + 1.0)
        lam, _, l2, _ = _clip(self.metric, t, x2[..., None])
        e = np.exp(2.0 * lam)
        p = np.sum(_GL_W * e, axis=-1) * half[..., 0]
        p2 = np.sum(_GL_W * 2.0 * l2 * e, axis=-1) * half[..., 0]
        lam0 = _clip(self.metric, x1, x2)[0]
        return p, np.exp(2.0 * lam0), p2

    def __call__(self, x1, x2):
        return self._eval(x1, x2)

    def residual(self, nx=64):
        """``max |d1 p - e^{2 lam}|`` by a fourth order stencil on the disk."""
        x = np.linspace(-0.98, 0.98, nx)
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        keep = X1**2 + X2**2 < 0.95**2
        d = 1e-3
        pp = [self.p(X1 + k * d, X2) for k in (-2, -1, 1, 2)]
        d1 = (pp[0] - 8 * pp[1] + 8 * pp[2] - pp[3]) / (12 * d)
        return float(np.max(np.abs(d1 - np.exp(2 * self.metric.lam(X1, X2)))[keep]))


def area_primitive(metric) -> AreaPrimitive:
    return AreaPrimitive(metric)


def build_As(pair, metric, s: float) -> AttenuationPair:
    """Connection ``A - i s phi Id`` with the Higgs field unchanged.

    ``i *F`` of the result is ``i *F_A + s Id``.  The opposite convention
    ``A + i s phi`` is ``build_As(pair, metric, -s)``.
    """
    if s == 0:
        return pair
    n = pair.n
    prim = area_primitive(metric)
    shift = ScalarTimesId(n, prim, -1j * s)
    c = pair.connection
    conn = Connection(c.A1, SumField(c.A2, shift), c.unitary_flag)
    meta = dict(pair.meta)
    meta["shift_s"] = meta.get("shift_s", 0.0) + s
    return AttenuationPair(conn, pair.higgs, meta)


def spectral_shift_check(pair, metric, s, grid_points=None):
    """Eigenvalues of ``i *F`` before and after the shift on sample points."""
    if grid_points is None:
        t = np.linspace(-0.95, 0.95, 21)
        X1, X2 = np.meshgrid(t, t, indexing="ij")
        keep = X1**2 + X2**2 <= 0.95**2
        grid_points = (X1[keep], X2[keep])
    x1, x2 = grid_points
    F0 = 1j * star_F_coord(pair, metric, x1, x2)
    Fs = 1j * star_F_coord(build_As(pair, metric, s), metric, x1, x2)
    e0 = np.linalg.eigvalsh(0.5 * (F0 + np.conj(np.swapaxes(F0, -1, -2))))
    es = np.linalg.eigvalsh(0.5 * (Fs + np.conj(np.swapaxes(Fs, -1, -2))))
    return e0, es


def spectral_radius_iF(pair, metric, grid_points=None):
    """Largest eigenvalue modulus of ``i *F_A`` over sample points of the disk."""
    if grid_points is None:
        t = np.linspace(-1, 1, 41)
        X1, X2 = np.meshgrid(t, t, indexing="ij")
        keep = X1**2 + X2**2 <= 1.0
        grid_points = (X1[keep], X2[keep])
    F0 = 1j * star_F_coord(pair, metric, *grid_points)
    return float(np.max(np.abs(np.linalg.eigvals(F0)), initial=0.0))


# ---------------------------------------------------------------------------
# grid evaluation
# ---------------------------------------------------------------------------

def pair_on_grid(pair, metric, grid) -> dict:
    """Pair data on the SM grid.

    Keys: ``A1, A2, Phi`` of shape ``(nx, nx, n, n)``; ``Av`` and ``starA``
    of shape ``(nx, nx, ntheta, n, n)``.
    """
    from .bundle import metric_arrays

    X1, X2 = grid.mesh()
    A1, A2, P = pair.fields(X1, X2)
    lam = metric_arrays(metric, grid.nx)[0][..., 0]
    el = np.exp(-lam)[:, :, None, None, None]
    c = np.cos(grid.theta)[None, None, :, None, None]
    s = np.sin(grid.theta)[None, None, :, None, None]
    Av = el * (c * A1[:, :, None] + s * A2[:, :, None])
    starA = el * (s * A1[:, :, None] - c * A2[:, :, None])
    return {"A1": A1, "A2": A2, "Phi": P, "Av": Av, "starA": starA}
