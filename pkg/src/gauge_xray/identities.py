"""Numerical checks of the transport identities behind the injectivity results.

All checks act on array fields of shape ``(nx, nx, ntheta, n)`` over an
:class:`~gauge_xray.bundle.SMGrid` and report through :class:`IdentityReport`.
Inner products are the masked midpoint sums of :mod:`gauge_xray.bundle`, so
test fields should vanish to a few orders at the unit circle; the library in
:func:`test_field` uses ``(1 - |x|^2)^m`` envelopes for that reason.

Operator shorthand used below::

    P = X + A + Phi        Q = Xperp + *A        V = d/dtheta
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from . import bundle
from .bundle import SMGrid, metric_arrays
from .gauge import cov_dPhi_arrays, pair_on_grid, star_F_coord
from .geometry import riccati_field


@dataclass
class IdentityReport:
    """Terms, residual and grid data of one identity check.

    ``residual`` is ``|lhs - rhs|`` (an L2 norm for field identities) and
    ``relative`` divides it by ``scale``, whose meaning is given in ``notes``.
    """

    name: str
    terms: dict
    residual: float
    scale: float
    grid: dict
    slope: float | None = None
    notes: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def relative(self) -> float:
        return self.residual / self.scale if self.scale > 0 else self.residual

    def to_dict(self) -> dict:
        d = asdict(self)
        d["terms"] = {k: _jsonable(v) for k, v in self.terms.items()}
        d["extra"] = {k: _jsonable(v) for k, v in self.extra.items()}
        d["relative"] = self.relative
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _jsonable(v):
    if isinstance(v, (complex, np.complexfloating)):
        return {"re": float(np.real(v)), "im": float(np.imag(v))}
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def refinement_slope(hs, residuals) -> float:
    """Least squares slope of ``log residual`` against ``log h``.

    Needs at least three resolutions.
    """
    hs = np.asarray(hs, dtype=float)
    r = np.asarray(residuals, dtype=float)
    if hs.size < 3:
        raise ValueError("a refinement slope needs at least three resolutions")
    r = np.maximum(r, 1e-300)
    return float(np.polyfit(np.log(hs), np.log(r), 1)[0])


def refine(check, grids, **kw):
    """Run ``check(grid, **kw)`` on several grids and attach the slope of ``relative``.

    Returns the list of reports; the last carries the slope.
    """
    reps = [check(g, **kw) for g in grids]
    if len(reps) >= 3:
        reps[-1].slope = refinement_slope([g.h for g in grids], [r.relative for r in reps])
    return reps


# ---------------------------------------------------------------------------
# test fields
# ---------------------------------------------------------------------------

def test_field(grid: SMGrid, n=1, m=4, modes=(1,), seed=0, coeffs=None):
    """Smooth field ``sum_k c_k(x) (1 - |x|^2)_+^m e^{i k theta}`` with values in C^n.

    ``c_k`` are affine in ``x`` with coefficients drawn from a seeded Philox
    generator unless ``coeffs`` (shape ``(len(modes), 3, n)``) is given.
    """
    X1, X2, TH = grid.sm_mesh()
    env = np.maximum(1.0 - X1**2 - X2**2, 0.0) ** m
    if coeffs is None:
        rng = np.random.Generator(np.random.Philox(seed))
        coeffs = rng.standard_normal((len(modes), 3, n)) + 1j * rng.standard_normal((len(modes), 3, n))
    coeffs = np.asarray(coeffs, dtype=complex)
    u = np.zeros((grid.nx, grid.nx, grid.ntheta, n), dtype=complex)
    for k, c in zip(modes, coeffs):
        poly = c[0] + c[1] * X1[..., None] + c[2] * X2[..., None]
        u += (env * np.exp(1j * k * TH))[..., None] * poly
    return u


# ---------------------------------------------------------------------------
# operators on the grid
# ---------------------------------------------------------------------------

def _mv(M, u):
    return np.einsum("...ij,...j->...i", M, u)


class GridOperators:
    """``P``, ``Q``, ``V`` and the zeroth order coefficients of a pair on a grid."""

    def __init__(self, pair, metric, grid: SMGrid):
        self.pair, self.metric, self.grid = pair, metric, grid
        d = pair_on_grid(pair, metric, grid)
        self.Av = d["Av"]
        self.starA = d["starA"]
        self.Phi = d["Phi"][:, :, None]
        X1, X2 = grid.mesh()
        r = np.hypot(X1, X2)
        sc = np.where(r > 1.0, 1.0 / np.maximum(r, 1e-300), 1.0)
        Y1, Y2 = X1 * sc, X2 * sc
        self.starF = star_F_coord(pair, metric, Y1, Y2)[:, :, None]
        self.star_dAPhi = cov_dPhi_arrays(pair, metric, Y1[..., None], Y2[..., None],
                                          grid.theta[None, None, :])[1]
        self.K = metric_arrays(metric, grid.nx)[3][..., None]

    def X(self, u):
        return bundle.X_op(self.metric, self.grid, u)

    def Xp(self, u):
        return bundle.Xperp_op(self.metric, self.grid, u)

    @staticmethod
    def V(u):
        return bundle.d_theta(u)

    def P(self, u):
        return self.X(u) + _mv(self.Av, u) + _mv(self.Phi, u)

    def Q(self, u):
        return self.Xp(u) + _mv(self.starA, u)

    def norm(self, u):
        return np.sqrt(bundle.norm2(u, self.grid, self.metric))

    def inner(self, u, v):
        return bundle.inner(u, v, self.grid, self.metric)


def _avg(u):
    return np.broadcast_to(u.mean(axis=2, keepdims=True), u.shape)


def _H(u):
    return bundle.hilbert(u)


def _grid_info(grid):
    return {"nx": grid.nx, "ntheta": grid.ntheta, "kmax": grid.kmax, "margin": grid.margin, "h": grid.h}


def _field_report(ops, name, parts, residual_field, notes=""):
    """Report an identity between fields; the scale is the largest part norm."""
    norms = {k: float(ops.norm(v)) for k, v in parts.items()}
    res = float(ops.norm(residual_field))
    return IdentityReport(name, norms, res, max(norms.values(), default=0.0), _grid_info(ops.grid),
                          notes=notes or "relative to the largest term norm")


# ---------------------------------------------------------------------------
# commutator identities
# ---------------------------------------------------------------------------

def commutator_residuals(pair, metric, grid: SMGrid, u) -> dict:
    """Residuals of the Hilbert transform commutators and the frame brackets.

    Returns a dict of :class:`IdentityReport` keyed by

    ``H_X``       ``[H, X] u = Xperp u_0 + (Xperp u)_0``
    ``H_P``       ``[H, X + A + Phi] u = Q u_0 + (Q u)_0``
    ``H_A``       ``[H, A] u = *A u_0 + (*A u)_0``
    ``V_P``       ``[V, P] u = -Q u``
    ``V_Q``       ``[V, Q] u = (X + A) u``
    ``P_Q``       ``[P, Q] u = -(K V + *F_A + *d_A Phi) u``
    """
    ops = GridOperators(pair, metric, grid)
    u = np.asarray(u, dtype=complex)
    u0 = _avg(u)
    out = {}

    Xu, Xpu = ops.X(u), ops.Xp(u)
    lhs = _H(Xu) - ops.X(_H(u))
    rhs = ops.Xp(u0) + _avg(Xpu)
    out["H_X"] = _field_report(ops, "H_X", {"HXu": _H(Xu), "XHu": ops.X(_H(u)), "rhs": rhs}, lhs - rhs)

    Pu, Qu = ops.P(u), ops.Q(u)
    lhs = _H(Pu) - ops.P(_H(u))
    rhs = ops.Q(u0) + _avg(Qu)
    out["H_P"] = _field_report(ops, "H_P", {"HPu": _H(Pu), "PHu": ops.P(_H(u)), "rhs": rhs}, lhs - rhs)

    Au = _mv(ops.Av, u)
    lhs = _H(Au) - _mv(ops.Av, _H(u))
    rhs = _mv(ops.starA, u0) + _avg(_mv(ops.starA, u))
    out["H_A"] = _field_report(ops, "H_A", {"HAu": _H(Au), "AHu": _mv(ops.Av, _H(u)), "rhs": rhs},
                               lhs - rhs)

    Vu = ops.V(u)
    VPu, PVu = ops.V(Pu), ops.P(Vu)
    out["V_P"] = _field_report(ops, "V_P", {"VPu": VPu, "PVu": PVu, "Qu": Qu}, VPu - PVu + Qu)

    VQu, QVu = ops.V(Qu), ops.Q(Vu)
    XAu = Pu - _mv(ops.Phi, u)
    out["V_Q"] = _field_report(ops, "V_Q", {"VQu": VQu, "QVu": QVu, "XAu": XAu}, VQu - QVu - XAu)

    PQu, QPu = ops.P(Qu), ops.Q(Pu)
    zeroth = ops.K * Vu + _mv(ops.starF, u) + _mv(ops.star_dAPhi, u)
    out["P_Q"] = _field_report(ops, "P_Q", {"PQu": PQu, "QPu": QPu, "zeroth": zeroth}, PQu - QPu + zeroth)
    return out


def antisymmetry_residuals(pair, metric, grid: SMGrid, u, g) -> dict:
    """``<Du, g> + <u, Dg>`` for ``D`` in ``V, P, Q``.

    Each is scaled by ``||Du|| ||g|| + ||u|| ||Dg||``.  For ``V`` the identity
    holds exactly in ``theta``; for ``P`` and ``Q`` it needs a unitary pair
    and fields vanishing at the boundary.
    """
    ops = GridOperators(pair, metric, grid)
    u = np.asarray(u, dtype=complex)
    g = np.asarray(g, dtype=complex)
    out = {}
    for name, D in (("V", ops.V), ("P", ops.P), ("Q", ops.Q)):
        Du, Dg = D(u), D(g)
        a, b = ops.inner(Du, g), ops.inner(u, Dg)
        scale = float(ops.norm(Du) * ops.norm(g) + ops.norm(u) * ops.norm(Dg))
        out[name] = IdentityReport("antisym_" + name, {"<Du,g>": a, "<u,Dg>": b}, float(abs(a + b)), scale,
                                   _grid_info(grid), notes="scaled by ||Du|| ||g|| + ||u|| ||Dg||")
    return out


# ---------------------------------------------------------------------------
# energy identity and its sign terms
# ---------------------------------------------------------------------------

def pestov_residual(pair, metric, grid: SMGrid, u) -> IdentityReport:
    """Energy identity for a field vanishing at the boundary.

    Terms ``T1 .. T7`` are ``|P V u|^2``, ``<K V u, V u>``, ``<*F_A u, V u>``,
    ``Re<(*d_A Phi) u, V u>``, ``Re<Phi u, P u>``, ``|V P u|^2`` and
    ``|P u|^2``; the identity is ``T1 - T2 - T3 - T4 - T5 = T6 - T7``.
    ``relative`` divides by ``||u||^2``; ``extra["term_relative"]`` divides
    by the largest term instead.
    """
    ops = GridOperators(pair, metric, grid)
    u = np.asarray(u, dtype=complex)
    Vu, Pu = ops.V(u), ops.P(u)
    T = {
        "PVu2": ops.norm(ops.P(Vu)) ** 2,
        "KVu_Vu": ops.inner(ops.K * Vu, Vu).real,
        "starF_u_Vu": ops.inner(_mv(ops.starF, u), Vu),
        "stardPhi_u_Vu": ops.inner(_mv(ops.star_dAPhi, u), Vu).real,
        "Phi_u_Pu": ops.inner(_mv(ops.Phi, u), Pu).real,
        "VPu2": ops.norm(ops.V(Pu)) ** 2,
        "Pu2": ops.norm(Pu) ** 2,
    }
    lhs = T["PVu2"] - T["KVu_Vu"] - T["starF_u_Vu"].real - T["stardPhi_u_Vu"] - T["Phi_u_Pu"]
    rhs = T["VPu2"] - T["Pu2"]
    res = float(abs(lhs - rhs))
    u2 = ops.norm(u) ** 2
    biggest = max(abs(v) for v in T.values())
    return IdentityReport("pestov", dict(T, lhs=lhs, rhs=rhs), res, float(u2), _grid_info(grid),
                          notes="relative to ||u||^2",
                          extra={"term_relative": res / biggest if biggest else 0.0,
                                 "imag_starF_term": float(T["starF_u_Vu"].imag)})


def lemma63_check(pair, metric, grid: SMGrid, u, F=None, tol=1e-8) -> IdentityReport:
    """``|V P u|^2 - |P u|^2 = -|F|^2`` when ``P u = F + alpha``.

    ``F`` is the 0-form part of ``P u``; when given (array ``(nx, nx, n)``)
    it is compared with the fiber average.  Mode content of ``P u`` beyond
    ``|k| <= 1`` is reported in ``extra["high_mode_fraction"]`` and flagged
    in ``extra["precondition_ok"]``.
    """
    ops = GridOperators(pair, metric, grid)
    g = ops.P(np.asarray(u, dtype=complex))
    nt = grid.ntheta
    k = np.fft.fftfreq(nt, 1.0 / nt)
    G = np.fft.fft(g, axis=2)
    w = bundle.quad_weights(grid, metric)[..., None]
    pw = np.sum(w * np.abs(G) ** 2, axis=(0, 1, 3))
    high = float(pw[np.abs(k) > 1].sum() / pw.sum()) if pw.sum() > 0 else 0.0
    g0 = _avg(g)
    if F is not None:
        Fa = np.broadcast_to(np.asarray(F, dtype=complex)[:, :, None], g.shape)
        F_err = float(ops.norm(Fa - g0))
        g0 = Fa
    else:
        F_err = 0.0
    lhs = ops.norm(ops.V(g)) ** 2 - ops.norm(g) ** 2
    rhs = -ops.norm(g0) ** 2
    return IdentityReport("low_mode_energy", {"VPu2": ops.norm(ops.V(g)) ** 2, "Pu2": ops.norm(g) ** 2,
                                      "F2": ops.norm(g0) ** 2, "lhs": lhs, "rhs": rhs},
                          float(abs(lhs - rhs)), float(ops.norm(g) ** 2), _grid_info(grid),
                          notes="relative to ||P u||^2",
                          extra={"high_mode_fraction": high, "precondition_ok": high <= tol,
                                 "F_mismatch": F_err})


@lru_cache(maxsize=8)
def _riccati_on_grid(metric, grid: SMGrid, eps, dt):
    X1, X2, TH = np.broadcast_arrays(*grid.sm_mesh())
    m = np.broadcast_to(grid.mask[..., None], X1.shape)
    a = np.zeros(X1.shape)
    a[m] = riccati_field(metric, X1[m], X2[m], TH[m], eps=eps, dt=dt)
    a.setflags(write=False)
    return a


def riccati_field_on_grid(metric, grid: SMGrid, eps=0.1, dt=2e-3):
    """Riccati solution ``a`` with ``X a + a^2 + K = 0`` at every mask point of the grid.

    Values come from a per-point Jacobi integration, so there is no
    interpolation error; zero off the mask.
    """
    return _riccati_on_grid(metric, grid, float(eps), float(dt))


def riccati_nonneg_check(pair, metric, grid: SMGrid, u, eps=0.1, dt=2e-3, tol=1e-6) -> IdentityReport:
    """``|P psi|^2 - <K psi, psi> = |P psi - a psi|^2`` for ``psi = V u``.

    The left side must be nonnegative; ``extra["nonneg"]`` records
    ``lhs >= -tol * |P psi|^2``.  ``relative`` divides by ``|P psi|^2``.
    """
    ops = GridOperators(pair, metric, grid)
    psi = ops.V(np.asarray(u, dtype=complex))
    a = riccati_field_on_grid(metric, grid, eps, dt)[..., None]
    Ppsi = ops.P(psi)
    P2 = ops.norm(Ppsi) ** 2
    lhs = P2 - ops.inner(ops.K * psi, psi).real
    rhs = ops.norm(Ppsi - a * psi) ** 2
    return IdentityReport("riccati_nonneg", {"Ppsi2": P2, "Kpsi_psi": P2 - lhs, "lhs": lhs, "rhs": rhs},
                          float(abs(lhs - rhs)), float(P2), _grid_info(grid),
                          notes="relative to |P psi|^2",
                          extra={"nonneg": bool(lhs >= -tol * P2), "eps": eps, "dt": dt})


def holomorphicity_pairing(pair, metric, grid: SMGrid, u) -> IdentityReport:
    """``<*F_A v, V v> = -4 sum_{k<0} k <i *F_A u_k, u_k>`` with ``v = (Id - iH) u``."""
    ops = GridOperators(pair, metric, grid)
    u = np.asarray(u, dtype=complex)
    v = bundle.id_minus_iH(u)
    lhs = ops.inner(_mv(ops.starF, v), ops.V(v))
    M = bundle.modes_array(u, grid.kmax)
    iF = 1j * ops.starF[:, :, 0]
    w = (bundle.quad_weights(grid, metric)[..., 0] * grid.ntheta)[..., None]
    rhs = 0.0
    for k in range(-grid.kmax, 0):
        uk = M[k + grid.kmax]
        rhs += -4.0 * k * np.sum(w * _mv(iF, uk) * np.conj(uk))
    return IdentityReport("holo_pairing", {"lhs": lhs, "rhs": complex(rhs)}, float(abs(lhs - rhs)),
                          float(max(abs(lhs), abs(rhs))), _grid_info(grid), notes="relative to max |side|")


# ---------------------------------------------------------------------------
# mode recursion
# ---------------------------------------------------------------------------

def _mode_norm2(grid, metric, a):
    """``int_SM |a(x) e^{ik theta}|^2`` for a mode coefficient array ``(nx, nx, n)``."""
    w = bundle.quad_weights(grid, metric)[..., 0] * grid.ntheta
    return float(np.sum(w[..., None] * np.abs(a) ** 2))


def _mode_inner(grid, metric, a, b):
    w = bundle.quad_weights(grid, metric)[..., 0] * grid.ntheta
    return complex(np.sum(w[..., None] * a * np.conj(b)))


def mode_recursion_check(pair_s, metric, grid: SMGrid, v, trunc_tol=1e-3) -> IdentityReport:
    """Mode recursion of ``P_s v`` for ``v`` supported on modes ``k < 0``.

    With ``P_s = X + A_s + Phi`` and ``a_{+-1}`` the mode coefficients of
    ``A_s(v)``, the mode ``-k`` of ``P_s v`` is
    ``eta_+ v_{-k-1} + a_1 v_{-k-1} + eta_- v_{-k+1} + a_{-1} v_{-k+1} + Phi v_{-k}``,
    which vanishes for ``k >= 2`` when ``v`` comes from a transport solution.
    The report carries per-mode residuals relative to the sum of the term
    norms, the partial sums ``p_N``, ``q_N`` and the telescoping target
    ``Re <Phi v_{-1}, (P_s v)_{-1}>``.  ``residual`` is the largest relative
    recursion residual over ``2 <= k < kmax``.
    """
    ops = GridOperators(pair_s, metric, grid)
    v = np.asarray(v, dtype=complex)
    K = grid.kmax
    nt = grid.ntheta
    Vm = bundle.modes_array(v, K)                   # (2K+1, nx, nx, n)
    mode = lambda k: Vm[k + K] if abs(k) <= K else np.zeros_like(Vm[0])

    def lift(a, k):
        return a[:, :, None] * np.exp(1j * k * grid.theta)[None, None, :, None]

    def take(field, k):
        return bundle.modes_array(field, K)[k + K] if abs(k) <= K else np.zeros_like(Vm[0])

    eta_p, eta_m, a_p, a_m = {}, {}, {}, {}
    for j in range(-K, 1):
        f = lift(mode(j), j)
        Xf = ops.X(f)
        Af = _mv(ops.Av, f)
        eta_p[j], eta_m[j] = take(Xf, j + 1), take(Xf, j - 1)
        a_p[j], a_m[j] = take(Af, j + 1), take(Af, j - 1)
    Phi = ops.Phi[:, :, 0]
    Pv_modes = bundle.modes_array(ops.P(v), K)

    per_k, rel_k = [], []
    for k in range(1, K):
        terms = [eta_p[-k - 1], a_p[-k - 1], _mv(Phi, mode(-k))]
        if k >= 2:
            terms += [eta_m[-k + 1], a_m[-k + 1]]
        s = sum(terms)
        tot = sum(np.sqrt(_mode_norm2(grid, metric, t)) for t in terms)
        if k == 1:
            r = np.sqrt(_mode_norm2(grid, metric, s - Pv_modes[-1 + K]))
        else:
            r = np.sqrt(_mode_norm2(grid, metric, s))
        per_k.append(float(r))
        rel_k.append(float(r / tot) if tot > 0 else 0.0)

    Phi_f = np.ascontiguousarray(np.broadcast_to(Phi[:, :, None], Phi.shape[:2] + (nt,) + Phi.shape[2:]))
    # eta_- Phi is the mode -1 part of (X - i Xperp) Phi / 2
    etaPhi = 0.5 * take(ops.X(Phi_f) - 1j * ops.Xp(Phi_f), -1)
    inn = lambda a, b: _mode_inner(grid, metric, a, b)
    p_seq, q_seq = [], []
    q = 0.0
    for N in range(1, K):
        j = N
        q += ((-1) ** j * inn(_mv(etaPhi, mode(-j)), mode(-j - 1))
              + (-1) ** (j - 1) * inn(_mv(Phi, mode(-j)), a_p[-j - 1])
              + (-1) ** (j - 1) * _mode_norm2(grid, metric, _mv(Phi, mode(-j)))).real
        if N >= 2:
            jj = N - 1
            q += ((-1) ** jj * inn(a_m[-jj], _mv(Phi, mode(-jj - 1)))).real
        p = ((-1) ** (N - 1) * inn(eta_m[-N], _mv(Phi, mode(-N - 1)))).real
        p_seq.append(float(p))
        q_seq.append(float(q))
    target = inn(_mv(Phi, mode(-1)), Pv_modes[-1 + K]).real
    v2 = bundle.norm2(v, grid, metric)
    pos_mass = sum(_mode_norm2(grid, metric, mode(k)) for k in range(0, K + 1))
    tail = _mode_norm2(grid, metric, mode(-K)) / v2 if v2 > 0 else 0.0
    res = max(rel_k[1:], default=0.0)
    return IdentityReport(
        "mode_recursion", {"v_norm2": v2, "target": target}, res, 1.0, _grid_info(grid),
        notes="max over k >= 2 of |(P_s v)_{-k}| / sum of term norms",
        extra={"abs_residual_k": per_k, "relative_residual_k": rel_k, "p_N": p_seq, "q_N": q_seq,
               "telescoping_gap": [abs(target - (a + b)) for a, b in zip(p_seq, q_seq)],
               "p_last_over_v2": abs(p_seq[-1]) / v2 if (p_seq and v2 > 0) else 0.0,
               "nonnegative_mode_mass": pos_mass / v2 if v2 > 0 else 0.0,
               "truncation_warning": bool(tail > trunc_tol), "tail_mass": tail})


# ---------------------------------------------------------------------------
# transport scenarios for the recursion and the holomorphicity probe
# ---------------------------------------------------------------------------

def _disk_points(grid):
    X1, X2, TH = np.broadcast_arrays(*grid.sm_mesh())
    X1s, X2s = grid.mesh()
    disk = np.broadcast_to((X1s**2 + X2s**2 <= 1.0)[..., None], X1.shape)
    return X1, X2, TH, disk


def transport_on_grid(pair, metric, grid: SMGrid, source, dt=1e-2):
    """``u`` with ``(X + A + Phi) u = -source`` and ``u = 0`` on outgoing boundary points.

    Values at every closed-disk node, zero outside; ``source(x1, x2, th)``
    returns shape ``(B, n)``.
    """
    from .transport import transport_rays

    X1, X2, TH, disk = _disk_points(grid)
    r = transport_rays(pair, metric, X1[disk], X2[disk], TH[disk], f=source, dt=dt)
    u = np.zeros(X1.shape + (pair.n,), dtype=complex)
    u[disk] = r.J[:, :, 0]
    return u


@dataclass
class RecursionScenario:
    """Data of the shifted transport problem used by :func:`mode_recursion_check`."""

    pair_s: object
    v: np.ndarray
    u_s: np.ndarray
    w_residual: float
    s: float


def recursion_scenario(pair, metric, grid: SMGrid, s, f, bgrid=None, dt=1e-2) -> RecursionScenario:
    """Build ``v = (Id - iH) u_s - (u_s)_0`` for the connection ``A + i s phi``.

    ``w`` is a holomorphic integrating factor with ``X w = -i phi`` (``phi``
    the area primitive form), ``u_s`` solves the transport equation of the
    shifted pair with source ``e^{s w} f``, and ``f(x1, x2, th)`` is a
    ``C^n``-valued 0-form plus 1-form.
    """
    from .gauge import area_primitive, build_As
    from .holo import integrating_factor_for_form
    from .transport import BoundaryGrid, GridSource

    bgrid = BoundaryGrid(64, 32, 0.05) if bgrid is None else bgrid
    prim = area_primitive(metric)
    fac = integrating_factor_for_form(metric, grid, bgrid, phi=(None, lambda a, b: -prim.p(a, b)),
                                      orientation="holo")
    wsrc = GridSource(fac.w.values, grid)

    def source(x1, x2, th):
        return np.exp(s * wsrc(x1, x2, th))[:, None] * f(x1, x2, th)

    pair_s = build_As(pair, metric, -s)
    u_s = transport_on_grid(pair_s, metric, grid, source, dt=dt)
    v = bundle.id_minus_iH(u_s) - u_s.mean(axis=2, keepdims=True)
    return RecursionScenario(pair_s, v, u_s, fac.residual, s)


@dataclass
class ProbeReport:
    """Mode masses of shifted transport solutions, one entry per ``s``.

    ``wrong_mass`` is the relative mass of modes ``k < 0`` when ``i *F`` of
    the shifted pair is negative definite (holomorphic expected), of modes
    ``k > 0`` when positive definite, and ``nan`` when indefinite.
    ``boundary_ratio`` compares ``|u|`` on the outermost ring of disk nodes
    with ``max |u|``; it measures how far ``u`` is from vanishing on the
    whole boundary.
    """

    s: list
    eig_min: list
    eig_max: list
    neg_mass: list
    pos_mass: list
    wrong_mass: list
    boundary_ratio: list
    grid: dict

    def to_dict(self) -> dict:
        return {k: _jsonable(v) for k, v in asdict(self).items()}


def holomorphicity_probe(pair, metric, grid: SMGrid, f, s_values, dt=1e-2) -> ProbeReport:
    """Fiber mode content of ``u^f`` for the shifted pairs ``build_As(pair, s)``.

    ``i *F`` of the shifted connection is ``i *F_A + s``, so large negative
    ``s`` gives a negative definite curvature term.
    """
    from .gauge import build_As

    X1, X2 = grid.mesh()
    r = np.hypot(X1, X2)
    ring = (r <= 1.0) & (r > 1.0 - grid.h)
    pts = (X1[grid.mask], X2[grid.mask])
    out = {k: [] for k in ("eig_min", "eig_max", "neg_mass", "pos_mass", "wrong_mass", "boundary_ratio")}
    for s in s_values:
        ps = build_As(pair, metric, s)
        iF = 1j * star_F_coord(ps, metric, *pts)
        ev = np.linalg.eigvalsh(0.5 * (iF + np.conj(np.swapaxes(iF, -1, -2))))
        u = transport_on_grid(ps, metric, grid, f, dt=dt)
        neg = bundle.negative_mode_mass(u, grid, metric, sign=-1)
        pos = bundle.negative_mode_mass(u, grid, metric, sign=1)
        lo, hi = float(ev.min()), float(ev.max())
        out["eig_min"].append(lo)
        out["eig_max"].append(hi)
        out["neg_mass"].append(neg)
        out["pos_mass"].append(pos)
        out["wrong_mass"].append(neg if hi < 0 else (pos if lo > 0 else float("nan")))
        umax = float(np.abs(u).max())
        out["boundary_ratio"].append(float(np.abs(u[ring]).max() / umax) if umax > 0 else 0.0)
    return ProbeReport(list(map(float, s_values)), grid=_grid_info(grid), **out)
