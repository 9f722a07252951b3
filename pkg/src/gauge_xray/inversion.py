"""Discrete forward operators, kernel probes, recovery and gauge rigidity.

Unknowns are ``f = F(x) + alpha_j(x) v^j`` with ``F`` and ``alpha_j`` in
``C^n``, represented by bilinear hat functions on an interior square grid.
Real degrees of freedom are stacked as::

    [Re F, Im F, Re alpha_1, Im alpha_1, Re alpha_2, Im alpha_2]

each block of length ``n * N`` ordered node-major (``node * n + component``).
Data rows are ``[Re D, Im D]`` with ``D`` ordered ray-major
(``ray * n + component``).

The natural kernel ``{(Phi p, d_A p) : p|_dM = 0}`` is represented by the
map ``T`` from real nodal values of ``p`` (same node set) to DOFs, with
fourth order centred differences for ``dp``.  Hat interpolants of ``(Phi p, d_A p)`` are
only approximately annihilated by the ray transform, so by default the
operator is assembled in *compatible* form ``G = G0 (I - T T^+)``, which
maps ``range(T)`` to zero exactly (the continuum transform of
``(X + A + Phi) p`` vanishes for every ``p`` with zero boundary values).
``reconstruction="plain"`` keeps the raw hat operator ``G0``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .gauge import AttenuationPair, Connection, HiggsField, MatrixField, apply_gauge, fd_grad
from .geometry import boundary_to_phase
from .transport import BoundaryGrid, FormSource, RayData, ray_transform, scattering_data, transport_rays


class InversionError(RuntimeError):
    """Raised for memory-guard violations and malformed inputs."""


DEFAULT_MAX_ENTRIES = 50_000_000


# ---------------------------------------------------------------------------
# DOF layout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DofLayout:
    """Interior nodes of an ``m x m`` grid with spacing ``H = 2 / (m + 1)``.

    A node is kept when the support of its hat function lies in the closed
    unit disk, i.e. ``|x| + sqrt(2) H <= 1``.
    """

    m: int
    n: int
    forms: tuple = ("F", "alpha")

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("need m >= 2")
        if not set(self.forms) <= {"F", "alpha"} or not self.forms:
            raise ValueError("forms must be a non-empty subset of ('F', 'alpha')")

    @property
    def H(self) -> float:
        return 2.0 / (self.m + 1)

    @property
    def axis(self) -> np.ndarray:
        return -1.0 + self.H * np.arange(1, self.m + 1)

    def _ij(self):
        a = self.axis
        I, J = np.meshgrid(np.arange(self.m), np.arange(self.m), indexing="ij")
        keep = np.hypot(a[I], a[J]) + np.sqrt(2.0) * self.H <= 1.0 + 1e-12
        return I[keep], J[keep]

    @property
    def nodes(self):
        """``(x1, x2)`` of the kept nodes."""
        i, j = self._ij()
        return self.axis[i], self.axis[j]

    @property
    def N(self) -> int:
        return self._ij()[0].size

    @property
    def n_scalar(self) -> int:
        """Scalar source functions per node: 1 for F, 2 for alpha."""
        return ("F" in self.forms) + 2 * ("alpha" in self.forms)

    @property
    def size(self) -> int:
        return 2 * self.n * self.N * self.n_scalar

    @property
    def blocks(self):
        out = []
        if "F" in self.forms:
            out += ["F"]
        if "alpha" in self.forms:
            out += ["alpha1", "alpha2"]
        return out

    def hats(self, x1, x2):
        """``(B, N)`` values of all hat functions."""
        y1, y2 = self.nodes
        H = self.H
        h1 = np.maximum(0.0, 1.0 - np.abs(np.asarray(x1)[:, None] - y1[None]) / H)
        h2 = np.maximum(0.0, 1.0 - np.abs(np.asarray(x2)[:, None] - y2[None]) / H)
        return h1 * h2

    def to_complex(self, x):
        """Split a real DOF vector into complex ``(N, n)`` arrays per block."""
        x = np.asarray(x, dtype=float)
        k = self.n * self.N
        out = {}
        for b, name in enumerate(self.blocks):
            re, im = x[2 * b * k:(2 * b + 1) * k], x[(2 * b + 1) * k:(2 * b + 2) * k]
            out[name] = (re + 1j * im).reshape(self.N, self.n)
        return out

    def from_complex(self, blocks: dict):
        parts = []
        for name in self.blocks:
            v = np.asarray(blocks[name], dtype=complex).reshape(-1)
            parts += [v.real, v.imag]
        return np.concatenate(parts)

    def sample(self, F=None, a1=None, a2=None):
        """Nodal DOF vector of callables ``F, a1, a2 : (x1, x2) -> (B, n)``."""
        y1, y2 = self.nodes
        zero = np.zeros((self.N, self.n), dtype=complex)
        vals = {"F": F, "alpha1": a1, "alpha2": a2}
        return self.from_complex({k: zero if vals[k] is None else
                                  np.asarray(vals[k](y1, y2)).reshape(self.N, self.n)
                                  for k in self.blocks})

    def evaluate(self, x, x1, x2):
        """Hat interpolants ``(F, alpha1, alpha2)`` of a DOF vector at points, each ``(B, n)``."""
        h = self.hats(np.ravel(x1), np.ravel(x2))
        c = self.to_complex(x)
        return {k: h @ v for k, v in c.items()}


def _realify(M):
    """Real ``2r x 2c`` form of a complex matrix acting on ``[Re; Im]``."""
    return np.block([[M.real, -M.imag], [M.imag, M.real]])


# fourth order centred differences; the second order stencil has an
# alternating null vector on grid lines with an odd number of nodes
_STENCIL = {2: -1.0 / 12, 1: 8.0 / 12, -1: -8.0 / 12, -2: 1.0 / 12}


def kernel_map(pair, layout: DofLayout):
    """Real matrix ``T`` taking ``[Re p, Im p]`` to DOFs of ``(Phi p, d_A p)``.

    ``d_A p = (D_j p + A_j p) dx^j`` with fourth order centred differences
    ``D_j`` and ``p = 0`` off the node set.
    """
    n, N, H = layout.n, layout.N, layout.H
    i, j = layout._ij()
    index = {(a, b): k for k, (a, b) in enumerate(zip(i, j))}
    y1, y2 = layout.nodes
    A1, A2, P = (np.asarray(v) for v in pair.fields(y1, y2))
    eye = np.eye(n)

    def diff(axis):
        D = np.zeros((N * n, N * n), dtype=complex)
        for k, (a, b) in enumerate(zip(i, j)):
            for off, c in _STENCIL.items():
                q = index.get((a + off, b) if axis == 0 else (a, b + off))
                if q is not None:
                    D[k * n:(k + 1) * n, q * n:(q + 1) * n] += c * eye / H
        return D

    def block_diag(M):
        out = np.zeros((N * n, N * n), dtype=complex)
        for k in range(N):
            out[k * n:(k + 1) * n, k * n:(k + 1) * n] = M[k]
        return out

    rows = []
    if "F" in layout.forms:
        rows.append(block_diag(P))
    if "alpha" in layout.forms:
        rows.append(diff(0) + block_diag(A1))
        rows.append(diff(1) + block_diag(A2))
    # interleave Re/Im per block to match the DOF order
    Tc = np.vstack(rows)
    R = _realify(Tc)
    k = N * n
    nb = len(rows)
    order = np.concatenate([np.r_[b * k:(b + 1) * k, (nb + b) * k:(nb + b + 1) * k] for b in range(nb)])
    return R[order]


# ---------------------------------------------------------------------------
# forward operator
# ---------------------------------------------------------------------------

@dataclass
class ForwardOperator:
    """Real matrix of the discretised transform with its layout and kernel map."""

    matrix: np.ndarray
    plain: np.ndarray
    layout: DofLayout
    bgrid: BoundaryGrid
    T: np.ndarray
    reconstruction: str
    dt: float
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, x):
        return self.matrix @ np.asarray(x, dtype=float)

    def data_to_real(self, values):
        """Stack ``(B, n)`` complex ray data as ``[Re, Im]`` rows."""
        v = np.asarray(values).reshape(-1)
        return np.concatenate([v.real, v.imag])

    def real_to_data(self, y):
        y = np.asarray(y, dtype=float)
        k = y.size // 2
        return (y[:k] + 1j * y[k:]).reshape(self.bgrid.size, self.layout.n)

    def kernel_projector(self):
        """Orthogonal projector onto the complement of ``range(T)``."""
        Qt, _ = np.linalg.qr(self.T)
        return np.eye(self.T.shape[0]) - Qt @ Qt.T


def _hat_source(metric, layout: DofLayout):
    """Block source ``(B, n, n * S)``: every scalar hat function times ``Id_n``."""
    n = layout.n

    def f(x1, x2, th):
        h = layout.hats(x1, x2)
        parts = []
        if "F" in layout.forms:
            parts.append(h)
        if "alpha" in layout.forms:
            el = np.exp(-metric.lam(x1, x2))
            parts += [h * (el * np.cos(th))[:, None], h * (el * np.sin(th))[:, None]]
        s = np.concatenate(parts, axis=1)                 # (B, S)
        out = np.zeros((s.shape[0], n, n * s.shape[1]), dtype=complex)
        for a in range(n):
            out[:, a, a::n] = s
        return out

    return f


def assemble_forward(pair, metric, m: int, grid: BoundaryGrid, forms=("F", "alpha"), dt=2e-3,
                     reconstruction="compatible", max_entries=DEFAULT_MAX_ENTRIES) -> ForwardOperator:
    """Assemble the real forward matrix of hat-function DOFs.

    Column ``j`` is the transform of the ``j``-th (real or imaginary) hat
    unknown, computed with one transport integration carrying all columns.

    Parameters
    ----------
    m : int
        Nodes per axis of the interior grid.
    forms : tuple
        ``("F",)`` for functions only, ``("F", "alpha")`` for functions plus 1-forms.
    reconstruction : {"compatible", "plain"}
        See the module docstring.
    max_entries : int
        Memory guard on ``rows * cols``.
    """
    if reconstruction not in ("compatible", "plain"):
        raise ValueError("reconstruction must be 'compatible' or 'plain'")
    layout = DofLayout(int(m), pair.n, tuple(forms))
    n, N = layout.n, layout.N
    rows, cols = 2 * grid.size * n, layout.size
    if rows * cols > max_entries:
        raise InversionError(f"forward matrix {rows}x{cols} exceeds the cap of {max_entries} entries")
    b, mu = grid.points()
    x1, x2, th = boundary_to_phase(b, mu)
    res = transport_rays(pair, metric, x1, x2, th, f=_hat_source(metric, layout), dt=dt)
    J = res.J                                            # (B, n, n * S): column s * n + a
    S = layout.n_scalar
    # complex column for scalar s, node k, component a
    Jc = J.reshape(grid.size, n, S, N, n)                # ray, out comp, block, node, in comp
    Jc = Jc.reshape(grid.size * n, S, N * n)
    G0 = np.empty((rows, cols))
    k = N * n
    half = grid.size * n
    for blk in range(S):
        d = Jc[:, blk, :]
        c0 = 2 * blk * k
        G0[:half, c0:c0 + k] = d.real
        G0[half:, c0:c0 + k] = d.imag
        G0[:half, c0 + k:c0 + 2 * k] = -d.imag
        G0[half:, c0 + k:c0 + 2 * k] = d.real
    if not np.all(np.isfinite(G0)):
        raise InversionError("non-finite forward matrix")
    T = kernel_map(pair, layout) if "alpha" in layout.forms else np.zeros((cols, 0))
    G = G0
    if reconstruction == "compatible" and T.shape[1]:
        Qt, _ = np.linalg.qr(T)
        G = G0 - (G0 @ Qt) @ Qt.T
    meta = {"m": layout.m, "H": layout.H, "N": N, "n": n, "forms": list(layout.forms),
            "rows": rows, "cols": cols, "pair": pair.meta}
    if T.shape[1]:
        sn = np.linalg.norm(G0, 2)
        meta["gauge_leak"] = float(np.linalg.norm(G0 @ T, 2) / (sn * np.linalg.norm(T, 2)))
    return ForwardOperator(G, G0, layout, grid, T, reconstruction, dt, meta)


# ---------------------------------------------------------------------------
# kernel probe
# ---------------------------------------------------------------------------

@dataclass
class KernelReport:
    singular_values: np.ndarray
    kernel_dim: int
    predicted_dim: int
    gap_ratio: float
    inconclusive: bool
    fit_residuals: np.ndarray
    eps: float
    F_fraction: np.ndarray
    injective_T: bool
    meta: dict = field(default_factory=dict)

    @property
    def matches(self) -> bool:
        return self.kernel_dim == self.predicted_dim

    @property
    def max_fit_residual(self) -> float:
        return float(np.max(self.fit_residuals, initial=0.0))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["singular_values"] = [float(s) for s in self.singular_values]
        d["fit_residuals"] = [float(s) for s in self.fit_residuals]
        d["F_fraction"] = [float(s) for s in self.F_fraction]
        d["matches"] = self.matches
        d["max_fit_residual"] = self.max_fit_residual
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def spectrum_csv(self, path):
        s = self.singular_values
        rows = np.column_stack([np.arange(s.size), s, s / s[0] if s.size else s])
        np.savetxt(path, rows, delimiter=",", header="index,sigma,sigma_rel", comments="",
                   fmt=["%d", "%.17g", "%.17g"])


def kernel_probe(op: ForwardOperator, pair=None, eps=1e-6, gap_min=1e3) -> KernelReport:
    """SVD of the forward matrix and a fit of each kernel vector to ``(Phi p, d_A p)``.

    The predicted dimension is ``2 n N`` when 1-forms are unknowns (``p``
    ranges over the same ``N`` interior nodes) and ``0`` otherwise.  The
    gap ratio is ``sigma_{c-1} / sigma_c`` at the predicted cut ``c`` (or
    ``sigma_min / (eps sigma_max)`` when nothing is predicted); below
    ``gap_min`` the count is flagged inconclusive.
    """
    if pair is not None and pair.n != op.layout.n:
        raise ValueError("pair size does not match the operator")
    _, s, Vt = np.linalg.svd(op.matrix, full_matrices=False)
    smax = s[0] if s.size else 0.0
    cols = op.matrix.shape[1]
    tiny = s < eps * smax
    # columns beyond the number of rows are kernel directions too
    kdim = int(np.count_nonzero(tiny)) + max(0, cols - s.size)
    pred = op.T.shape[1]
    rank_T = int(np.linalg.matrix_rank(op.T)) if pred else 0
    cut = cols - pred
    if pred == 0:
        gap = float(s[-1] / (eps * smax)) if smax > 0 else 0.0
    elif 0 < cut < s.size:
        gap = float(s[cut - 1] / max(s[cut], np.finfo(float).tiny))
    else:
        gap = float("inf")
    kernel = Vt[s.size - int(np.count_nonzero(tiny)):]
    fits, ffrac = [], []
    k = op.layout.n * op.layout.N
    for v in kernel:
        if pred:
            p, *_ = np.linalg.lstsq(op.T, v, rcond=None)
            r = np.linalg.norm(v - op.T @ p) / np.linalg.norm(v)
        else:
            r = 1.0
        fits.append(r)
        ffrac.append(np.linalg.norm(v[:2 * k]) / np.linalg.norm(v) if "F" in op.layout.forms else 0.0)
    return KernelReport(s, kdim, pred, gap, gap < gap_min, np.array(fits), eps, np.array(ffrac),
                        rank_T == pred, {"reconstruction": op.reconstruction, **op.meta})


# ---------------------------------------------------------------------------
# recovery
# ---------------------------------------------------------------------------

@dataclass
class Recovery:
    """Tikhonov solution, its interpolants and residual diagnostics."""

    x: np.ndarray
    blocks: dict
    data_residual: float
    ridge: float
    resolution_flag: bool
    layout: DofLayout

    def evaluate(self, x1, x2):
        return self.layout.evaluate(self.x, x1, x2)


def recover_f(op: ForwardOperator, data, ridge=1e-5, bound=5e-2, operator="plain") -> Recovery:
    """Minimum-norm Tikhonov solution of ``G x = d``.

    ``ridge`` is relative to ``sigma_max^2``.  By default the plain hat
    operator ``G0`` is inverted: continuum data carry the small transform of
    the discretised gauge directions that the compatible operator sets to
    zero, so ``G0`` is the consistent model for measured data.  The result
    is compared with a truth only after projecting off ``range(T)`` (see
    :func:`kernel_orthogonal_error`).  ``resolution_flag`` is set when the
    relative data residual exceeds ``bound``.
    """
    if operator not in ("plain", "compatible"):
        raise ValueError("operator must be 'plain' or 'compatible'")
    G = op.plain if operator == "plain" else op.matrix
    vals = np.asarray(data.values if isinstance(data, RayData) else data)
    if vals.size != op.bgrid.size * op.layout.n:
        raise InversionError("data size does not match the boundary grid of the operator")
    y = op.data_to_real(vals.reshape(op.bgrid.size, op.layout.n))
    U, s, Vt = np.linalg.svd(G, full_matrices=False)
    lam = ridge * (s[0] ** 2 if s.size else 0.0)
    filt = np.where(s > 0, s / (s ** 2 + lam), 0.0)
    x = Vt.T @ (filt * (U.T @ y))
    ny = np.linalg.norm(y)
    res = float(np.linalg.norm(G @ x - y) / ny) if ny > 0 else 0.0
    return Recovery(x, op.layout.to_complex(x), res, ridge, res > bound, op.layout)


def kernel_orthogonal_error(op: ForwardOperator, x_true, x_rec) -> float:
    """``|P (x_rec - x_true)| / |P x_true|`` with ``P`` projecting off ``range(T)``."""
    P = op.kernel_projector()
    a = P @ np.asarray(x_true, dtype=float)
    b = P @ np.asarray(x_rec, dtype=float)
    na = np.linalg.norm(a)
    return float(np.linalg.norm(b - a) / na) if na > 0 else float(np.linalg.norm(b))


def synthetic_data(pair, metric, grid: BoundaryGrid, F=None, a1=None, a2=None, dt=2e-3) -> RayData:
    """Direct transform of a continuous ``F + alpha_j v^j`` (no hat interpolation)."""
    return ray_transform(pair, metric, FormSource(metric, F, a1, a2), grid, dt=dt)


# ---------------------------------------------------------------------------
# rigidity
# ---------------------------------------------------------------------------

class _LiftedField(MatrixField):
    """``M_A (x) Id - Id (x) M_B^T`` acting on row-major ``vec(R)``."""

    def __init__(self, lifted, j):
        self.lifted, self.j, self.n = lifted, j, lifted.n

    def value(self, x1, x2):
        return self.lifted.fields(x1, x2)[self.j]

    def grad(self, x1, x2):
        return fd_grad(self.value, x1, x2)


def _lift(MA, MB):
    n = MA.shape[-1]
    eye = np.eye(n)
    left = np.einsum("...ij,kl->...ikjl", MA, eye)
    right = np.einsum("ij,...lk->...ikjl", eye, MB)
    sh = np.broadcast_shapes(left.shape, right.shape)
    return (left - right).reshape(sh[:-4] + (n * n, n * n))


class LiftedPair(AttenuationPair):
    """``(A_hat, Phi_hat)`` with ``A_hat(R) = A R - R B`` and ``Phi_hat(R) = Phi R - R Psi``.

    Matrices ``R`` are vectorised row-major, so ``vec(A R) = (A (x) I) vec R``
    and ``vec(R B) = (I (x) B^T) vec R``.
    """

    def __init__(self, pairA, pairB):
        if pairA.n != pairB.n:
            raise ValueError("pairs differ in size")
        self.pairA, self.pairB = pairA, pairB
        self._n2 = pairA.n ** 2
        super().__init__(
            Connection(_LiftedField(self, 0), _LiftedField(self, 1),
                       pairA.connection.unitary_flag and pairB.connection.unitary_flag),
            HiggsField(_LiftedField(self, 2), pairA.higgs.skew_flag and pairB.higgs.skew_flag),
            {"lifted": True, "A": pairA.meta, "B": pairB.meta})

    @property
    def n(self):
        return self._n2

    def fields(self, x1, x2):
        a = self.pairA.fields(x1, x2)
        b = self.pairB.fields(x1, x2)
        return tuple(_lift(np.asarray(p), np.asarray(q)) for p, q in zip(a, b))


def vec(R):
    """Row-major vectorisation of ``(..., n, n)`` arrays."""
    R = np.asarray(R)
    return R.reshape(R.shape[:-2] + (-1,))


@dataclass
class RigidityReport:
    scattering_gap: float
    nonzero_mode_mass: float
    connection_residual: float
    higgs_residual: float
    boundary_residual: float
    gauge_error: float
    lifted_residual: float
    tolerances: dict
    meta: dict = field(default_factory=dict)

    def failures(self) -> dict:
        vals = {k: getattr(self, k) for k in self.tolerances}
        return {k: v for k, v in vals.items() if not v < self.tolerances[k]}

    @property
    def ok(self) -> bool:
        return not self.failures()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["failures"] = self.failures()
        d["ok"] = self.ok
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


RIGIDITY_TOLERANCES = {
    "scattering_gap": 1e-5,
    "nonzero_mode_mass": 1e-3,
    "connection_residual": 5e-3,
    "higgs_residual": 5e-3,
    "boundary_residual": 1e-3,
    "gauge_error": 5e-3,
    "lifted_residual": 1e-4,
}


def fan_transport(pairA, pairB, metric, x1, x2, n_dirs=24, dt=2e-3):
    """``U = W_A W_B^{-1}`` on a fan of ``n_dirs`` directions at each point.

    ``W`` is the fundamental solution integrated from ``(x, v)`` to the
    exit, so ``U`` is the ratio of the two pairs' transport to ``dSM``.
    Returns ``(P, n_dirs, n, n)``.
    """
    x1 = np.ravel(x1)
    x2 = np.ravel(x2)
    th = 2 * np.pi * np.arange(n_dirs) / n_dirs
    X1 = np.repeat(x1, n_dirs)
    X2 = np.repeat(x2, n_dirs)
    TH = np.tile(th, x1.size)
    WA = transport_rays(pairA, metric, X1, X2, TH, dt=dt).W
    WB = transport_rays(pairB, metric, X1, X2, TH, dt=dt).W
    U = WA @ np.linalg.inv(WB)
    return U.reshape(x1.size, n_dirs, pairA.n, pairA.n)


def rigidity_experiment(pairA, Q, metric, grid: BoundaryGrid, h=0.1, r_max=0.95, n_dirs=24, kmax=8,
                        dt=2e-3, tolerances=None, fd_step=2e-3, conn_stride=2) -> RigidityReport:
    """Recover a boundary-identity gauge from two gauge-equivalent pairs.

    With ``(B, Psi) = apply_gauge(pairA, Q)`` the steps are: compare the
    scattering data of both pairs; form ``U = U_A U_B^{-1}`` on fans at the
    points of a square grid of spacing ``h`` in ``|x| <= r_max`` and measure
    its non-zero fibre modes (up to ``kmax``); average over the fibre to get
    ``U_hat``; compare ``B`` with ``U_hat^{-1} d U_hat + U_hat^{-1} A U_hat``
    (centred differences of step ``fd_step`` at every ``conn_stride``-th
    grid point), ``Psi`` with
    ``U_hat^{-1} Phi U_hat`` and ``U_hat`` with ``Q``; evaluate ``U_hat`` on
    the unit circle; finally apply the lifted transform to
    ``A - B + Phi - Psi``.
    """
    tol = dict(RIGIDITY_TOLERANCES)
    tol.update(tolerances or {})
    pairB = apply_gauge(pairA, Q, metric)
    n = pairA.n
    SA = scattering_data(pairA, metric, grid, dt=dt)
    SB = scattering_data(pairB, metric, grid, dt=dt)
    sgap = float(np.max(np.abs(SA.C_minus - SB.C_minus)))

    k = int(np.floor(r_max / h))
    ax = h * np.arange(-k, k + 1)
    G1, G2 = np.meshgrid(ax, ax, indexing="ij")
    inside = np.hypot(G1, G2) <= r_max + 1e-12
    U = fan_transport(pairA, pairB, metric, G1[inside], G2[inside], n_dirs, dt)
    modes = np.fft.fft(U, axis=1) / n_dirs
    kk = np.fft.fftfreq(n_dirs, 1.0 / n_dirs)
    keep = np.abs(kk) <= kmax
    m2 = np.sum(np.abs(modes) ** 2, axis=(2, 3))
    nz = float(np.sum(m2[:, keep & (kk != 0)]) / np.sum(m2[:, keep]))
    Uhat_pts = modes[:, 0]
    Uhat = np.full(G1.shape + (n, n), np.nan, dtype=complex)
    Uhat[inside] = Uhat_pts

    # derivatives of U_hat from a small centred cross around a subset of
    # grid points, so the difference step does not depend on h
    sub = inside & (np.hypot(G1, G2) <= r_max - fd_step)
    keep_idx = np.zeros_like(sub)
    keep_idx[::conn_stride, ::conn_stride] = True
    sub &= keep_idx
    x1, x2 = G1[sub], G2[sub]
    e = fd_step
    cross1 = np.concatenate([x1 + e, x1 - e, x1, x1])
    cross2 = np.concatenate([x2, x2, x2 + e, x2 - e])
    Uc = fan_transport(pairA, pairB, metric, cross1, cross2, n_dirs, dt).mean(axis=1)
    Up, Um, Vp, Vm = np.split(Uc, 4)
    D1 = (Up - Um) / (2 * e)
    D2 = (Vp - Vm) / (2 * e)
    Uo = Uhat[sub]
    Ui = np.linalg.inv(Uo)
    A1, A2, P = pairA.fields(x1, x2)
    B1, B2, Ps = pairB.fields(x1, x2)
    conn = max(np.max(np.abs(B1 - (Ui @ D1 + Ui @ A1 @ Uo))),
               np.max(np.abs(B2 - (Ui @ D2 + Ui @ A2 @ Uo))))
    xi1, xi2 = G1[inside], G2[inside]
    _, _, Pi = pairA.fields(xi1, xi2)
    _, _, Psi = pairB.fields(xi1, xi2)
    Uin = Uhat[inside]
    higgs = float(np.max(np.abs(Psi - np.linalg.solve(Uin, Pi @ Uin))))
    gerr = float(np.max(np.abs(Uin - Q.value(xi1, xi2))))

    beta = 2 * np.pi * np.arange(32) / 32
    Ub = fan_transport(pairA, pairB, metric, np.cos(beta), np.sin(beta), n_dirs, dt)
    bres = float(np.max(np.abs(Ub.mean(axis=1) - np.eye(n))))

    lifted = LiftedPair(pairA, pairB)

    def src(y1, y2, th):
        a = pairA.attenuation(metric, y1, y2, th)
        b = pairB.attenuation(metric, y1, y2, th)
        return vec(a - b)[:, :, None]

    I = ray_transform(lifted, metric, src, grid, dt=dt)
    lres = float(np.max(np.abs(I.values)))
    meta = {"h": h, "r_max": r_max, "n_dirs": n_dirs, "kmax": kmax, "dt": dt,
            "interior_points": int(inside.sum()), "connection_points": int(sub.sum()),
            "fd_step": fd_step,
            "unitarity_A": SA.unitarity_minus, "unitarity_B": SB.unitarity_minus,
            "pair": pairA.meta, "gauge": Q.meta}
    return RigidityReport(sgap, nz, float(conn), higgs, bres, gerr, lres, tol, meta)
