import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from gauge_xray import transport as tr
from gauge_xray.gauge import gauge_from_spec, pair_from_spec
from gauge_xray.geometry import boundary_to_phase, metric_from_spec
from gauge_xray.transport import BoundaryGrid, ExactSource, FunctionSource, ray_transform, scattering_data


def _ivp_transform(pair, metric, f, beta, mu):
    """Independent oracle: Christoffel-form geodesic with ``W' = W Att, J' = W f``."""
    n = pair.n
    x1, x2, th = boundary_to_phase(beta, mu)
    s = np.exp(-metric.lam(x1, x2))
    y0 = np.concatenate([[x1, x2, s * np.cos(th), s * np.sin(th)],
                         np.eye(n, dtype=complex).ravel(), np.zeros(n, dtype=complex)])

    def rhs(t, y):
        a, b, v1, v2 = y[:4].real
        l1, l2 = metric.grad(a, b)
        dot, vv = l1 * v1 + l2 * v2, v1 * v1 + v2 * v2
        A1, A2, P = (q[0] for q in pair.fields(np.array([a]), np.array([b])))
        att = P + A1 * v1 + A2 * v2
        W = y[4:4 + n * n].reshape(n, n)
        el = np.exp(metric.lam(a, b))
        fv = np.asarray(f(np.array([a]), np.array([b]), np.array([np.arctan2(el * v2, el * v1)])),
                        dtype=complex).reshape(n)
        return np.concatenate([[v1, v2, -2 * dot * v1 + vv * l1, -2 * dot * v2 + vv * l2],
                               (W @ att).ravel(), W @ fv])

    def leave(t, y):
        return y[0].real ** 2 + y[1].real ** 2 - 1.0
    leave.terminal, leave.direction = True, 1
    sol = solve_ivp(rhs, (0, 10), y0.astype(complex), events=leave, rtol=1e-11, atol=1e-12,
                    first_step=1e-3, max_step=0.05)
    return sol.y_events[0][-1][4 + n * n:]


def _bump_source(n, seed=0):
    v = np.random.Generator(np.random.Philox(seed)).standard_normal((n, 2)) @ np.array([1.0, 1j])

    def f(x1, x2, th):
        env = np.maximum(1 - x1**2 - x2**2, 0.0) ** 2
        return (env * (1 + 0.5 * np.cos(th) + x1 * np.sin(2 * th)))[:, None] * v
    return f


class TestClosedForms:
    @pytest.mark.parametrize("c", [0.7, -1.3, 0.8j, 0.5 - 0.4j])
    def test_constant_scalar_higgs(self, flat, small_bgrid, c):
        p = pair_from_spec({"preset": "constant_higgs", "c": [c.real, c.imag] if isinstance(c, complex) else c})
        d = ray_transform(p, flat, FunctionSource(lambda a, b, t: np.ones((a.size, 1))), small_bgrid)
        tau = 2 * np.cos(d.mu)
        np.testing.assert_allclose(d.values[:, 0], np.expm1(c * tau) / c, atol=1e-10)
        S = scattering_data(p, flat, small_bgrid)
        np.testing.assert_allclose(S.C_minus[:, 0, 0], np.exp(-c * tau), atol=1e-10)

    def test_constant_matrix_higgs(self, flat, small_bgrid):
        # non-normal constant Phi: I f = Phi^{-1}(e^{Phi tau} - Id) f for constant f
        P = np.array([[0.3, 1.1], [-0.2, -0.5]], dtype=complex)
        spec = {"n": 2, "Phi_const": [["E00", 0.3], ["E01", 1.1], ["E10", -0.2], ["E11", -0.5]]}
        p = pair_from_spec(spec)
        fv = np.array([1.0, -2.0j])
        d = ray_transform(p, flat, FunctionSource(lambda a, b, t: np.tile(fv, (a.size, 1))), small_bgrid)
        for k in range(0, small_bgrid.size, 7):
            tau = 2 * np.cos(d.mu[k])
            want = np.linalg.solve(P, (expm(P * tau) - np.eye(2)) @ fv)
            np.testing.assert_allclose(d.values[k], want, atol=1e-10)
        S = scattering_data(p, flat, small_bgrid)
        tau = S.tau
        np.testing.assert_allclose(S.C_minus, expm(-tau[:, None, None] * P[None]), atol=1e-10)


class TestAgainstIVP:
    @pytest.mark.parametrize("pair_name,metric_spec", [
        ("general", {"name": "positive", "c": 0.5}), ("su2", {"name": "bump", "c": 0.2})])
    def test_general_pair_curved_metric(self, pair_name, metric_spec):
        p = pair_from_spec({"preset": pair_name})
        m = metric_from_spec(metric_spec)
        f = _bump_source(p.n)
        beta, mu = np.array([0.4, 2.2, 5.0]), np.array([0.1, -0.8, 1.0])
        x1, x2, th = boundary_to_phase(beta, mu)
        r = tr.transport_rays(p, m, x1, x2, th, f=FunctionSource(f), dt=1e-3)
        for k in range(3):
            want = _ivp_transform(p, m, f, beta[k], mu[k])
            np.testing.assert_allclose(r.J[k, :, 0], want, atol=1e-8)


class TestStructure:
    def test_unitary_pairs(self, sphere_cap, small_bgrid):
        for name in ("su2", "scalar_unitary"):
            p = pair_from_spec({"preset": name})
            S = scattering_data(p, sphere_cap, small_bgrid)
            assert S.relation_residual < 1e-8
            assert S.unitarity_minus < 1e-10
            assert np.max(tr.unitarity_along_rays(p, sphere_cap, small_bgrid)) < 1e-10

    def test_relation_nonunitary(self, sphere_cap, small_bgrid):
        S = scattering_data(pair_from_spec({"preset": "general"}), sphere_cap, small_bgrid)
        assert S.relation_residual < 1e-8 and np.isnan(S.unitarity_minus)

    def test_cross_check(self, sphere_cap, small_bgrid):
        p = pair_from_spec({"preset": "general"})
        d = ray_transform(p, sphere_cap, FunctionSource(_bump_source(2)), small_bgrid, check=True)
        assert d.meta["cross_check"] < 1e-8

    def test_propagate_U_matches_scattering(self, sphere_cap):
        p = pair_from_spec({"preset": "su2"})
        from gauge_xray.geometry import BoundaryPoint
        b = BoundaryPoint(0.7, 0.3)
        path = tr.propagate_U(p, sphere_cap, b)
        assert path.unitarity < 1e-10
        plus = tr.propagate_U(p, sphere_cap, b, side="plus")
        np.testing.assert_allclose(plus.U[0] @ path.U[-1], np.eye(2), atol=1e-8)

    @pytest.mark.parametrize("p_case", [0, 1, 2])
    def test_kernel_property(self, sphere_cap, small_bgrid, p_case):
        pair = pair_from_spec({"preset": "general"})
        v = np.array([1.0 + 0.5j, -0.3j])
        if p_case == 0:
            p = lambda a, b: ((1 - a * a - b * b) ** 2)[:, None] * v
            dp = lambda a, b: tuple((-4 * (1 - a * a - b * b) * z)[:, None] * v for z in (a, b))
        elif p_case == 1:
            p = lambda a, b: ((1 - a * a - b * b) * np.sin(a + b))[:, None] * v
            dp = lambda a, b: tuple(((-2 * z) * np.sin(a + b) + (1 - a * a - b * b) * np.cos(a + b))[:, None] * v
                                    for z in (a, b))
        else:
            p = lambda a, b: ((1 - a * a - b * b) * a * b)[:, None] * v
            dp = lambda a, b: ((b * (1 - 3 * a * a - b * b))[:, None] * v, (a * (1 - a * a - 3 * b * b))[:, None] * v)
        d = ray_transform(pair, sphere_cap, ExactSource(pair, sphere_cap, p, dp), small_bgrid)
        assert np.max(np.abs(d.values)) < 1e-8

    def test_gauge_invariance(self, sphere_cap):
        bg = BoundaryGrid(8, 6, 0.05)
        p = pair_from_spec({"preset": "general"})
        Q = gauge_from_spec({"preset": "gl2"})
        out = tr.gauge_invariance_check(p, Q, sphere_cap, FunctionSource(_bump_source(2)), bg, dt=2e-3)
        assert out["transform"] < 1e-8 and out["scattering"] < 1e-8
        assert out["boundary_Q_minus_Id"] < 1e-12

    @given(st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False),
           st.integers(0, 1000))
    def test_linearity(self, c, seed):
        m = metric_from_spec({"name": "bump", "c": 0.2})
        bg = BoundaryGrid(4, 3, 0.1)
        p = pair_from_spec({"preset": "su2"})
        f, g = _bump_source(2, seed), _bump_source(2, seed + 1)
        If = ray_transform(p, m, FunctionSource(f), bg, dt=4e-3).values
        Ig = ray_transform(p, m, FunctionSource(g), bg, dt=4e-3).values
        Ih = ray_transform(p, m, FunctionSource(lambda *a: c * f(*a) + g(*a)), bg, dt=4e-3).values
        np.testing.assert_allclose(Ih, c * If + Ig, atol=1e-11 * (1 + abs(c)))

    def test_boundary_grid_validation(self):
        with pytest.raises(ValueError):
            BoundaryGrid(4, 4, 0.0)
        w = BoundaryGrid(64, 32).weights()
        # midpoint rule for the integral of cos(mu), error about dmu^2 / 24
        exact = 2 * np.pi * 2 * np.cos(0.05)
        assert abs(w.sum() - exact) / exact < 1e-3
