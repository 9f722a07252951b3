import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp

from gauge_xray import geometry as geo
from gauge_xray.geometry import IsothermalMetric, metric_from_spec

beta_st = st.floats(0.0, 2 * np.pi, allow_nan=False)
mu_st = st.floats(-1.4, 1.4, allow_nan=False)


def _christoffel_exit(metric, beta, mu):
    """Exit point from the second-order geodesic equation in Cartesian form.

    For ``g = e^{2 lam} |dx|^2``:
    ``x'' = -2 <grad lam, x'> x' + |x'|^2 grad lam``.
    """
    x1, x2, th = geo.boundary_to_phase(beta, mu)
    s = np.exp(-metric.lam(x1, x2))
    y0 = [x1, x2, s * np.cos(th), s * np.sin(th)]

    def rhs(t, y):
        l1, l2 = metric.grad(y[0], y[1])
        v1, v2 = y[2], y[3]
        dot = l1 * v1 + l2 * v2
        vv = v1 * v1 + v2 * v2
        return [v1, v2, -2 * dot * v1 + vv * l1, -2 * dot * v2 + vv * l2]

    def leave(t, y):
        return y[0] ** 2 + y[1] ** 2 - 1.0
    leave.terminal, leave.direction = True, 1
    sol = solve_ivp(rhs, (0, 20), y0, events=leave, rtol=1e-11, atol=1e-12,
                    first_step=1e-3, max_step=0.05)
    t = sol.t_events[0][-1] if sol.t_events[0].size and sol.t_events[0][-1] > 1e-6 else sol.t_events[0][0]
    ye = sol.y_events[0][-1]
    return t, ye[0], ye[1]


class TestMetric:
    @pytest.mark.parametrize("spec", [
        {"name": "flat"}, {"name": "positive", "c": 0.5},
        {"name": "negative", "c": 0.4}, {"name": "bump", "c": 0.2},
    ])
    def test_curvature_matches_symbolic(self, spec):
        x, y = sp.symbols("x y", real=True)
        c = sp.Rational(str(spec.get("c", 1.0)))
        r2 = x**2 + y**2
        lam = {"flat": sp.Integer(0), "positive": c * sp.log(2 / (1 + r2)),
               "negative": c * sp.log(2 / (2 - r2)),
               "bump": c * sp.exp(-((x - sp.Rational(3, 10))**2 + (y + sp.Rational(1, 5))**2) / sp.Rational(1, 4))}[spec["name"]]
        K = sp.lambdify((x, y), -sp.exp(-2 * lam) * (sp.diff(lam, x, 2) + sp.diff(lam, y, 2)), "numpy")
        m = metric_from_spec(spec)
        pts = np.array([[0.0, 0.0], [0.3, -0.5], [-0.7, 0.2], [0.1, 0.9]])
        want = np.broadcast_to(K(pts[:, 0], pts[:, 1]), (4,))
        np.testing.assert_allclose(geo.curvature(m, pts[:, 0], pts[:, 1]), want, rtol=1e-12, atol=1e-12)

    def test_unknown_family_rejected(self):
        with pytest.raises(ValueError):
            IsothermalMetric("torus")

    def test_curvature_outside_disk_rejected(self, flat):
        with pytest.raises(geo.GeometryError):
            geo.curvature(flat, 1.1, 0.0)

    def test_hemisphere_boundary_not_strictly_convex(self):
        rep = geo.check_simple(IsothermalMetric("positive", 1.0), n_beta=8, n_mu=5)
        assert abs(rep["convexity_margin"]) < 1e-12


class TestFlatOracles:
    @given(beta_st, mu_st)
    def test_chord_length(self, beta, mu):
        x1, x2, th = geo.boundary_to_phase(np.array([beta]), np.array([mu]))
        tau = geo.exit_times(metric_from_spec({"name": "flat"}), x1, x2, th)
        assert abs(tau[0] - 2 * np.cos(mu)) < 1e-10

    @given(beta_st, mu_st)
    def test_scattering_relation(self, beta, mu):
        m = metric_from_spec({"name": "flat"})
        out = geo.scattering_relation_alpha(m, geo.BoundaryPoint(beta, mu))
        # mu counterclockwise from the inward normal; the outgoing angle is
        # measured from the outward normal, so a chord reflects its sign
        d = np.angle(np.exp(1j * (out.beta - (beta + np.pi + 2 * mu))))
        assert abs(d) < 1e-9 and abs(out.mu + mu) < 1e-9

    def test_tangential_rejected(self):
        with pytest.raises(geo.GeometryError):
            geo.BoundaryPoint(0.0, np.pi / 2)


class TestCurvedFlow:
    @pytest.mark.parametrize("spec", [{"name": "positive", "c": 0.5}, {"name": "bump", "c": 0.2},
                                      {"name": "negative", "c": 0.4}])
    def test_exit_matches_christoffel_integration(self, spec):
        m = metric_from_spec(spec)
        for beta, mu in [(0.3, 0.2), (2.0, -0.9), (4.5, 1.1)]:
            t_ref, e1, e2 = _christoffel_exit(m, beta, mu)
            x1, x2, th = geo.boundary_to_phase(np.array([beta]), np.array([mu]))
            res = geo.shoot(m, x1, x2, th, dt=1e-3)
            assert abs(res.tau[0] - t_ref) < 1e-7
            assert np.hypot(res.x1[0] - e1, res.x2[0] - e2) < 1e-7

    def test_exit_on_circle(self, sphere_cap, rng):
        beta = rng.uniform(0, 2 * np.pi, 50)
        mu = rng.uniform(-1.4, 1.4, 50)
        b2, m2, tau = geo.alpha_batch(sphere_cap, beta, mu)
        x1, x2, th = geo.boundary_to_phase(beta, mu)
        res = geo.shoot(sphere_cap, x1, x2, th)
        assert np.max(np.abs(np.hypot(res.x1, res.x2) - 1)) < 1e-10
        assert np.all(np.abs(m2) < np.pi / 2)

    def test_alpha_is_involution_up_to_reversal(self, sphere_cap):
        b = geo.BoundaryPoint(1.0, 0.4)
        out = geo.scattering_relation_alpha(sphere_cap, b)
        back = geo.scattering_relation_alpha(sphere_cap, out.reversed())
        assert abs(np.angle(np.exp(1j * (back.beta - b.beta)))) < 1e-8
        assert abs(back.mu - b.mu) < 1e-8

    def test_trapped_ray_raises(self, flat):
        with pytest.raises(geo.TrappedError):
            geo.shoot(flat, [0.0], [0.0], [0.0], t_max=0.5)


class TestRiccati:
    def test_flat_riccati_is_one_over_distance(self, flat):
        # on the flat disk a = 1 / (distance to the point eps before entry)
        x1, x2, th = np.array([0.2, -0.3]), np.array([0.1, 0.4]), np.array([0.7, 2.5])
        a = geo.riccati_field(flat, x1, x2, th, eps=0.1)
        back = geo.exit_times(flat, x1, x2, th + np.pi)
        np.testing.assert_allclose(a, 1.0 / (back + 0.1), rtol=1e-9)

    def test_residual_small_on_cap(self, sphere_cap):
        tr = geo.geodesic_flow(sphere_cap, geo.BoundaryPoint(0.5, 0.3).to_phase())
        sol = geo.riccati_along(sphere_cap, tr, eps=0.1)
        assert np.max(np.abs(sol.residual())) < 1e-8

    def test_cap_is_simple(self, sphere_cap):
        rep = geo.check_simple(sphere_cap, n_beta=8, n_mu=9)
        assert rep["convexity_margin"] > 0
        assert rep["no_conjugate_points"] and rep["simple_at_resolution"]
