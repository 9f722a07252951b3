import numpy as np
import pytest
from hypothesis import given, strategies as st

from gauge_xray import bundle as bd
from gauge_xray.bundle import SMGrid
from gauge_xray.geometry import flow_for, metric_from_spec


def _field(grid, fn):
    X1, X2, TH = grid.sm_mesh()
    return np.asarray(fn(X1, X2, TH), dtype=complex) * np.ones((grid.nx, grid.nx, grid.ntheta))


class TestGrid:
    def test_validation(self):
        with pytest.raises(ValueError):
            SMGrid(16, 15, 4)
        with pytest.raises(ValueError):
            SMGrid(16, 8, 4)
        with pytest.raises(bd.StencilError):
            SMGrid(33, 16, 4, margin=0.01)

    def test_mask_inside_collar(self):
        g = SMGrid(33, 16, 4)
        X1, X2 = g.mesh()
        assert np.all(np.hypot(X1, X2)[g.mask] <= 1 - 2 * g.h + 1e-14)


class TestDerivatives:
    def test_fourth_order_exact_on_cubics(self):
        g = SMGrid(21, 8, 3)
        X1, X2 = g.mesh()
        u = X1**3 - 2 * X1 * X2**2 + X2
        d1 = bd.d_space(u, 0, g.h)
        inner = (slice(2, -2), slice(2, -2))
        np.testing.assert_allclose(d1[inner], (3 * X1**2 - 2 * X2**2)[inner], atol=1e-12)

    def test_spectral_theta_derivative(self):
        g = SMGrid(12, 16, 6)
        u = _field(g, lambda a, b, t: np.cos(3 * t) + 2j * np.sin(t))
        du = bd.d_theta(u)
        want = _field(g, lambda a, b, t: -3 * np.sin(3 * t) + 2j * np.cos(t))
        np.testing.assert_allclose(du, want, atol=1e-12)

    @pytest.mark.parametrize("spec", [{"name": "positive", "c": 0.5}, {"name": "bump", "c": 0.2}])
    def test_X_is_derivative_along_flow(self, spec):
        # independent oracle: centred difference of u along the geodesic flow
        m = metric_from_spec(spec)
        g = SMGrid(81, 32, 8)
        fn = lambda a, b, t: np.exp(a * b) * np.cos(t) + b * np.sin(2 * t)
        Xu = bd.X_op(m, g, _field(g, fn))
        rng = np.random.Generator(np.random.Philox(3))
        for _ in range(5):
            i, j = rng.integers(25, 56, size=2)
            k = rng.integers(0, g.ntheta)
            x1, x2, th = g.x[i], g.x[j], g.theta[k]
            e = 1e-4
            vals = []
            for s in (e, -e):
                a, b, t, _ = flow_for(m, np.array([x1]), np.array([x2]), np.array([th]), s, dt=e / 4)
                vals.append(fn(a, b, t)[0])
            ref = (vals[0] - vals[1]) / (2 * e)
            assert abs(Xu[i, j, k] - ref) < 1e-5

    def test_bracket_X_V_is_Xperp(self, sphere_cap):
        g = SMGrid(41, 16, 4)
        u = _field(g, lambda a, b, t: np.sin(a + 2 * b) * np.exp(1j * t))
        lhs = bd.X_op(sphere_cap, g, bd.V_op(u)) - bd.V_op(bd.X_op(sphere_cap, g, u))
        rhs = bd.Xperp_op(sphere_cap, g, u)
        assert np.abs(lhs - rhs)[g.mask].max() < 1e-10

    @pytest.mark.parametrize("sign", [1, -1])
    def test_eta_shifts_modes(self, sphere_cap, sign):
        g = SMGrid(33, 16, 6)
        u = _field(g, lambda a, b, t: (1 - a**2 - b**2) * np.exp(2j * t))
        v = bd.eta_op(sphere_cap, g, u, sign)
        M = bd.modes_array(v, g.kmax)
        k = np.arange(-g.kmax, g.kmax + 1)
        mass = np.sum(np.abs(M[:, g.mask]) ** 2, axis=1)
        assert mass[k == 2 + sign][0] > 0
        assert mass[k != 2 + sign].max() < 1e-20 * mass.max()


class TestFiber:
    def test_hilbert_of_cosine_is_sine(self):
        g = SMGrid(10, 16, 6)
        u = _field(g, lambda a, b, t: np.cos(3 * t) + 0.5)
        np.testing.assert_allclose(bd.hilbert(u), _field(g, lambda a, b, t: np.sin(3 * t)), atol=1e-13)

    def test_projections_split_modes(self):
        g = SMGrid(10, 16, 6)
        u = _field(g, lambda a, b, t: np.exp(-2j * t) + 3 + np.exp(1j * t))
        f = bd.SMField(g, u)
        holo = bd.project_holo(f, "holo").values
        np.testing.assert_allclose(holo, _field(g, lambda a, b, t: 2 * np.exp(-2j * t) + 3), atol=1e-13)
        with pytest.raises(ValueError):
            bd.project_holo(f, "sideways")

    def test_mode_mass(self, flat):
        g = SMGrid(16, 16, 6)
        u = _field(g, lambda a, b, t: np.exp(-1j * t) + np.exp(2j * t))
        assert abs(bd.negative_mode_mass(u, g, flat) - 0.5) < 1e-12
        assert abs(bd.negative_mode_mass(u, g, flat, sign=1) - 0.5) < 1e-12

    @given(st.lists(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
                    min_size=13, max_size=13))
    def test_modes_round_trip(self, coeffs):
        g = SMGrid(8, 16, 6)
        M = np.asarray(coeffs)[:, None, None] * np.ones((1, 8, 8))
        u = bd.from_modes_array(M, g.ntheta)
        np.testing.assert_allclose(bd.modes_array(u, g.kmax), M, atol=1e-10)

    @given(st.integers(0, 2**32 - 1))
    def test_hilbert_skew_adjoint(self, seed):
        g = SMGrid(10, 16, 6)
        rng = np.random.Generator(np.random.Philox(seed))
        shape = (g.nx, g.nx, g.ntheta)
        u = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        v = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        m = metric_from_spec({"name": "flat"})
        lhs = bd.inner(bd.hilbert(u), v, g, m)
        rhs = -bd.inner(u, bd.hilbert(v), g, m)
        assert abs(lhs - rhs) < 1e-10 * (1 + abs(lhs))

    @given(st.integers(0, 2**32 - 1))
    def test_hilbert_squared(self, seed):
        g = SMGrid(8, 16, 6)
        M = np.random.Generator(np.random.Philox(seed)).standard_normal((13, 8, 8)).astype(complex)
        u = bd.from_modes_array(M, g.ntheta)
        u0 = bd.fiber_average(u)[..., None]
        np.testing.assert_allclose(bd.hilbert(bd.hilbert(u)), -(u - u0), atol=1e-10)
