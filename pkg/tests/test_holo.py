import numpy as np
import pytest
from scipy.integrate import quad

from gauge_xray import bundle, holo
from gauge_xray.bundle import SMGrid
from gauge_xray.gauge import area_primitive, zero_pair
from gauge_xray.geometry import boundary_to_phase, metric_from_spec
from gauge_xray.splines import SplineBasis, ray_integrals
from gauge_xray.transport import BoundaryGrid


@pytest.fixture(scope="module")
def setting():
    m = metric_from_spec({"name": "positive", "c": 0.5})
    g = SMGrid(32, 32, 8, margin=0.15)
    bg = BoundaryGrid(48, 24, 0.05)
    return m, g, bg


class TestSplines:
    def test_partition_of_unity(self):
        B = SplineBasis(8)
        x = np.linspace(-1, 1, 17)
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        T = B.tensor(X1.ravel(), X2.ravel())
        np.testing.assert_allclose(T.sum(axis=1), 1.0, atol=1e-12)

    def test_ray_integrals_flat_quadrature(self, flat):
        B = SplineBasis(6)
        R = ray_integrals(flat, B, 4, 3, 0.1, weighted=False)
        bg = BoundaryGrid(4, 3, 0.1)
        b, mu = bg.points()
        x1, x2, th = boundary_to_phase(b, mu)
        for r in (0, 5, 11):
            tau = 2 * np.cos(mu[r])
            for col in (3, 14, 20):
                coef = np.zeros(B.size)
                coef[col] = 1.0
                fn = lambda t: B.evaluate(coef, np.array([x1[r] + t * np.cos(th[r])]),
                                          np.array([x2[r] + t * np.sin(th[r])]))[0]
                want = quad(fn, 0, tau, limit=200, epsabs=1e-12)[0]
                assert abs(R[r, col] - want) < 1e-7


class TestPotentials:
    def test_helmholtz_exact_form(self, setting):
        m, g, _ = setting
        X1, X2 = g.mesh()
        q = (1 - X1**2 - X2**2) * np.sin(X1 + 0.5 * X2)
        a1, a2 = bundle.d_space(q, 0, g.h), bundle.d_space(q, 1, g.h)
        split = holo.helmholtz(m, g, a1, a2)
        errs = np.abs(split.p - q)[g.mask]
        assert errs.max() < 5e-3
        assert max(np.abs(split.alpha_s[0])[g.mask].max(), np.abs(split.alpha_s[1])[g.mask].max()) < 5e-2

    def test_potential_of_solenoidal(self, setting):
        m, g, _ = setting
        X1, X2 = g.mesh()
        F = np.exp(-(X1**2 + 2 * X2**2)) * (1 + X1) - 1.0
        # d1 F = beta2, d2 F = -beta1
        b1 = 2 * 2 * X2 * np.exp(-(X1**2 + 2 * X2**2)) * (1 + X1)
        b2 = np.exp(-(X1**2 + 2 * X2**2)) * (1 - 2 * X1 * (1 + X1))
        pot = holo.potential_of_solenoidal(m, g, b1, b2)
        # normalized at the grid point nearest the origin; compare up to a constant
        d = (pot.F - F)[g.mask]
        assert np.abs(d - d.mean()).max() < 1e-4

    def test_adjoint_of_constant(self, setting):
        m, g, bg = setting
        op = holo.assemble_adjoint(m, g, bg)
        out = op.apply(np.ones(bg.size))
        # the fiber average of a function constant along geodesics
        assert np.max(np.abs(out - 1.0)[g.mask]) < 1e-2

    def test_adjoint_pairing(self, setting):
        m, g, bg = setting
        X1, X2 = g.mesh()
        f = np.exp(-3 * (X1**2 + X2**2)) * (1 + X1 * X2)
        b, mu = bg.points()
        h = np.cos(mu) * (1 + 0.3 * np.sin(b))
        lhs, rhs = holo.adjoint_pairing(m, g, bg, f, h)
        assert abs(lhs - rhs) / abs(lhs) < 2e-2


class TestIntegratingFactor:
    def _f(self):
        F = lambda x1, x2: np.exp(-2 * (x1**2 + x2**2)) * (1 + x1)
        al = (lambda a, b: -1j * np.cos(b) * np.exp(-(a * a + b * b)), lambda a, b: -1j * (a * b + 0.3))
        return F, al

    @pytest.mark.parametrize("orientation", ["holo", "antiholo"])
    def test_factor(self, setting, orientation):
        m, g, bg = setting
        F, al = self._f()
        fac = holo.build_integrating_factor(m, g, bg, F=F, alpha=al, orientation=orientation, istar_bound=None)
        assert fac.residual < 2e-2
        sign = -1 if orientation == "holo" else 1
        assert bundle.negative_mode_mass(fac.w.values, g, m, sign=sign) < 1e-20
        assert fac.wrong_mode_mass < 1e-20

    def test_trivial_source(self, setting):
        m, g, bg = setting
        fac = holo.build_integrating_factor(m, g, bg, F=lambda a, b: 0 * a)
        assert fac.residual == 0.0 and not np.any(fac.w.values)

    def test_bad_orientation(self, setting):
        m, g, bg = setting
        with pytest.raises(ValueError):
            holo.build_integrating_factor(m, g, bg, F=lambda a, b: a, orientation="sideways")

    def test_residual_bound(self, setting):
        m, g, bg = setting
        F, al = self._f()
        with pytest.raises(holo.HoloError):
            holo.build_integrating_factor(m, g, bg, F=F, alpha=al, istar_bound=None, residual_bound=1e-12)

    def test_exp_shift(self, setting):
        m, g, bg = setting
        prim = area_primitive(m)
        fac = holo.integrating_factor_for_form(m, g, bg, (None, lambda a, b: prim.p(a, b)), istar_bound=None)
        src = lambda a, b, th: np.exp(-4 * (a * a + b * b)) * (1 + 0.5 * np.cos(th))
        chk = holo.exp_shift_check(m, fac, 1.0, src, pair=zero_pair(1), n_points=40)
        assert chk.relative_error < 2e-2
