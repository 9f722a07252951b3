import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gauge_xray import identities as I
from gauge_xray.bundle import SMGrid
from gauge_xray.gauge import pair_from_spec


@pytest.fixture(scope="module")
def su2():
    return pair_from_spec({"preset": "su2"})


def _fields(g, n=2):
    u = I.test_field(g, n=n, m=4, modes=(-1, 0, 1, 2), seed=1)
    w = I.test_field(g, n=n, m=4, modes=(-2, 1), seed=2)
    return u, w


class TestHelpers:
    @given(st.floats(0.5, 4.0), st.floats(1e-3, 10.0))
    def test_slope_of_power_law(self, p, c):
        hs = [0.1, 0.05, 0.025]
        assert abs(I.refinement_slope(hs, [c * h**p for h in hs]) - p) < 1e-9

    def test_slope_needs_three_points(self):
        with pytest.raises(ValueError):
            I.refinement_slope([0.1, 0.05], [1.0, 0.25])

    def test_field_is_seeded(self):
        g = SMGrid(16, 8, 3)
        a = I.test_field(g, n=2, seed=5)
        np.testing.assert_array_equal(a, I.test_field(g, n=2, seed=5))
        assert not np.allclose(a, I.test_field(g, n=2, seed=6))

    def test_report_json(self, flat, su2):
        g = SMGrid(24, 16, 6)
        u, _ = _fields(g)
        rep = I.pestov_residual(su2, flat, g, u)
        d = json.loads(rep.to_json())
        assert d["name"] and d["relative"] == pytest.approx(rep.relative)


class TestConvergence:
    """Every discrete identity residual shrinks at least like h^1.8."""

    def _run(self, fn, pair, metric):
        rel = []
        for nx in (24, 48):
            g = SMGrid(nx, 16, 6)
            rel.append(fn(pair, metric, g, *_fields(g)))
        return rel

    def _check(self, rel, floor=1e-10):
        a, b = rel
        assert b < 1e-2
        assert b < floor or a / b > 2**1.8

    def test_commutators(self, sphere_cap, su2):
        per = {}
        for nx in (24, 48):
            g = SMGrid(nx, 16, 6)
            for k, r in I.commutator_residuals(su2, sphere_cap, g, _fields(g)[0]).items():
                per.setdefault(k, []).append(r.relative)
        assert set(per) >= {"H_X", "H_P", "H_A", "V_P", "V_Q", "P_Q"}
        for k, rel in per.items():
            self._check(rel)

    def test_antisymmetry(self, sphere_cap, su2):
        per = {}
        for nx in (24, 48):
            g = SMGrid(nx, 16, 6)
            u, w = _fields(g)
            for k, r in I.antisymmetry_residuals(su2, sphere_cap, g, u, w).items():
                per.setdefault(k, []).append(r.relative)
        for k, rel in per.items():
            self._check(rel)

    def test_pestov(self, sphere_cap, su2):
        self._check(self._run(lambda p, m, g, u, w: I.pestov_residual(p, m, g, u).relative, su2, sphere_cap))

    def test_low_mode_energy(self, sphere_cap, su2):
        def fn(p, m, g, u, w):
            u0 = np.broadcast_to(u.mean(axis=2, keepdims=True), u.shape)
            return I.lemma63_check(p, m, g, u0).relative
        self._check(self._run(fn, su2, sphere_cap))

    def test_holomorphicity_pairing(self, sphere_cap, su2):
        self._check(self._run(lambda p, m, g, u, w: I.holomorphicity_pairing(p, m, g, u).relative, su2, sphere_cap))

    def test_riccati_nonneg(self, sphere_cap, su2):
        g = SMGrid(24, 16, 6)
        rep = I.riccati_nonneg_check(su2, sphere_cap, g, _fields(g)[0], dt=4e-3)
        assert rep.extra["nonneg"]
