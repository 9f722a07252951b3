import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gauge_xray import inversion as inv
from gauge_xray.gauge import gauge_from_spec, pair_from_spec
from gauge_xray.inversion import DofLayout, LiftedPair, assemble_forward, kernel_map, kernel_probe
from gauge_xray.transport import BoundaryGrid


@pytest.fixture(scope="module")
def su2_op(sphere_cap):
    p = pair_from_spec({"preset": "su2"})
    return p, assemble_forward(p, sphere_cap, 5, BoundaryGrid(16, 8, 0.05), dt=4e-3)


@pytest.fixture(scope="module")
def sphere_cap():
    from gauge_xray.geometry import metric_from_spec
    return metric_from_spec({"name": "positive", "c": 0.5})


class TestLayout:
    @pytest.mark.parametrize("m,N", [(5, 9), (9, 37), (11, 69)])
    def test_node_counts(self, m, N):
        lay = DofLayout(m, 2)
        assert lay.N == N
        assert lay.size == 2 * 2 * N * 3
        y1, y2 = lay.nodes
        # every hat support stays in the closed disk
        assert np.all(np.hypot(y1, y2) + np.sqrt(2) * lay.H <= 1 + 1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            DofLayout(1, 1)
        with pytest.raises(ValueError):
            DofLayout(5, 1, ("G",))

    @given(st.integers(0, 2**32 - 1), st.sampled_from([("F",), ("alpha",), ("F", "alpha")]))
    def test_complex_round_trip(self, seed, forms):
        lay = DofLayout(5, 2, forms)
        x = np.random.Generator(np.random.Philox(seed)).standard_normal(lay.size)
        np.testing.assert_array_equal(lay.from_complex(lay.to_complex(x)), x)

    def test_hats_interpolate_nodes(self):
        lay = DofLayout(7, 1, ("F",))
        y1, y2 = lay.nodes
        np.testing.assert_allclose(lay.hats(y1, y2), np.eye(lay.N), atol=1e-14)


class TestKernelMap:
    def test_injective(self):
        for name in ("zero", "su2", "general"):
            p = pair_from_spec({"preset": name})
            T = kernel_map(p, DofLayout(7, p.n))
            assert np.linalg.matrix_rank(T) == T.shape[1]

    def test_matches_fields_on_linear_p(self):
        # for p linear in x the centred stencil is exact away from the node boundary
        p = pair_from_spec({"preset": "general"})
        lay = DofLayout(9, 2)
        y1, y2 = lay.nodes
        v = np.array([1.0 - 0.5j, 0.25j])
        pv = (0.3 + y1 - 2 * y2)[:, None] * v
        T = kernel_map(p, lay)
        out = lay.to_complex(T @ np.concatenate([pv.real.ravel(), pv.imag.ravel()]))
        A1, A2, P = p.fields(y1, y2)
        far = np.hypot(y1, y2) < 1 - np.sqrt(2) * lay.H - 2.5 * lay.H
        np.testing.assert_allclose(out["F"][far], (P @ pv[..., None])[far, :, 0], atol=1e-12)
        np.testing.assert_allclose(out["alpha1"][far], (v + (A1 @ pv[..., None])[..., 0])[far], atol=1e-12)
        np.testing.assert_allclose(out["alpha2"][far], (-2 * v + (A2 @ pv[..., None])[..., 0])[far], atol=1e-12)


class TestForward:
    def test_compatible_annihilates_gauge(self, su2_op):
        _, op = su2_op
        assert np.linalg.norm(op.matrix @ op.T) < 1e-10 * np.linalg.norm(op.matrix) * np.linalg.norm(op.T)

    def test_gauge_leak_shrinks(self, sphere_cap, su2_op):
        # the plain hat operator only approximately annihilates (Phi p, d_A p)
        p, op = su2_op
        fine = assemble_forward(p, sphere_cap, 9, op.bgrid, dt=4e-3)
        assert fine.meta["gauge_leak"] < op.meta["gauge_leak"] < 0.2

    def test_kernel_dimension_matches(self, su2_op):
        p, op = su2_op
        rep = kernel_probe(op, p)
        assert rep.matches and not rep.inconclusive and rep.injective_T
        assert rep.max_fit_residual < 1e-8
        d = json.loads(rep.to_json())
        assert d["kernel_dim"] == d["predicted_dim"] == 2 * 2 * 9

    def test_functions_only_trivial_kernel(self, sphere_cap):
        op = assemble_forward(pair_from_spec({"preset": "zero"}), sphere_cap, 5, BoundaryGrid(12, 6, 0.05),
                              forms=("F",), dt=4e-3)
        rep = kernel_probe(op)
        assert rep.kernel_dim == 0 and rep.predicted_dim == 0 and not rep.inconclusive

    def test_guards(self, sphere_cap, su2_op):
        p, op = su2_op
        with pytest.raises(inv.InversionError):
            assemble_forward(p, sphere_cap, 9, BoundaryGrid(64, 32), max_entries=1000)
        with pytest.raises(ValueError):
            assemble_forward(p, sphere_cap, 5, BoundaryGrid(4, 4), reconstruction="exact")
        with pytest.raises(ValueError):
            kernel_probe(op, pair_from_spec({"preset": "zero"}))
        with pytest.raises(inv.InversionError):
            inv.recover_f(op, np.zeros(3))

    def test_recovery_of_hat_truth(self, su2_op):
        # data generated by the plain operator itself are fit to the ridge level
        _, op = su2_op
        x = np.random.Generator(np.random.Philox(7)).standard_normal(op.layout.size)
        rec = inv.recover_f(op, op.real_to_data(op.plain @ x), ridge=1e-12)
        assert rec.data_residual < 1e-6 and not rec.resolution_flag
        assert inv.kernel_orthogonal_error(op, x, rec.x) < 1e-3


class TestRigidity:
    @given(st.integers(0, 2**32 - 1))
    def test_lift_acts_on_vec(self, seed):
        rng = np.random.Generator(np.random.Philox(seed))
        pa, pb = pair_from_spec({"preset": "general"}), pair_from_spec({"preset": "su2"})
        x1, x2 = rng.uniform(-0.6, 0.6, 2), rng.uniform(-0.6, 0.6, 2)
        R = rng.standard_normal((2, 2, 2)) + 1j * rng.standard_normal((2, 2, 2))
        L = LiftedPair(pa, pb).fields(x1, x2)
        for MA, MB, ML in zip(pa.fields(x1, x2), pb.fields(x1, x2), L):
            np.testing.assert_allclose((ML @ inv.vec(R)[..., None])[..., 0], inv.vec(MA @ R - R @ MB), atol=1e-12)

    def test_lift_size_mismatch(self):
        with pytest.raises(ValueError):
            LiftedPair(pair_from_spec({"preset": "zero"}), pair_from_spec({"preset": "su2"}))

    def test_fan_identity_for_equal_pairs(self, sphere_cap):
        p = pair_from_spec({"preset": "su2"})
        U = inv.fan_transport(p, p, sphere_cap, np.array([0.1, -0.4]), np.array([0.2, 0.5]), 8, 4e-3)
        np.testing.assert_allclose(U, np.broadcast_to(np.eye(2), U.shape), atol=1e-10)

    def test_scalar_experiment(self, sphere_cap):
        p = pair_from_spec({"preset": "scalar_unitary"})
        Q = gauge_from_spec({"preset": "scalar_phase"})
        rep = inv.rigidity_experiment(p, Q, sphere_cap, BoundaryGrid(12, 6, 0.05), h=0.3, n_dirs=16,
                                      dt=4e-3, conn_stride=1)
        assert rep.ok, rep.failures()
        d = json.loads(rep.to_json())
        assert d["ok"] and d["meta"]["interior_points"] > 20

    def test_report_failures(self):
        rep = inv.RigidityReport(1.0, 0, 0, 0, 0, 0, 0, {"scattering_gap": 1e-5, "gauge_error": 1e-3})
        assert set(rep.failures()) == {"scattering_gap"} and not rep.ok
