"""Stochastic flow integrators: exactness cases, coupling, volume, QR."""

import numpy as np
import pytest

from transportlab import fields, flow
from transportlab.noise import EnsembleNoise, NoiseRealization
from transportlab.torus import displacement, wrap


def kraichnan():
    return fields.build_kraichnan(2, 4.0, 2)


def constant_model(vx=1.0, vy=0.0):
    return fields.build_custom([((0, 0), (vx, vy), np.hypot(vx, vy), "cos")])


class TestStep:
    def test_zero_increments_fixed_point(self):
        model = kraichnan()
        state = flow.FlowState.initial([[0.3, 0.4], [1.0, 2.0]])
        out = flow.step(model, state, (np.zeros(model.n_modes), np.zeros(2)), 1e-3)
        np.testing.assert_array_equal(out.positions, state.positions)

    def test_constant_field_exact_shift(self):
        model = constant_model(1.0, 0.0)
        state = flow.FlowState.initial([[0.5, 0.5]])
        w = 0.37
        out = flow.step(model, state, (np.array([w]), np.zeros(2)), 1e-3, A=2.0)
        np.testing.assert_allclose(
            out.positions[0], wrap(np.array([0.5 + 2.0 * w, 0.5])), rtol=0, atol=1e-15
        )

    def test_increment_shape_mismatch(self):
        model = kraichnan()
        state = flow.FlowState.initial([[0.0, 0.0]])
        with pytest.raises(ValueError):
            flow.step(model, state, (np.zeros(3), np.zeros(2)), 1e-3)

    def test_viscous_kick_variance(self):
        # no transport modes: x_T - x_0 is sqrt(2 kappa) W~_T, variance 2*kappa*T
        kappa, T, dt, R = 0.01, 1.0, 0.01, 10_000
        model = fields.build_custom([])
        cfg = flow.EnsembleConfig(
            particles=1, realizations=R, t_final=T, dt=dt, kappa=kappa, seed=99,
            snapshot_every=100,
        )
        run = flow.run_ensemble(model, cfg)
        disp = displacement(run.positions[-1, :, 0, :], run.positions[0, :, 0, :])
        target = 2.0 * kappa * T
        for c in range(2):
            svar = disp[:, c].var(ddof=1)
            assert abs(svar - target) < 3.0 * target * np.sqrt(2.0 / (R - 1))

    def test_shared_noise_identical_particles_bitwise(self):
        model = kraichnan()
        cfg = flow.EnsembleConfig(
            particles=2, realizations=3, t_final=0.2, dt=1e-3, seed=5,
            initial_positions=[[1.0, 2.0], [1.0, 2.0]], snapshot_every=50,
        )
        run = flow.run_ensemble(model, cfg)
        np.testing.assert_array_equal(run.positions[..., 0, :], run.positions[..., 1, :])


class TestTangent:
    def test_constant_field_identity_jacobian(self):
        model = constant_model()
        state = flow.FlowState.initial([[0.1, 0.2]], track_tangents=True)
        for n in range(50):
            inc = NoiseRealization(3, 1e-2, model.n_modes).increments(n)
            state = flow.step_tangent(model, state, inc, 1e-2)
        np.testing.assert_array_equal(state.tangents[0], np.eye(2))

    def test_br_vanishing_first_order_update(self):
        # BR sigma_1 only, Dsigma_1(pi/2, 0) = 0, so J - I is O(w^2)
        model = fields.build_br()
        state = flow.FlowState.initial([[np.pi / 2, 0.0]], track_tangents=True)
        w = 1e-3
        inc = (np.array([w, 0.0, 0.0, 0.0]), np.zeros(2))
        out = flow.step_tangent(model, state, inc, 1e-3)
        assert np.abs(out.tangents[0] - np.eye(2)).max() < 10 * w**2

    def test_det_deviation_is_order_dt(self):
        model = kraichnan()
        cfg = flow.EnsembleConfig(
            particles=1, realizations=16, t_final=0.25, dt=2e-3, seed=11,
            track_tangents=True, snapshot_every=1000, qr_every=10**9,
        )
        run = flow.run_ensemble(model, cfg)
        dets = np.linalg.det(run.tangents[-1][:, 0])
        assert np.median(np.abs(dets - 1.0)) < 5e-3

    def test_requires_tangents(self):
        model = kraichnan()
        state = flow.FlowState.initial([[0.0, 0.0]])
        with pytest.raises(ValueError):
            flow.step_tangent(model, state, (np.zeros(model.n_modes), np.zeros(2)), 1e-3)


class TestUnitTangent:
    def test_constant_field_direction_frozen(self):
        model = constant_model()
        state = flow.FlowState.initial([[0.0, 0.0]], track_unit_tangents=True)
        inc = (np.array([0.4]), np.zeros(2))
        out = flow.step_unit_tangent(model, state, inc, 1e-3)
        np.testing.assert_array_equal(out.unit_tangents, state.unit_tangents)
        np.testing.assert_array_equal(out.log_growth, 0.0)

    def test_unit_norm_after_every_step(self):
        model = kraichnan()
        state = flow.FlowState.initial([[1.0, 1.0]], track_unit_tangents=True)
        noise = NoiseRealization(7, 1e-3, model.n_modes)
        for n in range(200):
            state = flow.step_unit_tangent(model, state, noise.increments(n), 1e-3, A=2.0)
            assert abs(np.linalg.norm(state.unit_tangents[0]) - 1.0) <= 1e-14

    def test_log_growth_matches_unnormalized_tangent(self):
        # sum of per-step log growths == log |J_T v0| on identical noise
        model = kraichnan()
        noise = NoiseRealization(13, 1e-3, model.n_modes)
        su = flow.FlowState.initial([[0.5, 2.5]], track_unit_tangents=True)
        st = flow.FlowState.initial([[0.5, 2.5]], track_tangents=True)
        for n in range(100):
            inc = noise.increments(n)
            su = flow.step_unit_tangent(model, su, inc, 1e-3, A=1.5)
            st = flow.step_tangent(model, st, inc, 1e-3, A=1.5)
        v0 = np.array([1.0, 0.0])
        ref = np.log(np.linalg.norm(st.tangents[0] @ v0))
        assert abs(su.log_growth[0] - ref) < 1e-8


class TestQR:
    def test_identity(self):
        state = flow.FlowState.initial([[0.0, 0.0]], track_tangents=True)
        out = flow.qr_renormalize(state)
        np.testing.assert_allclose(out.tangents[0], np.eye(2), atol=1e-15)
        np.testing.assert_array_equal(out.log_growth, 0.0)

    def test_double_identity(self):
        state = flow.FlowState.initial([[0.0, 0.0]], track_tangents=True)
        state.tangents[0] = 2.0 * np.eye(2)
        out = flow.qr_renormalize(state)
        np.testing.assert_allclose(out.log_growth[0], np.log(2.0), rtol=1e-15)

    def test_permutation_matrix(self):
        state = flow.FlowState.initial([[0.0, 0.0]], track_tangents=True)
        state.tangents[0] = np.array([[0.0, 1.0], [1.0, 0.0]])
        out = flow.qr_renormalize(state)
        assert out.log_growth[0] == 0.0
        np.testing.assert_allclose(np.diagonal(out.tangents[0] @ out.tangents[0].T), 1.0)

    def test_singular_raises(self):
        state = flow.FlowState.initial([[0.0, 0.0]], track_tangents=True)
        state.tangents[0] = np.zeros((2, 2))
        with pytest.raises(flow.FlowBlowupError):
            flow.qr_renormalize(state)


class TestSchemes:
    def test_euler_heun_pathwise_order(self):
        model = kraichnan()
        x0 = [[2.0, 1.0]]

        def gap(dt, noise):
            cfg = dict(particles=1, realizations=8, t_final=0.5, dt=dt, seed=21,
                       initial_positions=x0, snapshot_every=10**9)
            rh = flow.run_ensemble(model, flow.EnsembleConfig(**cfg), noise=noise)
            re = flow.run_ensemble(model, flow.EnsembleConfig(**cfg, scheme="euler"), noise=noise)
            return np.abs(displacement(rh.positions[-1], re.positions[-1])).max()

        coarse = EnsembleNoise(21, 4e-3, model.n_modes)
        g1 = gap(4e-3, coarse)
        g2 = gap(2e-3, coarse.refine())
        assert g1 < 0.05
        assert g2 < g1

    def test_weak_order_sanity_bridge(self):
        # halving dt moves the mean pair separation by < 3 combined SEs
        model = kraichnan()
        R = 1000
        x0 = [[0.5, 0.5], [0.5 + 0.05, 0.5]]

        def mean_sep(dt, noise):
            cfg = flow.EnsembleConfig(particles=2, realizations=R, t_final=0.5, dt=dt,
                                      seed=33, initial_positions=x0, snapshot_every=10**9)
            run = flow.run_ensemble(model, cfg, noise=noise)
            seps = np.linalg.norm(
                displacement(run.positions[-1, :, 0, :], run.positions[-1, :, 1, :]), axis=-1
            )
            return seps.mean(), seps.std(ddof=1) / np.sqrt(R)

        coarse = EnsembleNoise(33, 4e-3, model.n_modes)
        m1, s1 = mean_sep(4e-3, coarse)
        m2, s2 = mean_sep(2e-3, coarse.refine())
        assert abs(m1 - m2) < 3.0 * np.hypot(s1, s2)


class TestRunEnsemble:
    def test_snapshot_grid_covers_interval(self):
        model = fields.build_br()
        cfg = flow.EnsembleConfig(particles=1, realizations=1, t_final=0.1, dt=1e-3,
                                  seed=1, snapshot_every=30)
        run = flow.run_ensemble(model, cfg)
        assert run.times[0] == 0.0
        assert run.times[-1] == pytest.approx(0.1)
        steps = np.diff(run.times[:-1])
        np.testing.assert_allclose(steps, steps[0])

    def test_same_seed_bit_identical(self):
        model = kraichnan()
        cfg = flow.EnsembleConfig(particles=2, realizations=4, t_final=0.05, dt=1e-3,
                                  seed=8, initial_positions=[[0.1, 0.2], [3.0, 4.0]],
                                  snapshot_every=10)
        r1 = flow.run_ensemble(model, cfg)
        r2 = flow.run_ensemble(model, cfg)
        np.testing.assert_array_equal(r1.positions, r2.positions)

    def test_csv_rows_schema(self):
        model = fields.build_br()
        cfg = flow.EnsembleConfig(particles=2, realizations=2, t_final=0.01, dt=1e-3,
                                  seed=2, track_tangents=True, snapshot_every=5)
        run = flow.run_ensemble(model, cfg)
        header, rows = flow.snapshots_to_csv_rows(run)
        assert header[:3] == ["realization", "t", "particle"]
        assert "J11" in header and "log_growth" in header
        assert len(rows) == len(run.times) * 2 * 2
        assert len(rows[0]) == len(header)

    def test_validation(self):
        model = fields.build_br()
        with pytest.raises(ValueError):
            flow.run_ensemble(model, flow.EnsembleConfig(t_final=-1.0))
        with pytest.raises(ValueError):
            flow.run_ensemble(
                model,
                flow.EnsembleConfig(particles=2, initial_positions=[[0.0, 0.0]]),
            )
