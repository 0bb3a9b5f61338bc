"""Lyapunov estimators: degenerate oracles, structure checks, determinism."""

import numpy as np
import pytest

from transportlab import fields
from transportlab.lyapunov import (
    check_slope_at_zero,
    estimate_lambda1,
    estimate_moment_lyapunov,
    estimate_twisted_eigen,
    second_differences,
)


def constant_model():
    return fields.build_custom([((0, 0), (1.0, 0.0), 1.0, "cos"),
                                ((0, 0), (0.0, 1.0), 1.0, "cos")])


class TestLambda1:
    def test_constant_field_zero_exponent(self):
        est = estimate_lambda1(constant_model(), A=1.0, t_final=50.0, dt=0.05,
                               n_realizations=8, seed=1)
        assert est.lambda1_hat == 0.0
        assert est.stderr == 0.0
        np.testing.assert_array_equal(est.exponents, 0.0)

    def test_kraichnan_positive(self):
        model = fields.build_kraichnan(2, 4.0, 2)
        est = estimate_lambda1(model, A=1.0, t_final=60.0, dt=5e-3,
                               n_realizations=16, seed=2)
        lo, hi = est.confidence_interval()
        assert lo > 0.0

    def test_amplitude_time_change(self):
        # lambda1(A) ~ A^2 lambda1(1) within combined confidence intervals
        model = fields.build_kraichnan(2, 4.0, 2)
        e1 = estimate_lambda1(model, A=1.0, t_final=80.0, dt=4e-3,
                              n_realizations=24, seed=3)
        e2 = estimate_lambda1(model, A=2.0, t_final=80.0, dt=1e-3,
                              n_realizations=24, seed=4)
        diff = abs(e2.lambda1_hat - 4.0 * e1.lambda1_hat)
        combined = np.hypot(2 * 1.96 * e2.stderr, 4.0 * 2 * 1.96 * e1.stderr)
        assert diff < combined

    def test_invariant_under_dt_and_ensemble_size(self):
        model = fields.build_br()
        base = estimate_lambda1(model, 1.0, 60.0, 0.01, 16, seed=7)
        half_dt = estimate_lambda1(model, 1.0, 60.0, 0.005, 16, seed=7)
        double_n = estimate_lambda1(model, 1.0, 60.0, 0.01, 32, seed=7)
        for other in (half_dt, double_n):
            diff = abs(base.lambda1_hat - other.lambda1_hat)
            assert diff <= 2.0 * np.hypot(base.stderr, other.stderr)

    def test_preconditions(self):
        model = fields.build_br()
        with pytest.raises(ValueError):
            estimate_lambda1(model, 1.0, 10.0, 1e-3, 16, 0)
        with pytest.raises(ValueError):
            estimate_lambda1(model, 1.0, 60.0, 1e-3, 4, 0)

    def test_deterministic(self):
        model = fields.build_br()
        a = estimate_lambda1(model, 1.0, 50.0, 0.01, 8, seed=9)
        b = estimate_lambda1(model, 1.0, 50.0, 0.01, 8, seed=9)
        np.testing.assert_array_equal(a.exponents, b.exponents)


class TestMomentLyapunov:
    def test_p_zero_exact(self):
        model = fields.build_br()
        curve = estimate_moment_lyapunov(model, 1.0, [0.0], 20.0, 0.01, 1024, seed=1)
        assert curve.lambda_hat[0] == 0.0
        assert curve.stderr[0] == 0.0

    def test_constant_field_zero_curve(self):
        curve = estimate_moment_lyapunov(constant_model(), 1.0,
                                         [-0.5, -0.1, 0.0, 0.1, 0.5], 20.0, 0.01,
                                         1024, seed=2)
        np.testing.assert_allclose(curve.lambda_hat, 0.0, atol=1e-12)

    def test_preconditions(self):
        model = fields.build_br()
        with pytest.raises(ValueError):
            estimate_moment_lyapunov(model, 1.0, [1.5], 20.0, 0.01, 1024, seed=0)
        with pytest.raises(ValueError):
            estimate_moment_lyapunov(model, 1.0, [0.5], 20.0, 0.01, 100, seed=0)

    def test_ess_guard_flags_unreliable(self):
        # force severe reweighting with a large |p| on a strongly mixing family:
        # guard reported through max_weight_fraction, reliable must stay boolean
        model = fields.build_kraichnan(2, 4.0, 2)
        curve = estimate_moment_lyapunov(model, 1.0, [-1.0, 0.25], 20.0, 0.01,
                                         1024, seed=3)
        assert curve.max_weight_fraction[0] > curve.max_weight_fraction[1]
        assert curve.reliable.dtype == bool

    def test_normalized_vs_unnormalized_identity(self):
        # Lambda from unit-tangent log growth equals Lambda from |J v| on the
        # same noise; run both representations over 100 steps
        from transportlab.flow import FlowState, step_tangent, step_unit_tangent
        from transportlab.noise import NoiseRealization

        model = fields.build_kraichnan(2, 4.0, 2)
        noise = NoiseRealization(17, 1e-3, model.n_modes)
        su = FlowState.initial([[0.7, 1.9]], track_unit_tangents=True)
        st = FlowState.initial([[0.7, 1.9]], track_tangents=True)
        for n in range(100):
            inc = noise.increments(n)
            su = step_unit_tangent(model, su, inc, 1e-3)
            st = step_tangent(model, st, inc, 1e-3)
        ref = np.log(np.linalg.norm(st.tangents[0] @ np.array([1.0, 0.0])))
        assert abs(su.log_growth[0] - ref) < 1e-8

    def test_concavity_on_kraichnan(self):
        model = fields.build_kraichnan(2, 4.0, 2)
        curve = estimate_moment_lyapunov(
            model, 1.0, [-0.5, -0.25, -0.1, 0.0, 0.1, 0.25, 0.5], 30.0, 5e-3,
            1024, seed=4,
        )
        d2, se2 = second_differences(curve)
        assert np.all(d2 <= 2.0 * se2)

    def test_deterministic(self):
        model = fields.build_br()
        c1 = estimate_moment_lyapunov(model, 1.0, [0.25], 20.0, 0.01, 1024, seed=5)
        c2 = estimate_moment_lyapunov(model, 1.0, [0.25], 20.0, 0.01, 1024, seed=5)
        assert c1.lambda_hat[0] == c2.lambda_hat[0]


class TestSlopeAtZero:
    def test_constant_field_slope_zero(self):
        curve = estimate_moment_lyapunov(constant_model(), 1.0, [-0.1, 0.0, 0.1],
                                         20.0, 0.01, 1024, seed=1)
        report = check_slope_at_zero(curve, lambda1=0.0)
        # log growths are identically zero up to round-off accumulation
        assert abs(report["slope"]) < 1e-13
        assert abs(report["difference"]) < 1e-13

    def test_requires_symmetric_pair(self):
        curve = estimate_moment_lyapunov(constant_model(), 1.0, [0.1, 0.3],
                                         20.0, 0.01, 1024, seed=1)
        with pytest.raises(ValueError):
            check_slope_at_zero(curve, lambda1=0.0)


class TestTwistedEigen:
    def test_p_zero_markov(self):
        model = fields.build_kraichnan(2, 4.0, 2)
        res = estimate_twisted_eigen(model, 1.0, 0.0, grid_resolution=6,
                                     t_step=0.5, n_transition_samples=8, seed=6,
                                     dt=5e-3, n_angle=4)
        assert abs(res.eigenvalue - 1.0) < 1e-10
        assert abs(res.lambda_hat) < 1e-10
        # eigenfunction constant within discretization error
        assert np.abs(res.psi - 1.0).max() < 1e-2

    def test_eigenfunction_positive(self):
        model = fields.build_kraichnan(2, 4.0, 2)
        res = estimate_twisted_eigen(model, 1.0, 0.25, grid_resolution=6,
                                     t_step=0.5, n_transition_samples=8, seed=7,
                                     dt=5e-3, n_angle=4)
        assert res.psi.min() > 0.0

    def test_d2_only(self):
        model = fields.build_kraichnan(3, 4.0, 1)
        with pytest.raises(ValueError):
            estimate_twisted_eigen(model, 1.0, 0.1, 4, 0.5, 8, 0)
