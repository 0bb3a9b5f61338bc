"""Counter-based noise streams: determinism, statistics, bridge refinement."""

import numpy as np

from transportlab.noise import BlockNoise, EnsembleNoise, NoiseRealization


class TestDeterminism:
    def test_identical_parameters_identical_stream(self):
        a = NoiseRealization(123, 1e-3, 8, 2, realization=5)
        b = NoiseRealization(123, 1e-3, 8, 2, realization=5)
        for step in (0, 1, 63, 64, 1000):
            dwa, dta = a.increments(step)
            dwb, dtb = b.increments(step)
            np.testing.assert_array_equal(dwa, dwb)
            np.testing.assert_array_equal(dta, dtb)

    def test_different_seeds_differ(self):
        a = NoiseRealization(1, 1e-3, 8)
        b = NoiseRealization(2, 1e-3, 8)
        assert not np.array_equal(a.increments(0)[0], b.increments(0)[0])

    def test_different_realizations_differ(self):
        a = NoiseRealization(1, 1e-3, 8, realization=0)
        b = NoiseRealization(1, 1e-3, 8, realization=1)
        assert not np.array_equal(a.increments(0)[0], b.increments(0)[0])

    def test_transport_viscous_streams_independent_salts(self):
        n = NoiseRealization(9, 1e-3, 2, 2)
        dw, dt = n.increments(0)
        assert not np.array_equal(dw, dt)

    def test_single_view_matches_ensemble_rows(self):
        ens = EnsembleNoise(77, 1e-3, 8, 2)
        for r in (0, 3, 63, 64, 130):
            single = NoiseRealization(77, 1e-3, 8, 2, realization=r)
            for step in (0, 5, 64, 200):
                dw, dt = single.increments(step)
                edw, edt = ens.step_rows(step, r, r + 1)
                np.testing.assert_array_equal(dw, edw[0])
                np.testing.assert_array_equal(dt, edt[0])

    def test_row_range_spanning_blocks(self):
        ens = EnsembleNoise(5, 1e-3, 4)
        wide, _ = ens.step_rows(10, 0, 200)
        for r in (0, 63, 64, 199):
            single, _ = ens.step_rows(10, r, r + 1)
            np.testing.assert_array_equal(wide[r], single[0])


class TestStatistics:
    def test_variance_matches_dt(self):
        dt = 0.01
        bn = BlockNoise(42, dt, 16)
        draws = np.concatenate([bn._block(sb, 0).reshape(-1) for sb in range(4)])
        assert abs(draws.var() - dt) < 5 * dt * np.sqrt(2.0 / draws.size)
        assert abs(draws.mean()) < 5 * np.sqrt(dt / draws.size)

    def test_steps_uncorrelated(self):
        bn = BlockNoise(43, 1.0, 1)
        x = np.array([bn.rows(s, 0, 64)[:, 0] for s in range(128)])
        corr = np.corrcoef(x[:-1].ravel(), x[1:].ravel())[0, 1]
        assert abs(corr) < 0.05


class TestRefinement:
    def test_pairwise_sums_reproduce_parent(self):
        parent = NoiseRealization(11, 2e-3, 6, 2, realization=3)
        child = parent.refine()
        assert child.dt == 1e-3
        for n in (0, 7, 40, 100):
            pw, pt = parent.increments(n)
            c0w, c0t = child.increments(2 * n)
            c1w, c1t = child.increments(2 * n + 1)
            np.testing.assert_allclose(c0w + c1w, pw, rtol=0, atol=1e-15)
            np.testing.assert_allclose(c0t + c1t, pt, rtol=0, atol=1e-15)

    def test_two_level_refinement(self):
        parent = NoiseRealization(12, 4e-3, 3)
        grand = parent.refine().refine()
        pw = parent.increments(5)[0]
        total = sum(grand.increments(20 + i)[0] for i in range(4))
        np.testing.assert_allclose(total, pw, rtol=0, atol=1e-15)

    def test_child_variance_halved(self):
        parent = BlockNoise(13, 1e-2, 8)
        child = parent.refine()
        draws = np.concatenate([child._block(sb, 0).reshape(-1) for sb in range(4)])
        assert abs(draws.var() - 5e-3) < 5 * 5e-3 * np.sqrt(2.0 / draws.size)

    def test_refinement_deterministic(self):
        c1 = NoiseRealization(14, 1e-2, 4).refine()
        c2 = NoiseRealization(14, 1e-2, 4).refine()
        np.testing.assert_array_equal(c1.increments(9)[0], c2.increments(9)[0])
