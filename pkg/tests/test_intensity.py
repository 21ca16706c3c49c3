import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deep_kernel_stpp.core import EventSequence, GridSpec, ModelConfig, SpatialDomain, TimeWindow
from deep_kernel_stpp.errors import OutOfDomain
from deep_kernel_stpp.intensity import (SttpModel, conditional_intensity, intensity_on_grid,
                                        intensity_table, inv_softplus, min_intensity)
from deep_kernel_stpp.kernel import LowRankKernel, deep_kernel, ground_truth_kernel, zero_like
from deep_kernel_stpp.neural_basis import FunctionBasis

SMALL = ModelConfig(psi_hidden=(4,), phi_hidden=(4,), u_hidden=(4,), v_hidden=(4,))
DOM = SpatialDomain()
W = TimeWindow(10.0)


def hist(times, locs):
    return EventSequence(np.array(times, float), W, locations=np.array(locs, float))


def rank1_kernel(sign=1.0):
    return LowRankKernel(
        [[sign * 0.8]],
        [FunctionBasis(lambda t: 1 + 0.1 * t)],
        [FunctionBasis(lambda x: np.exp(-x))],
        [FunctionBasis(lambda S: 1 + 0.2 * S[:, 0], 2)],
        [FunctionBasis(lambda D: np.exp(-(D ** 2).sum(1)), 2)],
        tau_max=3.0, a_max=2.0, learn_alpha=False,
    )


class TestConditionalIntensity:
    def test_empty_history(self):
        m = SttpModel(0.7, ground_truth_kernel(), W, DOM)
        assert conditional_intensity(m, hist([], np.zeros((0, 2))), 1.0, (0, 0)) == pytest.approx(0.7)

    def test_event_beyond_truncation(self):
        m = SttpModel(0.7, ground_truth_kernel(), W, DOM)
        assert conditional_intensity(m, hist([1.0], [[0, 0]]), 4.5, (0, 0)) == pytest.approx(0.7)

    def test_three_event_double_loop(self):
        m = SttpModel(0.5, rank1_kernel(), W, DOM, learn_mu=False)
        h = hist([0.2, 0.9, 1.6], [[0.1, 0.2], [-0.3, 0.4], [0.5, -0.5]])
        t, s = 2.0, np.array([0.0, 0.1])
        want = 0.5
        for tj, sj in zip(h.times, h.locations):
            tau, d = t - tj, s - sj
            want += 0.8 * (1 + 0.1 * tj) * np.exp(-tau) * (1 + 0.2 * sj[0]) * np.exp(-(d @ d))
        assert conditional_intensity(m, h, t, s) == pytest.approx(want, rel=1e-13)

    def test_only_earlier_events_count(self):
        m = SttpModel(0.5, rank1_kernel(), W, DOM, learn_mu=False)
        h = hist([1.0, 2.0], [[0, 0], [0, 0]])
        assert conditional_intensity(m, h, 2.0, (0, 0)) == conditional_intensity(m, h.head(1), 2.0, (0, 0))

    def test_out_of_domain(self):
        m = SttpModel(0.5, rank1_kernel(), W, DOM)
        with pytest.raises(OutOfDomain):
            conditional_intensity(m, hist([], np.zeros((0, 2))), 1.0, (1.5, 0))

    def test_inhibition_can_go_negative(self):
        m = SttpModel(0.1, rank1_kernel(-1.0), W, DOM)
        assert conditional_intensity(m, hist([1.0], [[0, 0]]), 1.1, (0, 0)) < 0

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 4.9), st.floats(-1, 1), st.floats(-1, 1)), min_size=1, max_size=8),
           st.lists(st.tuples(st.floats(0, 4.9), st.floats(-1, 1), st.floats(-1, 1)), min_size=1, max_size=8))
    def test_additive_over_disjoint_histories(self, a, b):
        m = SttpModel(0.4, deep_kernel(SMALL, 0), W, DOM, learn_mu=False)
        ha, hb = [sorted(set(x)) for x in (a, b)]
        both = sorted(set(ha) | set(hb))
        mk = lambda rows: hist([r[0] for r in rows], [[r[1], r[2]] for r in rows])
        t, s = 5.5, (0.2, -0.1)
        la = conditional_intensity(m, mk(ha), t, s)
        lb = conditional_intensity(m, mk(hb), t, s)
        if len(both) == len(ha) + len(hb):
            assert conditional_intensity(m, mk(both), t, s) == pytest.approx(la + lb - 0.4, rel=1e-9, abs=1e-12)

    def test_alpha_scaling_scales_excess(self):
        k = ground_truth_kernel()
        h = hist([0.5, 1.0], [[0, 0], [0.2, 0.1]])
        base = SttpModel(1.0, k, W, DOM, learn_mu=False)
        scaled = base.with_kernel(k.with_alpha(3.0 * k.alpha))
        for t, s in [(1.5, (0, 0)), (2.0, (0.3, 0.3))]:
            ex = conditional_intensity(base, h, t, s) - 1.0
            assert conditional_intensity(scaled, h, t, s) - 1.0 == pytest.approx(3 * ex)

    def test_zero_alpha_is_pure_baseline(self):
        m = SttpModel(0.9, zero_like(deep_kernel(SMALL, 1)), W, DOM)
        tab = intensity_on_grid(m, hist([0.5, 1.0], [[0, 0], [0.2, 0.1]]), GridSpec(4, 3, 3))
        np.testing.assert_allclose(tab, 0.9)


class TestIntensityOnGrid:
    def test_empty_history_constant(self):
        m = SttpModel(1.3, ground_truth_kernel(), W, DOM)
        np.testing.assert_allclose(intensity_on_grid(m, hist([], np.zeros((0, 2))), GridSpec(5, 4, 4)), 1.3)

    def test_nodes_match_pointwise(self):
        m = SttpModel(1.0, ground_truth_kernel(), W, DOM)
        h = hist([0.5, 2.0, 2.4], [[0, 0], [0.3, -0.2], [-0.5, 0.5]])
        g = GridSpec(6, 4, 5)
        tab = intensity_on_grid(m, h, g)
        times, locs, _ = m.grid_nodes(g)
        assert tab[3, 7] == pytest.approx(conditional_intensity(m, h, times[3], locs[7]), rel=1e-14)

    def test_refinement_keeps_shared_nodes(self):
        # midpoints of a 3x grid contain those of the coarse grid
        m = SttpModel(1.0, ground_truth_kernel(), W, DOM)
        h = hist([0.5, 2.0], [[0, 0], [0.3, -0.2]])
        c = intensity_on_grid(m, h, GridSpec(4, 2, 2))
        f = intensity_on_grid(m, h, GridSpec(12, 6, 6)).reshape(12, 6, 6)
        np.testing.assert_allclose(c.reshape(4, 2, 2), f[1::3, 1::3, 1::3], rtol=1e-14)

    def test_table_matches_pairwise_path(self):
        m = SttpModel(1.0, deep_kernel(SMALL, 2), W, DOM)
        rng = np.random.default_rng(0)
        h = hist(np.sort(rng.uniform(0, 10, 30)), rng.uniform(-1, 1, (30, 2)))
        times, locs, _ = m.grid_nodes(GridSpec(7, 5, 5))
        np.testing.assert_allclose(intensity_table(m, h, times, locs),
                                   intensity_on_grid(m, h, GridSpec(7, 5, 5)), rtol=1e-12)


class TestMinIntensity:
    def test_pure_baseline(self):
        m = SttpModel(0.5, zero_like(ground_truth_kernel()), W, DOM)
        val, _ = min_intensity(m, [hist([1.0], [[0, 0]])], GridSpec(4, 3, 3))
        assert val == pytest.approx(0.5)

    def test_inhibition_lowers_minimum(self):
        m = SttpModel(0.5, rank1_kernel(-1.0), W, DOM)
        val, (q, t, s) = min_intensity(m, [hist([1.0], [[0, 0]])], GridSpec(40, 8, 8))
        assert val < 0.5 and t > 1.0

    def test_no_sequences(self):
        m = SttpModel(0.5, ground_truth_kernel(), W, DOM)
        val, (q, t, s) = min_intensity(m, [], GridSpec(4, 3, 3))
        assert val == pytest.approx(0.5) and t == pytest.approx(1.25)


class TestSttpModel:
    def test_softplus_mu_round_trip(self):
        assert np.logaddexp(0, inv_softplus(0.37)) == pytest.approx(0.37, rel=1e-14)

    def test_vector_round_trip(self):
        m = SttpModel(0.8, deep_kernel(SMALL, 3), W, DOM)
        m2 = m.with_vector(m.get_vector())
        np.testing.assert_array_equal(m2.get_vector(), m.get_vector())
        assert m2.mu == pytest.approx(0.8)

    def test_negative_mu_rejected(self):
        with pytest.raises(ValueError):
            SttpModel(-1.0, ground_truth_kernel(), W, DOM)
