import numpy as np
import pytest

from deep_kernel_stpp.core import EventSequence, GridSpec, ModelConfig, SpatialDomain, TimeWindow
from deep_kernel_stpp.errors import GridMismatch, NonPositiveIntensityAtEvent
from deep_kernel_stpp.intensity import SttpModel, intensity_at
from deep_kernel_stpp.kernel import (ExpHawkesParams, LowRankKernel, MarkedKernel, deep_kernel, exp_hawkes_kernel,
                                     ground_truth_kernel, zero_like)
from deep_kernel_stpp.neural_basis import FunctionBasis
from deep_kernel_stpp.objectives import (Layout, barrier_penalty, brute_force_integral,
                                         brute_force_log_likelihood, guarded_log, guarded_log_slope,
                                         integral_term, log_likelihood, ls_loss, perturbation_gap,
                                         precompute_integrals)
from deep_kernel_stpp.simulation import simulate_many

SMALL = ModelConfig(psi_hidden=(4,), phi_hidden=(4,), u_hidden=(4,), v_hidden=(4,))
TERMS = ("event", "integral", "ls_event", "ls_square", "barrier_event", "barrier_grid")


def random_seq(n, T, seed, spatial=True, dom=SpatialDomain()):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, T, n))
    locs = None
    if spatial:
        locs = np.column_stack([rng.uniform(dom.x_lo, dom.x_hi, n), rng.uniform(dom.y_lo, dom.y_hi, n)])
    return EventSequence(t, TimeWindow(T), locations=locs)


def rank1_model(T=5.0, mu=1.0):
    k = LowRankKernel(
        [[0.7]],
        [FunctionBasis(lambda t: 1 + 0.05 * t)],
        [FunctionBasis(lambda x: np.exp(-1.5 * x))],
        [FunctionBasis(lambda S: 1 + 0.2 * S[:, 0], 2)],
        [FunctionBasis(lambda D: np.exp(-(D ** 2).sum(1) / 0.5), 2)],
        tau_max=3.0, a_max=2.0, learn_alpha=False,
    )
    return SttpModel(mu, k, TimeWindow(T), SpatialDomain(), learn_mu=False)


def positive_deep_model(seed, T=5.0):
    # baseline large enough that the random kernel keeps the intensity positive
    return SttpModel(3.0, deep_kernel(SMALL, seed, alpha_scale=0.05, horizon=T, domain=SpatialDomain()),
                     TimeWindow(T), SpatialDomain())


def fd_check(fn, model, step=1e-5):
    theta = model.get_vector()
    g = fn(model).grad
    fd = np.empty_like(theta)
    for i in range(len(theta)):
        e = np.zeros_like(theta)
        e[i] = step
        fd[i] = (fn(model.with_vector(theta + e)).value - fn(model.with_vector(theta - e)).value) / (2 * step)
    return np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-12)


class TestGuardedLog:
    def test_equals_log_above_threshold(self):
        x = np.array([1e-3, 0.5, 7.0])
        np.testing.assert_allclose(guarded_log(x, 1e-4), np.log(x))

    def test_finite_and_increasing_below(self):
        x = np.array([-5.0, -1.0, 0.0, 1e-7])
        v = guarded_log(x, 1e-6)
        assert np.all(np.isfinite(v)) and np.all(np.diff(v) > 0)
        assert np.all(guarded_log_slope(x, 1e-6) > 0)

    def test_continuous_at_threshold(self):
        b = 1e-3
        assert guarded_log(b * (1 - 1e-12), b) == pytest.approx(np.log(b), rel=1e-9)
        assert guarded_log_slope(b * (1 - 1e-12), b) == pytest.approx(1 / b, rel=1e-6)


class TestLogLikelihood:
    def test_homogeneous_empty(self):
        m = SttpModel(1.0, zero_like(ground_truth_kernel()), TimeWindow(1.0), SpatialDomain(0, 1, 0, 1))
        seq = EventSequence(np.zeros(0), TimeWindow(1.0), locations=np.zeros((0, 2)))
        assert log_likelihood(m, [seq]).value == pytest.approx(-1.0, rel=1e-14)

    def test_homogeneous_closed_form(self):
        dom = SpatialDomain(0, 2, 0, 1)
        m = SttpModel(2.0, zero_like(ground_truth_kernel()), TimeWindow(3.0), dom)
        seq = random_seq(4, 3.0, 0, dom=dom)
        assert log_likelihood(m, [seq]).value == pytest.approx(4 * np.log(2) - 12, rel=1e-13)

    def test_averages_over_sequences(self):
        m = rank1_model()
        a, b = random_seq(5, 5.0, 1), random_seq(8, 5.0, 2)
        both = log_likelihood(m, [a, b]).value
        assert both == pytest.approx((log_likelihood(m, [a]).value + log_likelihood(m, [b]).value) / 2)

    def test_breakdown_sums_to_value(self):
        ov = log_likelihood(positive_deep_model(0), [random_seq(6, 5.0, 3)])
        assert sum(ov.breakdown.get(t, 0.0) for t in TERMS) == pytest.approx(ov.value, rel=1e-12)

    def test_rank2_matches_brute_force(self):
        m = SttpModel(1.0, ground_truth_kernel(), TimeWindow(5.0), SpatialDomain(), learn_mu=False)
        seq = random_seq(5, 5.0, 4)
        got = log_likelihood(m, [seq]).value
        assert got == pytest.approx(brute_force_log_likelihood(m, seq), rel=1e-3)

    def test_one_event_matches_brute_force_tightly(self):
        m = SttpModel(1.0, ground_truth_kernel(), TimeWindow(5.0), SpatialDomain(), learn_mu=False)
        seq = EventSequence([1.2], TimeWindow(5.0), locations=[[0.1, -0.3]])
        assert log_likelihood(m, [seq]).value == pytest.approx(brute_force_log_likelihood(m, seq), rel=1e-4)

    def test_nonpositive_event_intensity_raises(self):
        k = ground_truth_kernel()
        m = SttpModel(1e-3, k.with_alpha(-5 * np.abs(k.alpha)), TimeWindow(5.0), SpatialDomain())
        seq = EventSequence([1.0, 1.1], TimeWindow(5.0), locations=[[0, 0], [0, 0]])
        with pytest.raises(NonPositiveIntensityAtEvent) as info:
            log_likelihood(m, [seq])
        assert info.value.index == 1

    def test_marked_kernel_not_supported(self):
        m = SttpModel(1.0, MarkedKernel.from_unmarked(ground_truth_kernel()), TimeWindow(5.0), SpatialDomain())
        seq = EventSequence([1.0], TimeWindow(5.0), locations=[[0, 0]], marks=[[1.0]])
        with pytest.raises(NotImplementedError):
            log_likelihood(m, [seq])

    @pytest.mark.parametrize("seed", range(3))
    def test_gradient_finite_difference(self, seed):
        m = positive_deep_model(seed)
        seqs = [random_seq(6, 5.0, 10 + seed), random_seq(4, 5.0, 20 + seed)]
        g = GridSpec(4, 3, 3, 20, 8)
        lay = Layout(m, seqs, g)
        assert fd_check(lambda mm: log_likelihood(mm, seqs, layout=lay), m) <= 1e-4

    def test_temporal_gradient_finite_difference(self):
        cfg = ModelConfig(spatial=False, psi_hidden=(4,), phi_hidden=(4,))
        m = SttpModel(2.0, deep_kernel(cfg, 1, alpha_scale=0.5, horizon=5.0), TimeWindow(5.0))
        seqs = [random_seq(7, 5.0, 5, spatial=False)]
        lay = Layout(m, seqs, GridSpec(4, 2, 2, 20, 4))
        assert fd_check(lambda mm: log_likelihood(mm, seqs, layout=lay), m) <= 1e-4

    def test_true_model_beats_zero_kernel_on_exciting_data(self):
        m = SttpModel(1.0, exp_hawkes_kernel(ExpHawkesParams(1.0, 0.8, 1.0)), TimeWindow(50.0))
        seqs = simulate_many(m, 20, seed=3)
        zero = SttpModel(1.0, zero_like(m.kernel), TimeWindow(50.0))
        # the Poisson comparator uses its own MLE rate
        rate = np.mean([len(s) for s in seqs]) / 50.0
        assert log_likelihood(m, seqs).value > log_likelihood(zero.with_mu(rate), seqs).value


class TestIntegralTerm:
    def test_zero_kernel(self):
        m = SttpModel(1.5, zero_like(ground_truth_kernel()), TimeWindow(4.0), SpatialDomain())
        seq = random_seq(5, 4.0, 0)
        assert integral_term(m, seq, precompute_integrals(m, seq)) == pytest.approx(1.5 * 4 * 4.0)

    def test_event_at_horizon_adds_nothing(self):
        m = SttpModel(1.0, ground_truth_kernel(), TimeWindow(4.0), SpatialDomain())
        seq = EventSequence([4.0], TimeWindow(4.0), locations=[[0, 0]])
        assert integral_term(m, seq, precompute_integrals(m, seq)) == pytest.approx(16.0)

    @pytest.mark.parametrize("seed", range(3))
    def test_rank1_matches_tensor_quadrature(self, seed):
        m = rank1_model()
        seq = random_seq(6, 5.0, 30 + seed)
        got = integral_term(m, seq, precompute_integrals(m, seq))
        assert got == pytest.approx(brute_force_integral(m, seq, GridSpec(400, 96, 96)), rel=1e-3)

    def test_grid_mismatch(self):
        m = rank1_model()
        pre = precompute_integrals(m, random_seq(3, 5.0, 0))
        with pytest.raises(GridMismatch):
            integral_term(m, random_seq(4, 5.0, 0), pre)

    def test_brute_force_of_constant_is_exact(self):
        m = SttpModel(0.8, zero_like(ground_truth_kernel()), TimeWindow(3.0), SpatialDomain())
        seq = random_seq(3, 3.0, 1)
        lam = intensity_at(m, seq, seq.times, seq.locations)
        assert brute_force_log_likelihood(m, seq) == pytest.approx(np.log(lam).sum() - 0.8 * 12, rel=1e-14)

    def test_brute_force_refinement_tightens(self):
        m = SttpModel(1.0, ground_truth_kernel(), TimeWindow(5.0), SpatialDomain(), learn_mu=False)
        seq = random_seq(5, 5.0, 7)
        ref = log_likelihood(m, [seq], GridSpec(50, 32, 32, 800, 256)).value
        errs = [abs(brute_force_log_likelihood(m, seq, GridSpec(n, n // 2, n // 2)) - ref)
                for n in (20, 40, 80)]
        assert errs[0] > errs[1] > errs[2]


class TestLsLoss:
    def test_homogeneous_closed_form(self):
        m = SttpModel(1.0, zero_like(ground_truth_kernel()), TimeWindow(10.0), SpatialDomain())
        assert ls_loss(m, [random_seq(5, 10.0, 0)]).value == pytest.approx(30.0, rel=1e-13)

    def test_zero_intensity(self):
        m = SttpModel(0.0, zero_like(ground_truth_kernel()), TimeWindow(10.0), SpatialDomain(), learn_mu=False)
        assert ls_loss(m, [random_seq(5, 10.0, 0)]).value == 0.0

    def test_rank1_matches_dense_oracle(self):
        from scipy.integrate import quad
        m = rank1_model()
        seq = random_seq(6, 5.0, 8)
        locs, cell = SpatialDomain().midpoints(120, 120)

        def space_integral(t):
            lam = intensity_at(m, seq, np.full(len(locs), t), locs)
            return np.sum(lam ** 2) * cell

        # lambda^2 jumps at each event and at the truncation lag
        pts = np.concatenate([seq.times, seq.times + 3.0])
        sq = quad(space_integral, 0, 5.0, points=pts[pts < 5.0], limit=200, epsabs=1e-9)[0]
        oracle = sq - 2 * intensity_at(m, seq, seq.times, seq.locations).sum()
        assert ls_loss(m, [seq]).value == pytest.approx(oracle, rel=1e-3)

    @pytest.mark.parametrize("seed", range(2))
    def test_gradient_finite_difference(self, seed):
        m = positive_deep_model(seed + 5)
        seqs = [random_seq(6, 5.0, 40 + seed)]
        lay = Layout(m, seqs, GridSpec(4, 3, 3, 20, 8), space_time=True)
        assert fd_check(lambda mm: ls_loss(mm, seqs, layout=lay), m) <= 1e-4

    def test_permutation_invariance(self):
        k = deep_kernel(SMALL, 2, domain=SpatialDomain())
        perm = LowRankKernel(k.alpha[::-1, ::-1], k.psi[::-1], k.phi[::-1], k.u[::-1], k.v[::-1],
                             k.tau_max, k.a_max)
        seqs = [random_seq(6, 5.0, 9)]
        a = SttpModel(1.0, k, TimeWindow(5.0), SpatialDomain())
        b = a.with_kernel(perm)
        assert ls_loss(a, seqs, GridSpec(5, 4, 4)).value == pytest.approx(ls_loss(b, seqs, GridSpec(5, 4, 4)).value,
                                                                          rel=1e-12)


class TestBarrier:
    def _model(self, mu):
        return SttpModel(mu, zero_like(ground_truth_kernel()), TimeWindow(2.0), SpatialDomain())

    def test_unit_intensity_gives_zero(self):
        assert barrier_penalty(self._model(1.0), [random_seq(3, 2.0, 0)], GridSpec(4, 3, 3)).value == pytest.approx(0.0, abs=1e-12)

    def test_e_intensity_counts_nodes(self):
        g = GridSpec(4, 3, 3)
        n_nodes = 4 * 3 * 3 + 3
        ov = barrier_penalty(self._model(np.e), [random_seq(3, 2.0, 0)], g, w=1.0)
        assert ov.value == pytest.approx(-n_nodes, rel=1e-12)

    def test_infeasible_is_finite_with_upward_gradient(self):
        k = ground_truth_kernel()
        m = SttpModel(0.01, k.with_alpha(-np.abs(k.alpha)), TimeWindow(2.0), SpatialDomain())
        seq = EventSequence([0.5, 0.6], TimeWindow(2.0), locations=[[0, 0], [0, 0]])
        ov = barrier_penalty(m, [seq], GridSpec(4, 3, 3))
        assert np.isfinite(ov.value) and ov.value > 0
        assert np.all(np.isfinite(ov.grad)) and ov.grad[0] < 0    # raising mu lowers the penalty

    def test_rejects_nonpositive_weight(self):
        with pytest.raises(ValueError):
            barrier_penalty(self._model(1.0), [], w=0.0)

    def test_gradient_finite_difference(self):
        m = positive_deep_model(9)
        seqs = [random_seq(5, 5.0, 50)]
        lay = Layout(m, seqs, GridSpec(4, 3, 3, 20, 8), space_time=True)
        assert fd_check(lambda mm: barrier_penalty(mm, seqs, w=0.3, layout=lay), m) <= 1e-4


class TestPerturbationGap:
    @pytest.fixture(scope="class")
    @classmethod
    def hawkes(cls):
        m = SttpModel(1.0, exp_hawkes_kernel(ExpHawkesParams(1.0, 0.5, 1.0), tau_max=20.0),
                      TimeWindow(50.0), learn_mu=False)
        return m, simulate_many(m, 60, seed=100)

    def _perturbed(self, m, delta):
        return m.with_kernel(exp_hawkes_kernel(ExpHawkesParams(1.0, 0.5 + delta, 1.0), tau_max=20.0))

    def test_identical_models(self, hawkes):
        m, seqs = hawkes
        mean, se = perturbation_gap(m, m, seqs)
        assert mean == 0.0 and se == 0.0

    def test_small_perturbation_nonnegative(self, hawkes):
        m, seqs = hawkes
        mean, se = perturbation_gap(m, self._perturbed(m, 0.05), seqs)
        assert mean >= -2 * se

    def test_larger_perturbation_larger_gap(self, hawkes):
        m, seqs = hawkes
        small = perturbation_gap(m, self._perturbed(m, 0.05), seqs).mean
        large = perturbation_gap(m, self._perturbed(m, 0.25), seqs).mean
        assert large > small

    def test_intensity_range_reported(self, hawkes):
        m, seqs = hawkes
        res = perturbation_gap(m, m, seqs)
        lo, hi = res.intensity_range
        assert 1.0 <= lo <= hi
