import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deep_kernel_stpp.core import EventSequence, GridSpec, TimeWindow
from deep_kernel_stpp.errors import NodeOutOfRange, NonCausalPair, NonSquare
from deep_kernel_stpp.graph_process import (Graph, GraphFilterKernel, GraphLayout, GraphModel, deep_graph_kernel,
                                            effective_influence, eval_graph_kernel, fit_graph, graph_filter_poly,
                                            graph_intensity, graph_loglik, graph_ls_loss, graph_terms,
                                            influence_snapshots, matrix_powers, offdiag_correlation)
from deep_kernel_stpp.intensity import SttpModel, conditional_intensity
from deep_kernel_stpp.kernel import LowRankKernel
from deep_kernel_stpp.neural_basis import FunctionBasis, MlpBasis
from deep_kernel_stpp.objectives import log_likelihood, ls_loss
from deep_kernel_stpp.optimizer import FitOptions
from deep_kernel_stpp.simulation import NodeSet, simulate, simulate_many

ONE = FunctionBasis(lambda t: np.ones_like(t))
EXP = FunctionBasis(lambda t: np.exp(-t))


def closed_form_kernel(B, alpha=1.0, tau_max=3.0):
    return GraphFilterKernel([[alpha]], [ONE], [EXP], filters=[B], tau_max=tau_max)


def adjacency(N=4, seed=0):
    A = (np.random.default_rng(seed).uniform(size=(N, N)) > 0.5).astype(float)
    np.fill_diagonal(A, 0)
    return A


def gseq(times, nodes, T=10.0):
    return EventSequence(np.array(times, float), TimeWindow(T), nodes=np.array(nodes))


class TestGraph:
    def test_laplacian(self):
        A = adjacency()
        g = Graph(A)
        np.testing.assert_array_equal(g.degree, np.diag(A.sum(1)))
        np.testing.assert_array_equal(g.laplacian.sum(1), 0)

    def test_non_square(self):
        with pytest.raises(NonSquare):
            Graph(np.zeros((2, 3)))

    def test_self_loops_need_flag(self):
        with pytest.raises(ValueError):
            Graph(np.eye(2))
        assert Graph(np.eye(2), allow_self_loops=True).n == 2


class TestFilterPoly:
    def test_degree_one(self):
        A = adjacency()
        np.testing.assert_array_equal(graph_filter_poly(A, [1.0]), A)

    def test_square(self):
        A = adjacency()
        np.testing.assert_allclose(graph_filter_poly(A, [0.0, 1.0]), A @ A)

    def test_horner(self):
        S = np.random.default_rng(1).normal(size=(5, 5))
        h = [0.3, -0.7, 0.2]
        horner = np.zeros_like(S)
        for c in reversed(h):
            horner = (horner + c * np.eye(5)) @ S
        np.testing.assert_allclose(graph_filter_poly(S, h), horner, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("J", [1, 2, 3, 4])
    def test_unit_coefficients_give_powers(self, J):
        S = np.random.default_rng(J).normal(size=(4, 4))
        e = np.zeros(J)
        e[-1] = 1.0
        np.testing.assert_allclose(graph_filter_poly(S, e), np.linalg.matrix_power(S, J), rtol=1e-12)
        np.testing.assert_allclose(matrix_powers(S, J)[-1], np.linalg.matrix_power(S, J), rtol=1e-12)

    def test_non_square(self):
        with pytest.raises(NonSquare):
            graph_filter_poly(np.zeros((2, 3)), [1.0])


class TestKernel:
    def test_zero_alpha(self):
        k = closed_form_kernel(adjacency(), alpha=0.0)
        assert eval_graph_kernel(k, 0.0, 1.0, 0, 1) == 0.0

    def test_closed_form(self):
        A = adjacency()
        k = closed_form_kernel(A)
        for vp in range(4):
            for v in range(4):
                assert eval_graph_kernel(k, 0.0, 1.0, vp, v) == pytest.approx(np.exp(-1) * A[vp, v], rel=1e-15)

    def test_naive_double_loop(self):
        k = deep_graph_kernel(4, L=2, R=3, hidden=(5,), seed=3, filter_scale=0.5)
        k = GraphFilterKernel(np.random.default_rng(0).normal(size=(3, 2)), k.psi, k.phi, filters=k.filters)
        tp, t, vp, v = 0.4, 1.7, 2, 1
        want = sum(k.alpha[r, l] * k.psi[l](np.array([tp]))[0] * k.phi[l](np.array([t - tp]))[0]
                   * k.filters[r][vp, v] for r in range(3) for l in range(2))
        assert eval_graph_kernel(k, tp, t, vp, v) == pytest.approx(want, rel=1e-12)

    def test_asymmetric_orientation(self):
        B = np.zeros((3, 3))
        B[0, 2] = 1.0
        k = closed_form_kernel(B)
        assert eval_graph_kernel(k, 0.0, 1.0, 0, 2) > 0 and eval_graph_kernel(k, 0.0, 1.0, 2, 0) == 0

    def test_polynomial_mode(self):
        A = adjacency()
        k = GraphFilterKernel([[1.0]], [ONE], [EXP], shift=A, coeffs=[[0.5, 0.25]])
        np.testing.assert_allclose(k.filters[0], 0.5 * A + 0.25 * A @ A)
        k2 = k.with_vector(k.get_vector())
        np.testing.assert_array_equal(k2.filters, k.filters)

    def test_errors(self):
        k = closed_form_kernel(adjacency())
        with pytest.raises(NonCausalPair):
            eval_graph_kernel(k, 1.0, 1.0, 0, 1)
        with pytest.raises(NodeOutOfRange):
            eval_graph_kernel(k, 0.0, 1.0, 0, 4)


class TestIntensity:
    def model(self, B=None):
        B = adjacency() if B is None else B
        return GraphModel(np.array([0.1, 0.2, 0.3, 0.4]), closed_form_kernel(B), TimeWindow(10.0), learn_mu=False)

    def test_empty_history(self):
        assert graph_intensity(self.model(), gseq([], []), 2.0, 3) == 0.4

    def test_zero_row(self):
        B = np.ones((4, 4))
        B[1] = 0
        assert graph_intensity(self.model(B), gseq([1.0], [1]), 1.5, 2) == pytest.approx(0.3)

    def test_three_events_by_hand(self):
        A = adjacency()
        m = self.model(A)
        h = gseq([0.5, 1.0, 1.8], [0, 2, 1])
        want = 0.2 + sum(np.exp(-(2.0 - tj)) * A[vj, 1] for tj, vj in [(0.5, 0), (1.0, 2), (1.8, 1)])
        assert graph_intensity(m, h, 2.0, 1) == pytest.approx(want, rel=1e-14)

    def test_node_out_of_range(self):
        with pytest.raises(NodeOutOfRange):
            graph_intensity(self.model(), gseq([], []), 1.0, 7)

    def test_table_total_equals_node_sum(self):
        m = self.model()
        h = simulate(m, seed=0)
        times = np.linspace(0.1, 9.9, 7)
        tab = m.intensity_table(h, times)
        pts = np.array([[m.intensity_points(h, [t], [v])[0] for v in range(4)] for t in times])
        np.testing.assert_allclose(tab, pts, rtol=1e-13)
        np.testing.assert_allclose(tab.sum(1), pts.sum(1), rtol=1e-13)

    def test_reduces_to_temporal_model(self):
        psi = MlpBasis.create(1, (4,), "softplus", 1)
        phi = MlpBasis.create(1, (4,), "linear", 2)
        gk = GraphFilterKernel([[0.7]], [psi], [phi], filters=[np.eye(1)], tau_max=2.0)
        tk = LowRankKernel([[0.7]], [psi], [phi], tau_max=2.0, spatial=False)
        gm = GraphModel([1.5], gk, TimeWindow(6.0))
        tm = SttpModel(1.5, tk, TimeWindow(6.0))
        seqs = [gseq([0.3, 1.1, 1.4, 3.0, 4.2], [0] * 5, 6.0), gseq([2.0, 5.5], [0, 0], 6.0)]
        tseqs = [EventSequence(s.times, s.window) for s in seqs]
        for t in (0.5, 1.5, 4.3):
            assert graph_intensity(gm, seqs[0], t, 0) == pytest.approx(
                conditional_intensity(tm, tseqs[0], t), rel=1e-13)
        g = GridSpec(n_time=40, n_lag=400)
        assert graph_loglik(gm, seqs, g).value == pytest.approx(log_likelihood(tm, tseqs, g).value, rel=1e-4)
        assert graph_ls_loss(gm, seqs, g).value == pytest.approx(ls_loss(tm, tseqs, g).value, rel=1e-4)


class TestObjectives:
    @pytest.mark.parametrize("terms", [dict(loglik=1.0, integral=1.0, strict=True), dict(ls=1.0),
                                       dict(barrier=(0.3, 0.5))])
    def test_gradient(self, terms):
        rng = np.random.default_rng(1)
        k = deep_graph_kernel(3, L=2, R=2, hidden=(4,), tau_max=1.5, seed=2, filter_scale=0.3)
        m = GraphModel(rng.uniform(2, 3, 3), k, TimeWindow(4.0))
        seqs = [gseq(np.sort(rng.uniform(0, 4, 8)), rng.integers(0, 3, 8), 4.0)]
        lay = GraphLayout(m, seqs, GridSpec(n_time=9, n_lag=30))
        ov = graph_terms(m, lay, **terms)
        v0 = m.get_vector()
        for i in rng.choice(len(v0), 15, replace=False):
            e = np.zeros_like(v0)
            e[i] = 1e-5
            fd = (graph_terms(m.with_vector(v0 + e), lay, want_grad=False, **terms).value
                  - graph_terms(m.with_vector(v0 - e), lay, want_grad=False, **terms).value) / 2e-5
            assert ov.grad[i] == pytest.approx(fd, rel=1e-4, abs=1e-6)


class TestFit:
    def test_per_node_poisson_rates(self):
        T, N = 20.0, 3
        rates = np.array([0.5, 1.0, 2.0])
        truth = GraphModel(rates, closed_form_kernel(np.zeros((N, N))), TimeWindow(T), learn_mu=False)
        data = simulate_many(truth, 20, seed=0)
        counts = np.zeros(N)
        for s in data:
            counts += np.bincount(s.nodes, minlength=N)
        m0 = GraphModel(np.ones(N), deep_graph_kernel(N, hidden=(4,), seed=0, filter_scale=0.0), TimeWindow(T))
        fm, rep = fit_graph(m0, data, FitOptions(objective="least_squares", max_epochs=400, lr=0.05,
                                                 grid=GridSpec(n_time=40, n_lag=30)))
        np.testing.assert_allclose(fm.mu, counts / (20 * T), rtol=0.1)

    def test_deterministic(self):
        m0 = GraphModel(np.ones(3), deep_graph_kernel(3, hidden=(4,), seed=0), TimeWindow(5.0))
        data = simulate_many(GraphModel(np.ones(3), closed_form_kernel(np.zeros((3, 3))), TimeWindow(5.0)), 3)
        opts = FitOptions(objective="least_squares", max_epochs=5, grid=GridSpec(n_time=10, n_lag=20))
        a, b = fit_graph(m0, data, opts)[1], fit_graph(m0, data, opts)[1]
        assert a.trace == b.trace

    def test_simulated_nodes_in_range(self):
        m = GraphModel(np.ones(4), closed_form_kernel(0.3 * adjacency()), TimeWindow(10.0))
        seq = simulate(m, domain=NodeSet(4), seed=1)
        assert seq.nodes.min() >= 0 and seq.nodes.max() < 4


class TestSnapshots:
    def test_zero_model(self):
        m = GraphModel(np.zeros(3), closed_form_kernel(np.zeros((3, 3))), TimeWindow(5.0), learn_mu=False)
        assert all(not S.any() for S in influence_snapshots(m, 4.0, [0.5, 1.0, 2.0]))

    def test_stationary_depends_on_lag_only(self):
        m = GraphModel(np.ones(4), closed_form_kernel(adjacency()), TimeWindow(10.0))
        a = influence_snapshots(m, 4.0, [0.5, 1.5])
        b = influence_snapshots(m, 8.0, [0.5, 1.5])
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_decaying_norms(self):
        m = GraphModel(np.ones(4), closed_form_kernel(adjacency()), TimeWindow(10.0))
        norms = [np.linalg.norm(S) for S in influence_snapshots(m, 5.0, [0.25, 0.5, 1.0, 2.0, 2.9])]
        assert all(a >= b for a, b in zip(norms, norms[1:]))

    def test_signs_kept(self):
        m = GraphModel(np.ones(4), closed_form_kernel(adjacency(), alpha=-1.0), TimeWindow(10.0))
        assert influence_snapshots(m, 5.0, [1.0])[0].min() < 0

    def test_bad_lag(self):
        m = GraphModel(np.ones(4), closed_form_kernel(adjacency()), TimeWindow(10.0))
        with pytest.raises(ValueError):
            influence_snapshots(m, 1.0, [2.0])


class TestEffectiveInfluence:
    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.1, 10.0))
    def test_invariant_to_scale_trade(self, c):
        A = adjacency()
        a = closed_form_kernel(A, alpha=2.0)
        b = closed_form_kernel(A / c, alpha=2.0 * c)
        np.testing.assert_allclose(effective_influence(a, 10.0), effective_influence(b, 10.0), rtol=1e-12)

    def test_closed_form(self):
        A = adjacency()
        E = effective_influence(closed_form_kernel(A), 10.0, n=4000)
        np.testing.assert_allclose(E, (1 - np.exp(-3.0)) * A, rtol=1e-6)

    def test_offdiag_correlation_ignores_diagonal(self):
        A = adjacency(5)
        B = A + 100 * np.eye(5)
        assert offdiag_correlation(A, B) == pytest.approx(1.0)
