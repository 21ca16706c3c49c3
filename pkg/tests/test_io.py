import json

import numpy as np
import pytest

from deep_kernel_stpp.core import EventSequence, ModelConfig, SpatialDomain, TimeWindow
from deep_kernel_stpp.discrete_glm import BinaryPanel
from deep_kernel_stpp.graph_process import GraphModel, deep_graph_kernel
from deep_kernel_stpp.intensity import SttpModel
from deep_kernel_stpp.io import (FormatError, canonical_json, export_grid, load_checkpoint, model_to_doc,
                                 read_corpus, read_grid, read_matrix, read_panel, save_checkpoint,
                                 write_corpus, write_matrix, write_panel)
from deep_kernel_stpp.kernel import deep_kernel, ground_truth_kernel
from deep_kernel_stpp.simulation import simulate_many

SMALL = ModelConfig(psi_hidden=(4,), phi_hidden=(4,), u_hidden=(4,), v_hidden=(4,))
DOM = SpatialDomain()


def deep_model():
    return SttpModel(0.8, deep_kernel(SMALL, 3, horizon=10.0, domain=DOM), TimeWindow(10.0), DOM)


class TestCheckpoint:
    def test_round_trip_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_checkpoint(a, deep_model())
        save_checkpoint(b, load_checkpoint(a))
        assert a.read_bytes() == b.read_bytes()

    def test_round_trip_parameters(self, tmp_path):
        m = deep_model()
        save_checkpoint(tmp_path / "m.json", m)
        m2 = load_checkpoint(tmp_path / "m.json")
        np.testing.assert_array_equal(m2.get_vector(), m.get_vector())
        args = ([1.0], [1.5], [[0.1, 0.2]], [[0.0, 0.1]])
        np.testing.assert_array_equal(m2.kernel.evaluate(*args), m.kernel.evaluate(*args))

    def test_parametric_spec(self, tmp_path):
        m = SttpModel(1.0, ground_truth_kernel(), TimeWindow(10.0), DOM, learn_mu=False)
        save_checkpoint(tmp_path / "gt.json", m, {"type": "ground_truth"})
        m2 = load_checkpoint(tmp_path / "gt.json")
        np.testing.assert_array_equal(m2.kernel.alpha, m.kernel.alpha)

    def test_graph_round_trip(self, tmp_path):
        m = GraphModel(np.array([0.2, 0.4, 0.6]), deep_graph_kernel(3, hidden=(4,), seed=2), TimeWindow(5.0))
        save_checkpoint(tmp_path / "g.json", m)
        m2 = load_checkpoint(tmp_path / "g.json")
        np.testing.assert_array_equal(m2.get_vector(), m.get_vector())
        np.testing.assert_allclose(m2.mu, m.mu, rtol=1e-15)

    def test_checksum_detects_edit(self, tmp_path):
        doc = model_to_doc(deep_model())
        doc["mu"] = 5.0
        (tmp_path / "bad.json").write_text(canonical_json(doc))
        with pytest.raises(FormatError, match="checksum"):
            load_checkpoint(tmp_path / "bad.json")

    def test_malformed_json(self, tmp_path):
        (tmp_path / "x.json").write_text("{not json")
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "x.json")

    def test_schema_version(self, tmp_path):
        doc = json.loads(canonical_json(model_to_doc(deep_model())))
        doc["schema_version"] = 99
        (tmp_path / "v.json").write_text(json.dumps(doc))
        with pytest.raises(FormatError, match="schema"):
            load_checkpoint(tmp_path / "v.json")


class TestCorpus:
    def test_spatial_round_trip(self, tmp_path):
        m = SttpModel(1.0, ground_truth_kernel(), TimeWindow(5.0), DOM)
        seqs = simulate_many(m, 3, seed=0)
        write_corpus(tmp_path / "c.csv", seqs, DOM)
        back, dom = read_corpus(tmp_path / "c.csv")
        assert dom == DOM and len(back) == 3
        for a, b in zip(seqs, back):
            np.testing.assert_array_equal(a.times, b.times)
            np.testing.assert_array_equal(a.locations, b.locations)

    def test_empty_sequences_kept(self, tmp_path):
        w = TimeWindow(2.0)
        seqs = [EventSequence([0.5], w), EventSequence(np.zeros(0), w), EventSequence([1.0, 1.5], w)]
        write_corpus(tmp_path / "c.csv", seqs)
        back, dom = read_corpus(tmp_path / "c.csv")
        assert dom is None and [len(s) for s in back] == [1, 0, 2]

    def test_graph_nodes(self, tmp_path):
        w = TimeWindow(2.0)
        seqs = [EventSequence([0.5, 0.7], w, nodes=[2, 0])]
        write_corpus(tmp_path / "g.csv", seqs)
        back, _ = read_corpus(tmp_path / "g.csv")
        np.testing.assert_array_equal(back[0].nodes, [2, 0])

    def test_rewrite_byte_identical(self, tmp_path):
        m = SttpModel(1.0, ground_truth_kernel(), TimeWindow(5.0), DOM)
        seqs = simulate_many(m, 2, seed=1)
        write_corpus(tmp_path / "a.csv", seqs, DOM)
        write_corpus(tmp_path / "b.csv", read_corpus(tmp_path / "a.csv")[0], DOM)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_missing_header(self, tmp_path):
        (tmp_path / "c.csv").write_text("0,1.0\n")
        with pytest.raises(FormatError):
            read_corpus(tmp_path / "c.csv")


class TestMatricesAndPanels:
    def test_matrix_round_trip(self, tmp_path):
        M = np.random.default_rng(0).normal(size=(4, 3))
        write_matrix(tmp_path / "m.csv", M)
        np.testing.assert_array_equal(read_matrix(tmp_path / "m.csv"), M)

    def test_panel_round_trip(self, tmp_path):
        P = BinaryPanel((np.random.default_rng(0).uniform(size=(20, 3)) < 0.5).astype(int))
        write_panel(tmp_path / "p.csv", P)
        lines = (tmp_path / "p.csv").read_text().splitlines()
        assert len(lines) == 21
        np.testing.assert_array_equal(read_panel(tmp_path / "p.csv").omega, P.omega)

    def test_bad_panel(self, tmp_path):
        (tmp_path / "p.csv").write_text("a,b\n0,3\n")
        with pytest.raises((FormatError, ValueError)):
            read_panel(tmp_path / "p.csv")


class TestExportGrid:
    AXES = [("x", np.array([0.0, 1.0])), ("y", np.array([10.0, 20.0]))]

    def test_two_by_two(self, tmp_path):
        export_grid(np.array([[1.0, 2.0], [3.0, 4.0]]), tmp_path / "g.csv", self.AXES)
        lines = (tmp_path / "g.csv").read_text().splitlines()
        assert len(lines) == 5
        assert lines[0].split(",") == ["x", "y", "value"]
        # axis-major order: the last axis varies fastest
        assert [float(r.split(",")[2]) for r in lines[1:]] == [1.0, 2.0, 3.0, 4.0]

    def test_reexport_byte_identical(self, tmp_path):
        T = np.random.default_rng(0).normal(size=(2, 2))
        export_grid(T, tmp_path / "a.csv", self.AXES)
        export_grid(T, tmp_path / "b.csv", self.AXES)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_reload_equals(self, tmp_path):
        T = np.random.default_rng(1).normal(size=(2, 2))
        export_grid(T, tmp_path / "a.csv", self.AXES)
        table, axes = read_grid(tmp_path / "a.csv")
        np.testing.assert_array_equal(table, T)
        np.testing.assert_array_equal(axes[1][1], self.AXES[1][1])

    def test_non_finite_rejected(self, tmp_path):
        with pytest.raises(FormatError):
            export_grid(np.array([[np.nan, 1.0], [0.0, 0.0]]), tmp_path / "a.csv", self.AXES)
        assert not (tmp_path / "a.csv").exists()

    def test_write_failure_is_oserror(self, tmp_path):
        with pytest.raises(OSError):
            export_grid(np.zeros((2, 2)), tmp_path / "missing" / "a.csv", self.AXES)
