"""File formats: event corpora, model checkpoints, matrices, panels and grid exports.

All writers are deterministic (floats use ``repr``, keys are sorted) and
atomic (write to a temporary file in the target directory, then rename).
"""
from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import os
import tempfile
from typing import Optional, Sequence

import numpy as np

from .core import EventSequence, SpatialDomain, TimeWindow
from .discrete_glm import BinaryPanel, DiscreteParams
from .errors import StppError
from .graph_process import GraphFilterKernel, GraphModel
from .intensity import SttpModel
from .kernel import (ExpHawkesParams, GroundTruthParams, LowRankKernel, exp_hawkes_kernel,
                     ground_truth_kernel)
from .neural_basis import MlpBasis, MlpParams, MlpSpec

SCHEMA_VERSION = 1


class FormatError(StppError, ValueError):
    """Malformed or inconsistent input file."""


def atomic_write_text(path, text: str):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# event corpora

def corpus_to_text(sequences: Sequence[EventSequence], domain: Optional[SpatialDomain] = None) -> str:
    """``# window=T n_sequences=M [domain=...]`` line, column header, one event per row."""
    if not sequences:
        raise FormatError("cannot write an empty corpus")
    first = sequences[0]
    T = first.T
    meta = f"# window={_fmt(T)} n_sequences={len(sequences)}"
    if domain is not None:
        meta += " domain=" + ",".join(_fmt(v) for v in (domain.x_lo, domain.x_hi, domain.y_lo, domain.y_hi))
    cols = ["seq_id", "t"]
    has_s = first.locations is not None
    has_v = first.nodes is not None
    n_marks = 0 if first.marks is None else first.marks.shape[1]
    if has_s:
        cols += ["x", "y"]
    if has_v:
        cols.append("node")
    cols += [f"mark{i}" for i in range(n_marks)]
    lines = [meta, ",".join(cols)]
    for q, seq in enumerate(sequences):
        if seq.T != T:
            raise FormatError("all sequences in a corpus share one window")
        for i in range(len(seq)):
            row = [str(q), _fmt(seq.times[i])]
            if has_s:
                row += [_fmt(seq.locations[i, 0]), _fmt(seq.locations[i, 1])]
            if has_v:
                row.append(str(int(seq.nodes[i])))
            if n_marks:
                row += [_fmt(m) for m in seq.marks[i]]
            lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def write_corpus(path, sequences, domain=None):
    atomic_write_text(path, corpus_to_text(sequences, domain))


def read_corpus(path, T: Optional[float] = None):
    """Returns ``(sequences, domain or None)``; ``T`` overrides the file's window."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    meta = {}
    if lines and lines[0].startswith("#"):
        for tok in lines[0][1:].split():
            k, _, v = tok.partition("=")
            meta[k] = v
        lines = lines[1:]
    if not lines:
        raise FormatError(f"{path}: missing header")
    cols = lines[0].split(",")
    if cols[:2] != ["seq_id", "t"]:
        raise FormatError(f"{path}: header must start with seq_id,t")
    if T is None:
        if "window" not in meta:
            raise FormatError(f"{path}: no window given")
        T = float(meta["window"])
    domain = None
    if "domain" in meta:
        domain = SpatialDomain(*(float(v) for v in meta["domain"].split(",")))
    rows = list(csv.reader(lines[1:]))
    try:
        data = np.array([[float(v) for v in r] for r in rows], dtype=float).reshape(len(rows), len(cols))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    n_seq = int(meta.get("n_sequences", int(data[:, 0].max()) + 1 if len(data) else 0))
    ix = {c: i for i, c in enumerate(cols)}
    mark_cols = [i for c, i in ix.items() if c.startswith("mark")]
    window = TimeWindow(T)
    out = []
    for q in range(n_seq):
        d = data[data[:, 0] == q]
        out.append(EventSequence(
            d[:, 1], window,
            locations=d[:, [ix["x"], ix["y"]]] if "x" in ix else None,
            nodes=d[:, ix["node"]].astype(np.int64) if "node" in ix else None,
            marks=d[:, mark_cols] if mark_cols else None,
        ))
    return out, domain


# ---------------------------------------------------------------------------
# matrices, panels, grids

def matrix_to_text(M) -> str:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return "".join(",".join(_fmt(v) for v in row) + "\n" for row in M)


def write_matrix(path, M):
    atomic_write_text(path, matrix_to_text(M))


def read_matrix(path) -> np.ndarray:
    with open(path) as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        return np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_panel(path, panel: BinaryPanel, ids=None):
    ids = ids or [str(k) for k in range(panel.K)]
    lines = [",".join(ids)] + [",".join(str(int(v)) for v in row) for row in panel.omega]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_panel(path) -> BinaryPanel:
    with open(path) as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2:
        raise FormatError(f"{path}: panel needs a header and at least one row")
    try:
        omega = np.array([[int(v) for v in r] for r in rows[1:]])
        return BinaryPanel(omega)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def grid_to_text(table, axes: Sequence[tuple]) -> str:
    """Long format: header of axis names plus ``value``, one row per node, axis-major.

    ``axes`` is a list of ``(name, coordinates)``; ``table.shape`` must equal
    the coordinate lengths.
    """
    table = np.asarray(table, dtype=float)
    if table.shape != tuple(len(c) for _, c in axes):
        raise FormatError("table shape does not match the axes")
    if not np.all(np.isfinite(table)):
        raise FormatError("table has non-finite entries")
    out = _io.StringIO()
    out.write(",".join([n for n, _ in axes] + ["value"]) + "\n")
    for idx in np.ndindex(*table.shape):
        coords = [_fmt(axes[a][1][i]) for a, i in enumerate(idx)]
        out.write(",".join(coords + [_fmt(table[idx])]) + "\n")
    return out.getvalue()


def export_grid(table, path, axes: Sequence[tuple]):
    atomic_write_text(path, grid_to_text(table, axes))


def read_grid(path):
    """Inverse of :func:`export_grid`: ``(table, axes)``."""
    with open(path) as fh:
        rows = list(csv.reader(fh))
    names = rows[0][:-1]
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    axes = []
    for a, name in enumerate(names):
        # axis-major order: coordinates appear in first-occurrence order
        _, first = np.unique(data[:, a], return_index=True)
        axes.append((name, data[np.sort(first), a]))
    shape = tuple(len(c) for _, c in axes)
    return data[:, -1].reshape(shape), axes


# ---------------------------------------------------------------------------
# checkpoints

def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False)


def _checksum(doc: dict) -> str:
    body = {k: v for k, v in doc.items() if k != "checksum"}
    return hashlib.sha256(canonical_json(body).encode()).hexdigest()


def _basis_doc(b) -> dict:
    if not isinstance(b, MlpBasis):
        raise FormatError(f"cannot serialize basis {b!r}")
    s = b.params.spec
    return {"hidden": list(s.hidden), "input_dim": s.input_dim, "output": s.output_activation,
            "input_scale": [float(x) for x in b.input_scale]}


def _basis_from(doc) -> MlpBasis:
    spec = MlpSpec(doc["input_dim"], tuple(doc["hidden"]), 1, doc["output"])
    return MlpBasis(MlpParams.zeros(spec), doc["input_scale"])


def _window_domain(model):
    dom = getattr(model, "domain", None)
    return {"T": float(model.T),
            "domain": None if dom is None else [dom.x_lo, dom.x_hi, dom.y_lo, dom.y_hi]}


def model_to_doc(model, kernel_spec: Optional[dict] = None) -> dict:
    """Checkpoint document for a deep :class:`SttpModel` or a :class:`GraphModel`.

    Parametric ground-truth kernels are stored by their defining parameters
    via ``kernel_spec`` (``{"type": "ground_truth" | "exp_hawkes" | "zero", ...}``).
    """
    doc = {"schema_version": SCHEMA_VERSION}
    doc.update(_window_domain(model))
    if isinstance(model, GraphModel):
        k = model.kernel
        doc["kind"] = "graph"
        doc["kernel"] = {
            "L": k.L, "R": k.R, "n_nodes": k.n_nodes, "tau_max": k.tau_max,
            "learn_alpha": k.learn_alpha, "mode": k.mode,
            "psi": [_basis_doc(b) for b in k.psi], "phi": [_basis_doc(b) for b in k.phi],
            "shift": None if k.mode == "free" else k.shift.tolist(),
            "degree": None if k.mode == "free" else int(k.coeffs.shape[1]),
            "alpha": k.alpha.tolist(),
        }
        doc["learn_mu"] = model.learn_mu
        doc["mu"] = model.mu.tolist()
        doc["params"] = model.get_vector().tolist()
    else:
        doc["kind"] = "sttp"
        doc["learn_mu"] = model.learn_mu
        doc["mu"] = float(model.mu)
        k = model.kernel
        if kernel_spec is not None:
            doc["kernel"] = dict(kernel_spec)
            doc["params"] = [float(x) for x in model.get_vector()[:int(model.learn_mu)]]
        else:
            doc["kernel"] = {
                "type": "deep", "L": k.L, "R": k.R, "tau_max": k.tau_max, "a_max": k.a_max,
                "spatial": k.spatial, "learn_alpha": k.learn_alpha, "alpha": k.alpha.tolist(),
                "psi": [_basis_doc(b) for b in k.psi], "phi": [_basis_doc(b) for b in k.phi],
                "u": [_basis_doc(b) for b in k.u], "v": [_basis_doc(b) for b in k.v],
            }
            doc["params"] = model.get_vector().tolist()
    doc["checksum"] = _checksum(doc)
    return doc


def parametric_kernel(spec: dict, spatial_default=True) -> LowRankKernel:
    kind = spec.get("type")
    if kind == "ground_truth":
        p = GroundTruthParams(**spec.get("params", {}))
        return ground_truth_kernel(p, spec.get("tau_max", 3.0), spec.get("a_max", 2.0))
    if kind == "exp_hawkes":
        p = ExpHawkesParams(**spec.get("params", {}))
        return exp_hawkes_kernel(p, spec.get("tau_max"))
    if kind == "zero":
        base = ground_truth_kernel() if spec.get("spatial", spatial_default) else exp_hawkes_kernel(ExpHawkesParams())
        return base.with_alpha(np.zeros_like(base.alpha))
    raise FormatError(f"unknown kernel type {kind!r}")


def model_from_doc(doc: dict):
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(f"unsupported schema version {doc.get('schema_version')}")
    if doc.get("checksum") != _checksum(doc):
        raise FormatError("checksum mismatch")
    window = TimeWindow(doc["T"])
    domain = None if doc["domain"] is None else SpatialDomain(*doc["domain"])
    kd = doc["kernel"]
    if doc["kind"] == "graph":
        psi = [_basis_from(b) for b in kd["psi"]]
        phi = [_basis_from(b) for b in kd["phi"]]
        R, N = kd["R"], kd["n_nodes"]
        if kd["mode"] == "free":
            k = GraphFilterKernel(kd["alpha"], psi, phi, filters=np.zeros((R, N, N)),
                                  tau_max=kd["tau_max"], learn_alpha=kd["learn_alpha"])
        else:
            k = GraphFilterKernel(kd["alpha"], psi, phi, shift=np.array(kd["shift"]),
                                  coeffs=np.zeros((R, kd["degree"])), tau_max=kd["tau_max"],
                                  learn_alpha=kd["learn_alpha"])
        m = GraphModel(np.ones(N), k, window, doc["learn_mu"])
        if not doc["learn_mu"]:
            m = GraphModel(doc["mu"], k, window, False)
        return m.with_vector(doc["params"])
    if kd["type"] == "deep":
        k = LowRankKernel(
            kd["alpha"], [_basis_from(b) for b in kd["psi"]], [_basis_from(b) for b in kd["phi"]],
            [_basis_from(b) for b in kd["u"]] or None, [_basis_from(b) for b in kd["v"]] or None,
            kd["tau_max"], kd["a_max"], kd["spatial"], kd["learn_alpha"],
        )
    else:
        k = parametric_kernel(kd, spatial_default=domain is not None)
    m = SttpModel(doc["mu"], k, window, domain, doc["learn_mu"])
    return m.with_vector(doc["params"]) if doc["params"] else m


def save_checkpoint(path, model, kernel_spec=None):
    atomic_write_text(path, canonical_json(model_to_doc(model, kernel_spec)) + "\n")


def load_checkpoint(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from exc
    return model_from_doc(doc)


def discrete_params_to_doc(p: DiscreteParams) -> dict:
    doc = {"schema_version": SCHEMA_VERSION, "kind": "discrete", "beta0": float(p.beta0),
           "beta": p.beta.tolist()}
    doc["checksum"] = _checksum(doc)
    return doc
