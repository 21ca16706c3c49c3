"""Command-line interface.

Every command reads an optional JSON config (``--config``); values missing
from the file fall back to :data:`REFERENCE_CONFIG` (committed as
``configs/reference.json``) and ``--seed`` overrides the file's seed.

Exit codes: 0 ok, 2 configuration error, 3 simulation error, 4 diverged fit,
5 I/O error.
"""
from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from .core import GridSpec, ModelConfig, SpatialDomain, TimeWindow, validate_sequence
from .discrete_glm import fit_discrete, granger_adjacency
from .errors import BoundViolationLoop, ConfigError, StppError, ValidationError
from .graph_process import GraphModel, deep_graph_kernel, fit_graph, influence_snapshots
from .intensity import SttpModel
from .io import (FormatError, atomic_write_text, canonical_json, discrete_params_to_doc, export_grid,
                 load_checkpoint, model_to_doc, parametric_kernel, read_corpus, read_matrix, read_panel,
                 save_checkpoint, write_corpus, write_matrix)
from .kernel import deep_kernel, discretize_pair_forms, effective_rank, kernel_lag_grid
from .optimizer import FitOptions, evaluate, fit
from .prediction import mae_eval, predict_next
from .simulation import simulate_many

EXIT_OK, EXIT_CONFIG, EXIT_SIM, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4, 5

_GRID = asdict(GridSpec())
_FIT = {k: v for k, v in asdict(FitOptions()).items() if k != "grid"}
_MODEL = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(ModelConfig()).items()}

REFERENCE_CONFIG = {
    "seed": 0,
    "simulate": {
        "model": {"type": "ground_truth", "mu": 1.0},
        "T": 10.0, "domain": [-1.0, 1.0, -1.0, 1.0], "M": 10, "lambda_bound_factor": 1.5,
    },
    "fit": {
        "corpus": "corpus.csv", "model": _MODEL, "options": _FIT, "grid": _GRID,
    },
    "evaluate": {"checkpoint": "checkpoint.json", "corpus": "corpus.csv", "grid": _GRID},
    "predict": {"checkpoint": "checkpoint.json", "corpus": "corpus.csv",
                "grid": {"n_time": 200, "n_x": 32, "n_y": 32, "n_lag": 200, "n_disp": 64}},
    "rank_demo": {"n": 200, "rel_tol": 1e-10},
    "graph_fit": {
        "corpus": "graph_corpus.csv", "n_nodes": 5, "L": 1, "R": 1, "hidden": [16, 16],
        "tau_max": 3.0, "adjacency": None, "shift": "adjacency", "degree": 2,
        "options": dict(_FIT, objective="least_squares"), "grid": _GRID,
    },
    "graph_snapshots": {"checkpoint": None, "n_nodes": 5, "t": 5.0, "lags": [0.25, 0.5, 1.0, 2.0]},
    "discrete_fit": {"panel": "panel.csv", "d": 2, "threshold": 0.02},
    "export": {"checkpoint": "checkpoint.json", "t_src": 0.0, "s_src": [0.0, 0.0], "grid": _GRID},
}


def _merge(base: dict, over: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict) and k not in ("model",):
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = v
    return out


def load_config(path, seed=None) -> dict:
    cfg = copy.deepcopy(REFERENCE_CONFIG)
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        cfg = _merge(cfg, user)
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg


def _grid(d) -> GridSpec:
    try:
        return GridSpec(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"grid: {exc}") from exc


def _fit_options(d, grid, seed) -> FitOptions:
    try:
        return FitOptions(**dict(d, seed=seed), grid=grid)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"fit options: {exc}") from exc


def _input(path, base_dir):
    if path is None:
        raise ConfigError("missing input path")
    p = path if os.path.isabs(path) else os.path.join(base_dir, path)
    if not os.path.exists(p):
        raise ConfigError(f"input not found: {path}")
    return p


class Outputs:
    """Output paths under ``--out``; refuses to clobber unless ``--overwrite``."""

    def __init__(self, out_dir, overwrite):
        self.dir = out_dir
        self.overwrite = overwrite

    def check(self, *names):
        paths = [os.path.join(self.dir, n) for n in names]
        if not self.overwrite:
            clash = [p for p in paths if os.path.exists(p)]
            if clash:
                raise ConfigError(f"output exists (use --overwrite): {clash[0]}")
        return paths

    def prepare(self):
        try:
            os.makedirs(self.dir, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create output directory: {exc}") from exc


def _sim_model(mc: dict, T, domain):
    spec = dict(mc)
    mu = float(spec.pop("mu", 1.0))
    if spec.get("type") == "checkpoint":
        return load_checkpoint(spec["path"]), None
    if spec.get("type") == "poisson":
        spec = {"type": "zero", "spatial": domain is not None}
    try:
        k = parametric_kernel(spec, spatial_default=domain is not None)
        return SttpModel(mu, k, TimeWindow(T), domain, learn_mu=False), spec
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"simulate.model: {exc}") from exc


def cmd_simulate(cfg, out: Outputs, base_dir):
    c = cfg["simulate"]
    domain = SpatialDomain(*c["domain"]) if c["domain"] is not None else None
    if not (isinstance(c["M"], int) and c["M"] >= 1):
        raise ConfigError("simulate.M must be a positive integer")
    model, spec = _sim_model(c["model"], float(c["T"]), domain)
    corpus_path, manifest_path = out.check("corpus.csv", "manifest.json")
    seqs = simulate_many(model, c["M"], float(c["T"]), domain, cfg["seed"],
                         lambda_bound_factor=c["lambda_bound_factor"])
    from .io import corpus_to_text
    import hashlib
    text = corpus_to_text(seqs, domain)
    manifest = {
        "command": "simulate", "seed": cfg["seed"], "config": c,
        "counts": [len(s) for s in seqs], "n_events": sum(len(s) for s in seqs),
        "corpus_sha256": hashlib.sha256(text.encode()).hexdigest(),
    }
    out.prepare()
    atomic_write_text(corpus_path, text)
    atomic_write_text(manifest_path, canonical_json(manifest) + "\n")
    print(f"simulated {len(seqs)} sequences, {manifest['n_events']} events")
    return EXIT_OK


def _load_corpus(path, T=None):
    seqs, domain = read_corpus(path, T)
    for s in seqs:
        validate_sequence(s, domain)
    return seqs, domain


def cmd_fit(cfg, out: Outputs, base_dir):
    c = cfg["fit"]
    seqs, domain = _load_corpus(_input(c["corpus"], base_dir))
    try:
        mcfg = ModelConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in c["model"].items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"fit.model: {exc}") from exc
    if (domain is not None) != mcfg.spatial:
        raise ConfigError("model.spatial does not match the corpus")
    grid = _grid(c["grid"])
    opts = _fit_options(c["options"], grid, cfg["seed"])
    T = seqs[0].T
    k = deep_kernel(mcfg, cfg["seed"], horizon=T, domain=domain)
    m0 = SttpModel(mcfg.mu, k, TimeWindow(T), domain, mcfg.learn_mu)
    ck, rep_path = out.check("checkpoint.json", "report.json")
    model, report = fit(m0, seqs, opts)
    final = training_value(model, seqs, opts)
    rep = {"termination": report.termination, "trace": report.trace, "epochs": report.epochs,
           "min_intensity": report.min_intensity, "grad_norm": report.grad_norm,
           "final_objective": final, "seconds": round(report.seconds, 3)}
    out.prepare()
    save_checkpoint(ck, model)
    atomic_write_text(rep_path, canonical_json(_finite(rep)) + "\n")
    print(f"fit finished: {report.termination}, final objective {final!r}")
    return EXIT_DIVERGED if report.termination == "diverged" else EXIT_OK


def training_value(model, seqs, opts: FitOptions) -> float:
    """Loss at the final barrier weight, as recorded in fit reports."""
    from .objectives import Layout
    from .optimizer import training_loss
    layout = Layout(model, seqs, opts.grid, space_time=True)
    return training_loss(model, layout, opts, max(opts.max_epochs - 1, 0), want_grad=False).value


def _finite(obj):
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    return obj


def cmd_evaluate(cfg, out: Outputs, base_dir):
    c = cfg["evaluate"]
    model = load_checkpoint(_input(c["checkpoint"], base_dir))
    seqs, _ = _load_corpus(_input(c["corpus"], base_dir), model.T)
    (path,) = out.check("metrics.json")
    m = evaluate(model, seqs, _grid(c["grid"]))
    out.prepare()
    atomic_write_text(path, canonical_json(_finite({
        "loglik_per_event": m.loglik_per_event, "ls_loss": m.ls_loss, "n_events": m.n_events,
        "flagged": m.flagged, "message": m.message})) + "\n")
    print(f"loglik_per_event={m.loglik_per_event!r} ls_loss={m.ls_loss!r}")
    return EXIT_OK


def cmd_predict(cfg, out: Outputs, base_dir):
    c = cfg["predict"]
    model = load_checkpoint(_input(c["checkpoint"], base_dir))
    seqs, _ = _load_corpus(_input(c["corpus"], base_dir), model.T)
    grid = _grid(c["grid"])
    pred_path, sum_path = out.check("predictions.csv", "mae.json")
    lines = ["seq_id,t_last,t_pred,x_pred,y_pred,tail_mass"]
    for q, s in enumerate(seqs):
        if len(s) < 2:
            continue
        try:
            fc = predict_next(model, s.head(len(s) - 1), grid)
        except StppError:
            lines.append(f"{q},{s.times[-2]!r},nan,nan,nan,nan")
            continue
        loc = fc.location if fc.location is not None else [np.nan, np.nan]
        lines.append(",".join([str(q), repr(float(s.times[-2])), repr(fc.time),
                               repr(float(loc[0])), repr(float(loc[1])), repr(fc.tail_mass)]))
    usable = [s for s in seqs if len(s) >= 2]
    res = mae_eval(model, usable, grid)
    out.prepare()
    atomic_write_text(pred_path, "\n".join(lines) + "\n")
    atomic_write_text(sum_path, canonical_json(_finite({
        "time_mae": res.time_mae, "location_mae": res.location_mae,
        "n_evaluated": res.n_evaluated, "n_flagged": res.n_flagged})) + "\n")
    print(f"time_mae={res.time_mae!r} location_mae={res.location_mae!r}")
    return EXIT_OK


def cmd_rank_demo(cfg, out: Outputs, base_dir):
    c = cfg["rank_demo"]
    a, b = out.check("K_original.csv", "K_reparam.csv")
    K_orig, K_rep = discretize_pair_forms(n=int(c["n"]))
    r1 = effective_rank(K_orig, c["rel_tol"])
    r2 = effective_rank(K_rep, c["rel_tol"])
    out.prepare()
    write_matrix(a, K_orig)
    write_matrix(b, K_rep)
    print(f"rank_original={r1} rank_reparam={r2}")
    return EXIT_OK


def cmd_graph_fit(cfg, out: Outputs, base_dir):
    c = cfg["graph_fit"]
    seqs, _ = _load_corpus(_input(c["corpus"], base_dir))
    shift = None
    if c["adjacency"] is not None:
        from .graph_process import Graph
        g = Graph(read_matrix(_input(c["adjacency"], base_dir)))
        shift = g.shift(c["shift"])
    grid = _grid(c["grid"])
    opts = _fit_options(c["options"], grid, cfg["seed"])
    k = deep_graph_kernel(c["n_nodes"], c["L"], c["R"], tuple(c["hidden"]), c["tau_max"],
                          cfg["seed"], shift=shift, degree=c["degree"])
    m0 = GraphModel(np.ones(c["n_nodes"]) * 0.5, k, TimeWindow(seqs[0].T))
    ck, rep_path = out.check("checkpoint.json", "report.json")
    model, report = fit_graph(m0, seqs, opts)
    out.prepare()
    save_checkpoint(ck, model)
    atomic_write_text(rep_path, canonical_json(_finite({
        "termination": report.termination, "trace": report.trace,
        "min_intensity": report.min_intensity, "grad_norm": report.grad_norm})) + "\n")
    print(f"graph fit finished: {report.termination}")
    return EXIT_DIVERGED if report.termination == "diverged" else EXIT_OK


def cmd_graph_snapshots(cfg, out: Outputs, base_dir):
    c = cfg["graph_snapshots"]
    if c["checkpoint"] is None:
        k = deep_graph_kernel(c["n_nodes"], seed=cfg["seed"], filter_scale=0.0)
        model = GraphModel(np.zeros(c["n_nodes"]), k, TimeWindow(max(c["t"], 1.0)), learn_mu=False)
    else:
        model = load_checkpoint(_input(c["checkpoint"], base_dir))
    names = [f"snapshot_{i:03d}.csv" for i in range(len(c["lags"]))]
    paths = out.check(*names)
    try:
        snaps = influence_snapshots(model, float(c["t"]), c["lags"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out.prepare()
    for p, S in zip(paths, snaps):
        write_matrix(p, S)
    print(f"wrote {len(snaps)} snapshots")
    return EXIT_OK


def cmd_discrete_fit(cfg, out: Outputs, base_dir):
    c = cfg["discrete_fit"]
    panel = read_panel(_input(c["panel"], base_dir))
    p_path, a_path = out.check("params.json", "adjacency.csv")
    res = fit_discrete(panel, int(c["d"]), seed=cfg["seed"])
    adj = granger_adjacency(res.params, float(c["threshold"]))
    out.prepare()
    doc = discrete_params_to_doc(res.params)
    doc["degenerate"] = res.degenerate
    atomic_write_text(p_path, canonical_json(doc) + "\n")
    atomic_write_text(a_path, "".join(",".join(str(int(v)) for v in row) + "\n" for row in adj))
    print(f"beta0={res.params.beta0!r} edges={int(adj.sum())}")
    return EXIT_OK


def cmd_export(cfg, out: Outputs, base_dir):
    """Kernel on (lag x displacement) or (lag) grids as a long-format table."""
    c = cfg["export"]
    model = load_checkpoint(_input(c["checkpoint"], base_dir))
    (path,) = out.check("kernel_grid.csv")
    grid = _grid(c["grid"])
    table, lags, disp = kernel_lag_grid(model.kernel, grid, c["t_src"], c["s_src"])
    out.prepare()
    if model.kernel.spatial:
        ax, _ = grid.disp_axis(model.kernel.a_max)
        export_grid(table.reshape(len(lags), len(ax), len(ax)), path,
                    [("lag", lags), ("dx", ax), ("dy", ax)])
    else:
        export_grid(table[:, 0], path, [("lag", lags)])
    print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate, "fit": cmd_fit, "evaluate": cmd_evaluate, "predict": cmd_predict,
    "rank-demo": cmd_rank_demo, "graph-fit": cmd_graph_fit, "graph-snapshots": cmd_graph_snapshots,
    "discrete-fit": cmd_discrete_fit, "export": cmd_export,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deep-kernel-stpp", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--overwrite", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    base_dir = os.path.dirname(os.path.abspath(args.config)) if args.config else os.getcwd()
    try:
        cfg = load_config(args.config, args.seed)
        return COMMANDS[args.command](cfg, Outputs(args.out, args.overwrite), base_dir)
    except (ConfigError, ValidationError, FormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BoundViolationLoop as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIM
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
