"""End-to-end pipeline stages behind the command line.

Each stage reads/writes files under one output directory and records what it
produced in ``manifest.json`` (SHA-256 per file plus the corpus hash), so a
later stage can refuse to evaluate networks against a corpus other than the
one they were built from, and a full rerun can be checked for bit-identical
results.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time

import numpy as np

from . import community as cm
from . import corpus as cp
from . import density as dn
from . import networks as nw
from . import states as st
from . import training as tr
from .config import RunConfig, NetworkSpec
from .fields import (BlockGrid, ConstantField, GridField, SinusoidalMixingField,
                     SwirlField, block_grid_for)
from .tracing import (default_step, default_zero_tol, generate_split_seeds,
                      trace_block_sequences, trace_polylines)


class PipelineError(RuntimeError):
    """A stage precondition failed (missing inputs, mismatched corpus)."""


# ---------------------------------------------------------------------------
# Manifest

def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _manifest_path(out_dir: str) -> str:
    return os.path.join(out_dir, "manifest.json")


def load_manifest(out_dir: str) -> dict:
    path = _manifest_path(out_dir)
    if not os.path.exists(path):
        return {"stages": {}}
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _record_stage(out_dir: str, stage: str, outputs: list[str],
                  extra: dict | None = None) -> dict:
    manifest = load_manifest(out_dir)
    entry = {"outputs": {name: file_sha256(os.path.join(out_dir, name))
                         for name in sorted(outputs)}}
    if extra:
        entry.update(extra)
    manifest["stages"][stage] = entry
    with open(_manifest_path(out_dir), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


# ---------------------------------------------------------------------------
# Field / grid construction

def make_field(cfg: RunConfig):
    lo, hi = cfg.bounds
    if cfg.field_kind == "abc":
        a, b, c = cfg.coefficients
        base = SinusoidalMixingField(a, b, c, lo=lo, hi=hi)
    elif cfg.field_kind == "swirl":
        base = SwirlField(lo=lo, hi=hi)
    elif cfg.field_kind == "constant":
        base = ConstantField(cfg.value, lo=lo, hi=hi)
    elif cfg.field_kind == "grid":
        return GridField.load(cfg.grid_file)
    else:  # pragma: no cover - kinds are validated at parse time
        raise ValueError(f"unknown field kind {cfg.field_kind!r}")
    if all(d > 0 for d in cfg.grid_dims):
        return GridField.from_analytic(base, cfg.grid_dims)
    return base


def make_grid(cfg: RunConfig, field) -> BlockGrid:
    return block_grid_for(field, cfg.nblocks)


def _step_of(cfg: RunConfig, grid: BlockGrid) -> float:
    return cfg.step if cfg.step is not None else default_step(grid)


# ---------------------------------------------------------------------------
# Stage: trace

def stage_trace(cfg: RunConfig, out_dir: str, seed: int | None = None) -> dict:
    """Seed particles, trace them, and write the three sequence splits."""
    os.makedirs(out_dir, exist_ok=True)
    field = make_field(cfg)
    grid = make_grid(cfg, field)
    rng_seed = cfg.seed if seed is None else seed
    h = _step_of(cfg, grid)
    zero_tol = (cfg.zero_tol if cfg.zero_tol is not None
                else default_zero_tol(field.lo, field.hi, cfg.max_steps))

    counts = (cfg.n_train, cfg.n_validation, cfg.n_test)
    seeds = generate_split_seeds(field.lo, field.hi, counts, rng_seed)
    splits = [trace_block_sequences(field, grid, s, h, cfg.max_steps, zero_tol)
              for s in seeds]
    corpus = cp.SequenceCorpus(splits[0], splits[1], splits[2],
                               grid.block_count)
    corpus.save(out_dir)

    outputs = list(cp.SPLIT_FILES)
    if isinstance(field, GridField):
        field.save(os.path.join(out_dir, "field.json"))
        outputs += ["field.json", "field.raw"]
    chash = cp.corpus_hash(out_dir)
    _record_stage(out_dir, "trace", outputs,
                  {"corpus_hash": chash, "seed": rng_seed, "step": h,
                   "zero_tol": zero_tol, "block_count": grid.block_count})
    return {"corpus_hash": chash, "sequences": sum(len(s) for s in splits)}


def _require_corpus(cfg: RunConfig, out_dir: str) -> tuple[cp.SequenceCorpus, str]:
    grid = make_grid(cfg, make_field(cfg))
    try:
        corpus = cp.SequenceCorpus.load(out_dir, grid.block_count)
    except FileNotFoundError as e:
        raise PipelineError(f"{e} (run the trace stage first)") from e
    return corpus, cp.corpus_hash(out_dir)


# ---------------------------------------------------------------------------
# Stage: build

def network_filename(spec: NetworkSpec) -> str:
    return f"network_{spec.slug}.json"


def build_one(spec: NetworkSpec, corpus: cp.SequenceCorpus, cfg: RunConfig,
              chash: str, out_dir: str) -> nw.Network:
    provenance = {"corpus_hash": chash, "seed": cfg.seed}
    log: list[dict] | None = None
    if spec.kind == "flowhon":
        net, log = tr.train_clustered(corpus.train, corpus.validation,
                                      corpus.block_count, spec.order,
                                      cfg.train, provenance)
    else:
        if spec.kind == "fon":
            net = nw.build_fon(corpus.train, corpus.block_count, provenance)
        elif spec.kind == "fixed":
            net = nw.build_fixed_order(corpus.train, corpus.block_count,
                                       spec.order, provenance=provenance)
        elif spec.kind == "variable":
            net = nw.build_variable_order(corpus.train, corpus.block_count,
                                          spec.order, provenance=provenance)
        else:  # pragma: no cover - specs are validated at parse time
            raise ValueError(f"unknown network kind {spec.kind!r}")
        if spec.trained:
            net, res = tr.optimize_network(net, corpus.train, corpus.validation,
                                           cfg.train)
            log = [{"iter": 1, "train_loss": res.final_train,
                    "val_loss": res.final_val, "nodes": net.node_count,
                    "A_changed": False}]
    nw.save_network(net, os.path.join(out_dir, network_filename(spec)))
    if log is not None:
        with open(os.path.join(out_dir, f"training_{spec.slug}.jsonl"), "w",
                  encoding="utf-8") as f:
            for rec in log:
                json.dump(rec, f, sort_keys=True)
                f.write("\n")
    return net


def _selected(cfg: RunConfig, kind: str | None, order: int | None) -> list[NetworkSpec]:
    specs = cfg.networks
    if kind is not None:
        specs = [s for s in specs if s.kind == kind and
                 (order is None or s.order == order)]
        if not specs:
            specs = [NetworkSpec(kind, order if order is not None else
                                 (1 if kind == "fon" else 3),
                                 trained=(kind == "flowhon"))]
    return specs


def stage_build(cfg: RunConfig, out_dir: str, kind: str | None = None,
                order: int | None = None) -> dict:
    corpus, chash = _require_corpus(cfg, out_dir)
    specs = _selected(cfg, kind, order)
    outputs = []
    timings = {}
    for spec in specs:
        t0 = time.perf_counter()
        build_one(spec, corpus, cfg, chash, out_dir)
        timings[spec.slug] = time.perf_counter() - t0
        outputs.append(network_filename(spec))
        log_name = f"training_{spec.slug}.jsonl"
        if os.path.exists(os.path.join(out_dir, log_name)):
            outputs.append(log_name)
    _record_stage(out_dir, "build", outputs,
                  {"corpus_hash": chash, "timings": timings})
    return {"built": [s.slug for s in specs], "timings": timings}


def _load_built(cfg: RunConfig, out_dir: str, chash: str,
                kind: str | None, order: int | None) -> list[tuple[NetworkSpec, nw.Network]]:
    specs = _selected(cfg, kind, order)
    loaded = []
    for spec in specs:
        path = os.path.join(out_dir, network_filename(spec))
        if not os.path.exists(path):
            raise PipelineError(f"network file {path} not found "
                                f"(run the build stage first)")
        net = nw.load_network(path)
        built_from = net.provenance.get("corpus_hash")
        if built_from is not None and built_from != chash:
            raise PipelineError(
                f"{network_filename(spec)} was built from corpus {built_from[:12]}… "
                f"but the corpus on disk hashes to {chash[:12]}…; re-run the "
                f"build stage against the current corpus")
        loaded.append((spec, net))
    return loaded


# ---------------------------------------------------------------------------
# Stage: eval-density

def stage_eval_density(cfg: RunConfig, out_dir: str, kind: str | None = None,
                       order: int | None = None) -> list[dn.DensityReport]:
    corpus, chash = _require_corpus(cfg, out_dir)
    loaded = _load_built(cfg, out_dir, chash, kind, order)
    csv_path = os.path.join(out_dir, "density.csv")
    if os.path.exists(csv_path):
        os.remove(csv_path)
    outputs = ["density.csv"]
    reports = []
    for spec, net in loaded:
        report = dn.density_error(net, corpus.test, cfg.eval_horizon,
                                  cfg.eval_epsilon, cfg.start_mode)
        report.kind = spec.slug
        name = f"density_{spec.slug}.json"
        dn.save_report(report, os.path.join(out_dir, name))
        dn.append_csv(report, csv_path)
        outputs.append(name)
        reports.append(report)
    _record_stage(out_dir, "eval_density", outputs, {"corpus_hash": chash})
    return reports


# ---------------------------------------------------------------------------
# Stage: eval-communities

def stage_eval_communities(cfg: RunConfig, out_dir: str, kind: str | None = None,
                           order: int | None = None) -> dict:
    corpus, chash = _require_corpus(cfg, out_dir)
    if kind is None and any(s.kind == "flowhon" for s in cfg.networks):
        kind = "flowhon"
    loaded = _load_built(cfg, out_dir, chash, kind, order)
    outputs = []
    results = {}
    for spec, net in loaded:
        points, partitions = cm.sweep_markov_time(
            net, corpus.test, cfg.sweep_lo, cfg.sweep_hi, cfg.sweep_step,
            cfg.teleport)
        sweep_name = f"sweep_{spec.slug}.csv"
        cm.save_sweep(points, os.path.join(out_dir, sweep_name))
        outputs.append(sweep_name)
        for p in points:
            if p.pareto:
                pname = f"partition_{spec.slug}_mt{p.markov_time:.1f}.json"
                cm.save_partition(partitions[p.markov_time], p.markov_time,
                                  os.path.join(out_dir, pname))
                outputs.append(pname)
        results[spec.slug] = points
    _record_stage(out_dir, "eval_communities", outputs, {"corpus_hash": chash})
    return results


# ---------------------------------------------------------------------------
# Stage: export-ui

def _decimate(n_points: int, max_points: int) -> np.ndarray:
    if n_points <= max_points:
        return np.arange(n_points)
    stride = int(math.ceil((n_points - 1) / (max_points - 1)))
    idx = np.arange(0, n_points, stride)
    if idx[-1] != n_points - 1:
        idx = np.append(idx, n_points - 1)
    return idx


def export_ui_bundle(net: nw.Network, field, grid: BlockGrid, cfg: RunConfig,
                     partition: dict[int, int] | None = None,
                     markov_time: float | None = None,
                     seed: int | None = None) -> dict:
    """Assemble the interactive-exploration bundle: node-link data plus
    decimated streamlines whose segments carry node labels."""
    rng_seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng([rng_seed, 11])
    from .tracing import stratified_seeds
    seeds = stratified_seeds(rng, field.lo, field.hi, cfg.export_streamlines)
    h = _step_of(cfg, grid)
    zero_tol = (cfg.zero_tol if cfg.zero_tol is not None
                else default_zero_tol(field.lo, field.hi, cfg.max_steps))
    lines = trace_polylines(field, seeds, h, cfg.max_steps, zero_tol)

    support = net.node_support()
    nodes = [{"id": n, "block": int(net.node_block[n]),
              "order": int(np.max(net.space.orders[net.node_of_state == n]))
              if np.any(net.node_of_state == n) else 1,
              "size": float(support[n])}
             for n in range(net.node_count)]
    src, dst = np.nonzero(net.T.T >= cfg.export_min_probability)
    edges = [{"src": int(s), "dst": int(d), "p": float(net.T[d, s])}
             for s, d in zip(src, dst)]

    streamlines = []
    for li, line in enumerate(lines):
        pts = line.points
        ids = np.atleast_1d(grid.block_of(pts))
        keep = np.empty(ids.shape[0], dtype=bool)
        keep[0] = True
        keep[1:] = ids[1:] != ids[:-1]
        seq_pos = np.cumsum(keep) - 1          # index into the dedup sequence
        seq = ids[keep].astype(np.int64)
        _, state_idx = st.lift_longest_suffix(net.space, [seq])
        node_per_point = net.node_of_state[state_idx][seq_pos]
        sel = _decimate(pts.shape[0], cfg.export_max_points)
        streamlines.append({
            "id": li,
            "points": [[float(v) for v in pts[i]] for i in sel],
            "labels": [int(node_per_point[i]) for i in sel[:-1]],
        })

    bundle = {
        "kind": net.kind,
        "order": net.order,
        "block_grid": {"lo": [float(v) for v in grid.lo],
                       "hi": [float(v) for v in grid.hi],
                       "nblocks": [int(v) for v in grid.nblocks]},
        "nodes": nodes,
        "edges": edges,
        "exit_node": net.exit_node,
        "streamlines": streamlines,
        "partition": ({"markov_time": markov_time,
                       "assignment": {str(k): int(v)
                                      for k, v in sorted(partition.items())}}
                      if partition is not None else None),
    }
    return bundle


def stage_export_ui(cfg: RunConfig, out_dir: str, kind: str | None = None,
                    order: int | None = None, seed: int | None = None) -> list[str]:
    corpus, chash = _require_corpus(cfg, out_dir)
    if kind is None:
        for pref in ("flowhon", "variable", "fixed", "fon"):
            if any(s.kind == pref for s in cfg.networks):
                kind = pref
                break
    loaded = _load_built(cfg, out_dir, chash, kind, order)
    field = make_field(cfg)
    grid = make_grid(cfg, field)
    outputs = []
    for spec, net in loaded:
        partition = None
        mt = cfg.export_markov_time
        if mt is not None:
            partition = cm.detect_communities(net, mt, cfg.teleport)
        bundle = export_ui_bundle(net, field, grid, cfg, partition, mt, seed)
        name = f"ui_{spec.slug}.json"
        with open(os.path.join(out_dir, name), "w", encoding="utf-8") as f:
            json.dump(bundle, f, sort_keys=True)
            f.write("\n")
        outputs.append(name)
    _record_stage(out_dir, "export_ui", outputs, {"corpus_hash": chash})
    return outputs


def run_all(cfg: RunConfig, out_dir: str, seed: int | None = None) -> dict:
    info = stage_trace(cfg, out_dir, seed)
    stage_build(cfg, out_dir)
    stage_eval_density(cfg, out_dir)
    if any(s.kind == "flowhon" for s in cfg.networks):
        stage_eval_communities(cfg, out_dir)
    stage_export_ui(cfg, out_dir, seed=seed)
    return info
