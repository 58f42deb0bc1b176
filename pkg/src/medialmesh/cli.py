"""Command-line pipeline driver.

Subcommands:
  compute   full optimization pipeline; writes medial.ma, sheets.ply,
            seams.obj, junctions.obj, metrics.json, log.jsonl, config.json
  evaluate  metrics for an existing .ma against a tet domain
  inspect   dump the first-iteration RPD cells and clusters for debugging

Exit codes: 0 ok, 2 usage, 3 missing input, 4 unwritable output directory,
5 invalid mesh, 1 unexpected error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import exports, mesh_io, structure
from .config import PipelineConfig
from .mesh_io import MeshError
from .metrics import metrics_report
from .optimizer import compute_sigma, initialize, mesh_area, run_pipeline
from .rpd import (MedialMesh, compute_rpd, dump_cells_ply, make_context,
                  sample_all, subvolume_clusters)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3
EXIT_BAD_OUTDIR = 4
EXIT_BAD_MESH = 5


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="tet mesh (.mesh or .vtk)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--gamma", type=float, default=40.0)
    p.add_argument("--c-sigma", type=float, default=0.3)
    p.add_argument("--phi-deg", type=float, default=30.0)
    p.add_argument("--knn", type=int, default=10)
    p.add_argument("--grad-tol", type=float, default=5e-3)
    p.add_argument("--outer-tol", type=float, default=3e-4)
    p.add_argument("--max-outer", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples-per-cell", type=int, default=64)
    p.add_argument("--tau-rank", type=float, default=1e-2)
    p.add_argument("--hd-samples", type=int, default=100_000)
    p.add_argument("--workers", type=int, default=0,
                   help="thread workers for RPD clipping (0 = all cores)")


def _config_from(args) -> PipelineConfig:
    import os
    workers = args.workers if args.workers > 0 else (os.cpu_count() or 1)
    return PipelineConfig(gamma=args.gamma, c_sigma=args.c_sigma, phi_deg=args.phi_deg,
                          knn=args.knn, grad_tol=args.grad_tol, outer_tol=args.outer_tol,
                          max_outer=args.max_outer, seed=args.seed,
                          samples_per_cell=args.samples_per_cell, tau_rank=args.tau_rank,
                          hd_samples=args.hd_samples, workers=workers)


def _load_domain(path: str):
    p = Path(path)
    if not p.exists():
        print(f"error: input not found: {p}", file=sys.stderr)
        raise SystemExit(EXIT_MISSING_INPUT)
    try:
        return mesh_io.load_tet_mesh(p)
    except MeshError as exc:
        print(f"error: invalid mesh: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_BAD_MESH)


def _prepare_outdir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError:
        print(f"error: output directory not writable: {out}", file=sys.stderr)
        raise SystemExit(EXIT_BAD_OUTDIR)
    return out


def evaluate_ma(domain, ma_path, config: PipelineConfig) -> dict:
    """Metrics for an existing .ma (input units) against a domain; the sphere
    classification is re-derived from one RPD pass, so the same seed and
    config reproduce identical numbers."""
    if len(domain.feature_edges) == 0 and config.phi_deg > 0:
        domain = mesh_io.detect_features(domain, math.radians(config.phi_deg))
    domain, transform = mesh_io.normalize(domain)
    ctx = make_context(domain, config)
    spheres, edges, faces = exports.read_ma(ma_path)
    if not spheres:
        raise ValueError(f"{ma_path}: no spheres")
    for s in spheres:
        s.center = transform.to_normalized(s.center)
        s.radius = float(s.radius * transform.scale)
        if s.radius <= ctx.eps:
            s.pinned = True
            s.klass = "T1_2_feature_edge"
    edges = np.sort(edges, axis=1)
    faces = np.sort(faces, axis=1)
    mesh = MedialMesh(spheres=spheres, edges=edges, faces=faces,
                      edge_valid=np.ones(len(edges), dtype=bool),
                      face_valid=np.ones(len(faces), dtype=bool),
                      sheet_id=-np.ones(len(faces), dtype=int))
    rng = np.random.default_rng(config.seed)
    cells = compute_rpd(domain, spheres, ctx)
    sample_all(cells, ctx, rng)
    clusters = []
    for cell, s in zip(cells, spheres):
        clusters.append([] if (cell.is_empty() or cell.samples is None)
                        else subvolume_clusters(cell, ctx, radius=s.radius))
    structure.classify_all(spheres, cells, clusters)
    mesh = structure.extract_structure(mesh)
    area = mesh_area(mesh)
    sigma = compute_sigma(area, len(spheres)) if area > 0 else 0.02 * ctx.bbox_diag
    return metrics_report(mesh, ctx, sigma, n_samples=config.hd_samples, rng=rng)


def _cmd_compute(args) -> int:
    domain = _load_domain(args.input)
    out = _prepare_outdir(args.out)
    config = _config_from(args)
    (out / "config.json").write_text(config.to_json() + "\n")

    def progress(rec):
        print(json.dumps(rec, sort_keys=True))

    result = run_pipeline(domain, config, progress=progress)
    exports.write_ma(out / "medial.ma", result.mesh, result.transform)
    exports.write_sheets_ply(out / "sheets.ply", result.mesh, result.transform)
    exports.write_seams_obj(out / "seams.obj", result.mesh, result.transform)
    exports.write_junctions_obj(out / "junctions.obj", result.mesh, result.transform)
    exports.write_log_jsonl(out / "log.jsonl", result.log)

    report = evaluate_ma(domain, out / "medial.ma", config)
    exports.write_metrics_json(out / "metrics.json", report)
    print(json.dumps({"done": True, "out": str(out), "mser": report["mser"],
                      "tq_avg": report["tq_avg"], "ter": report["ter"],
                      "hd_pct": report["hd_pct"]}, sort_keys=True))
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    domain = _load_domain(args.input)
    ma = Path(args.ma)
    if not ma.exists():
        print(f"error: .ma file not found: {ma}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    out = _prepare_outdir(args.out)
    config = _config_from(args)
    report = evaluate_ma(domain, ma, config)
    exports.write_metrics_json(out / "metrics.json", report)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_inspect(args) -> int:
    domain = _load_domain(args.input)
    out = _prepare_outdir(args.out)
    config = _config_from(args)
    if config.phi_deg > 0:
        domain = mesh_io.detect_features(domain, math.radians(config.phi_deg))
    domain, _ = mesh_io.normalize(domain)
    ctx = make_context(domain, config)
    rng = np.random.default_rng(config.seed)
    spheres, sigma = initialize(ctx, config.gamma, rng)
    cells = compute_rpd(domain, spheres, ctx)
    sample_all(cells, ctx, rng)
    dump_cells_ply(cells, out / "cells.ply")
    info = []
    for cell, s in zip(cells, spheres):
        entry = {"sphere": cell.sphere_id, "radius": s.radius, "pinned": s.pinned,
                 "center": [float(v) for v in s.center],
                 "volume": cell.volume(), "neighbors": cell.neighbor_ids}
        if not cell.is_empty() and cell.samples is not None:
            cl = subvolume_clusters(cell, ctx, radius=s.radius)
            entry["cluster_sizes"] = [int(len(c)) for c in cl]
        info.append(entry)
    (out / "clusters.json").write_text(json.dumps(
        {"sigma": sigma, "cells": info}, indent=2, sort_keys=True) + "\n")
    print(json.dumps({"spheres": len(spheres), "sigma": sigma, "out": str(out)}))
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="medialmesh",
                                     description="Structure-aware medial axis transform")
    sub = parser.add_subparsers(dest="command", required=True)
    p_compute = sub.add_parser("compute", help="run the full pipeline")
    _add_common(p_compute)
    p_eval = sub.add_parser("evaluate", help="metrics for an existing .ma")
    _add_common(p_eval)
    p_eval.add_argument("--ma", required=True, help="medial mesh .ma file")
    p_inspect = sub.add_parser("inspect", help="dump first-iteration RPD cells")
    _add_common(p_inspect)

    args = parser.parse_args(argv)
    try:
        if args.command == "compute":
            return _cmd_compute(args)
        if args.command == "evaluate":
            return _cmd_evaluate(args)
        if args.command == "inspect":
            return _cmd_inspect(args)
        return EXIT_USAGE
    except SystemExit as exc:
        raise exc
    except MeshError as exc:
        print(f"error: invalid mesh: {exc}", file=sys.stderr)
        return EXIT_BAD_MESH
    except Exception as exc:   # pragma: no cover - last-resort diagnostics
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
