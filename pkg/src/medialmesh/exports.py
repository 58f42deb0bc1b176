"""Artifact writers: the .ma medial-mesh interchange format (spheres with
radius, edges, faces; 0-based), per-sheet colored PLY, seam/junction OBJ,
metrics JSON, and the line-delimited run log.

Coordinates are written in input units via the stored normalization
transform; floats use repr so round-trips are exact and runs with the same
seed produce byte-identical files."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from .mesh_io import NormalizeTransform
from .rpd import MedialMesh, Sphere


def write_ma(path, mesh: MedialMesh, transform: Optional[NormalizeTransform] = None) -> None:
    """``v x y z r`` per sphere, ``e i j`` per valid edge, ``f i j k`` per
    valid face; indices 0-based. Invalid elements are excluded."""
    lines = []
    for s in mesh.spheres:
        c = s.center if transform is None else transform.to_input(s.center)
        r = s.radius if transform is None else float(transform.scale_to_input(s.radius))
        lines.append(f"v {c[0]!r} {c[1]!r} {c[2]!r} {r!r}")
    for i, j in mesh.valid_edges():
        lines.append(f"e {int(i)} {int(j)}")
    for i, j, k in mesh.valid_faces():
        lines.append(f"f {int(i)} {int(j)} {int(k)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_ma(path):
    """Parse a .ma file; returns (spheres list, edges (E,2), faces (F,3))."""
    spheres, edges, faces = [], [], []
    for ln, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        if tag == "v" and len(parts) == 5:
            x, y, z, r = (float(p) for p in parts[1:])
            spheres.append(Sphere(center=np.array([x, y, z]), radius=r))
        elif tag == "e" and len(parts) == 3:
            edges.append((int(parts[1]), int(parts[2])))
        elif tag == "f" and len(parts) == 4:
            faces.append((int(parts[1]), int(parts[2]), int(parts[3])))
        else:
            raise ValueError(f"{path}: malformed .ma line {ln}: {raw!r}")
    return (spheres, np.asarray(edges, dtype=int).reshape(-1, 2),
            np.asarray(faces, dtype=int).reshape(-1, 3))


def _sheet_color(sheet: int) -> tuple[int, int, int]:
    # deterministic palette: golden-ratio hue walk
    h = (sheet * 0.61803398875) % 1.0
    i = int(h * 6.0)
    f = h * 6.0 - i
    v, p, q, t = 230, 60, int(230 - 170 * f), int(60 + 170 * f)
    rgb = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i % 6]
    return rgb


def write_sheets_ply(path, mesh: MedialMesh, transform: Optional[NormalizeTransform] = None) -> None:
    """Valid faces colored by sheet id."""
    vf = np.flatnonzero(mesh.face_valid)
    centers = np.asarray([s.center for s in mesh.spheres])
    if transform is not None:
        centers = transform.to_input(centers)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(centers)}",
             "property float x", "property float y", "property float z",
             f"element face {len(vf)}",
             "property list uchar int vertex_indices",
             "property uchar red", "property uchar green", "property uchar blue",
             "end_header"]
    for c in centers:
        lines.append(f"{c[0]!r} {c[1]!r} {c[2]!r}")
    for f in vf:
        i, j, k = (int(v) for v in mesh.faces[f])
        r, g, b = _sheet_color(int(mesh.sheet_id[f]))
        lines.append(f"3 {i} {j} {k} {r} {g} {b}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_seams_obj(path, mesh: MedialMesh, transform: Optional[NormalizeTransform] = None) -> None:
    """Seam polylines as OBJ line elements."""
    lines = []
    vid = 0
    for chain in mesh.seam_chains:
        ids = []
        for v in chain:
            c = mesh.spheres[v].center
            if transform is not None:
                c = transform.to_input(c)
            lines.append(f"v {c[0]!r} {c[1]!r} {c[2]!r}")
            vid += 1
            ids.append(vid)
        if len(ids) >= 2:
            lines.append("l " + " ".join(str(i) for i in ids))
    Path(path).write_text("\n".join(lines) + "\n")


def write_junctions_obj(path, mesh: MedialMesh, transform: Optional[NormalizeTransform] = None) -> None:
    """Junction spheres as OBJ points."""
    lines = []
    for k, v in enumerate(mesh.junction_ids, start=1):
        c = mesh.spheres[v].center
        if transform is not None:
            c = transform.to_input(c)
        lines.append(f"v {c[0]!r} {c[1]!r} {c[2]!r}")
        lines.append(f"p {k}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_metrics_json(path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def write_log_jsonl(path, records: list) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
