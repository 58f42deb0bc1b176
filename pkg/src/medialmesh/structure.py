"""Medial structure: sphere classification from sub-volume clusters, sheet /
seam / junction extraction, pruning of invalid dual connections, and the
thinness pass that opens closed pockets."""

from __future__ import annotations

import numpy as np

from . import config as cfg
from . import geom
from .rpd import MedialMesh, PowerCell, RpdContext, cluster_samples, significant_clusters

SEAM_CLASSES = (cfg.T3_SEAM, cfg.T4_JUNCTION, cfg.T1_3_CORNER)


def classify_sphere(cell: PowerCell, clusters: list) -> str:
    """Structural class from the number of distinct sub-volume clusters."""
    k = len(significant_clusters(clusters))
    if k <= 1:
        return cfg.T1_SPIKE
    if k == 2:
        return cfg.T2_SHEET
    if k == 3:
        return cfg.T3_SEAM
    return cfg.T4_JUNCTION


def classify_all(spheres: list, cells: list, clusters_list: list) -> None:
    """Assign klass in place; pinned feature spheres keep their class."""
    for sphere, cell, clusters in zip(spheres, cells, clusters_list):
        if sphere.pinned:
            continue
        if cell.is_empty() or not clusters:
            sphere.klass = cfg.T1_SPIKE
            continue
        sphere.klass = classify_sphere(cell, clusters)


# ---------------------------------------------------------------------------
# pruning invalid connections
# ---------------------------------------------------------------------------

def _face_sample_points(cell_i: PowerCell, j: int) -> np.ndarray:
    """Points covering the bisector face(s) of cell i against sphere j:
    polygon vertices, edge midpoints, and centroids."""
    pts = []
    for piece in cell_i.pieces:
        for fi, tag in enumerate(piece.clip_tags):
            if tag != j:
                continue
            loop = piece.faces[fi]
            v = piece.vertices[loop]
            pts.append(v)
            pts.append(0.5 * (v + np.roll(v, -1, axis=0)))
            pts.append(v.mean(axis=0)[None, :])
    return np.vstack(pts) if pts else np.empty((0, 3))


def _face_covers_cell(cell: PowerCell, face_n: np.ndarray, face_foot: np.ndarray,
                      face_tri: np.ndarray, radius: float, ctx: RpdContext) -> bool:
    """Cluster the union of cell samples and face samples: the face spans the
    cell's sub-volumes iff every significant union cluster contains samples
    from both sides (set equality under the clustering equivalence)."""
    sm = cell.samples
    n = np.vstack([sm.n, face_n])
    foot = np.vstack([sm.foot, face_foot])
    tri = np.concatenate([sm.tri, face_tri])
    n_cell = len(sm)
    union = cluster_samples(n, foot, ctx.cp.tri_normals[tri], radius, ctx)
    for idx in significant_clusters(union):
        has_cell = bool(np.any(idx < n_cell))
        has_face = bool(np.any(idx >= n_cell))
        if has_cell != has_face:
            return False
    return True


def prune_invalid(mesh: MedialMesh, cells: list, ctx: RpdContext,
                  cell_clusters: list) -> MedialMesh:
    """An edge is valid iff its dual bisector face intersects the same
    sub-volumes as at least one endpoint cell (cluster sets equal under the
    clustering equivalence); faces with any invalid bounding edge become
    invalid."""
    spheres = mesh.spheres
    for e, (i, j) in enumerate(mesh.edges):
        if not mesh.edge_valid[e]:
            continue
        i, j = int(i), int(j)
        ci, cj = cells[i], cells[j]
        if ci.samples is None or cj.samples is None:
            mesh.edge_valid[e] = False
            continue
        pts = _face_sample_points(ci, j)
        if len(pts) == 0:
            pts = _face_sample_points(cj, i)
        if len(pts) == 0:
            mesh.edge_valid[e] = False
            continue
        dist, foot, tri, region = ctx.cp.query(pts)
        n = foot - pts
        on = dist <= ctx.eps
        n = n / np.maximum(dist, 1e-300)[:, None]
        if np.any(on):
            n[on] = ctx.cp.normals_at(tri[on], region[on])
        # local scale: zero-radius feature spheres still need a usable
        # clustering band, so fall back to half the center distance
        sep = 0.5 * float(np.linalg.norm(spheres[i].center - spheres[j].center))
        radius = max(0.5 * (spheres[i].radius + spheres[j].radius), sep)
        ok = _face_covers_cell(ci, n, foot, tri, radius, ctx)
        if not ok:
            ok = _face_covers_cell(cj, n, foot, tri, radius, ctx)
        if not ok:
            mesh.edge_valid[e] = False

    eidx = mesh.edge_index()
    for f, (i, j, k) in enumerate(mesh.faces):
        if not mesh.face_valid[f]:
            continue
        for a, b in ((i, j), (i, k), (j, k)):
            e = eidx.get((int(a), int(b)))
            if e is None or not mesh.edge_valid[e]:
                mesh.face_valid[f] = False
                break
    return mesh


# ---------------------------------------------------------------------------
# thinness
# ---------------------------------------------------------------------------

def _face_quality(mesh: MedialMesh, f: int) -> float:
    i, j, k = (int(v) for v in mesh.faces[f])
    c = [mesh.spheres[v].center for v in (i, j, k)]
    return float(geom.frey_quality(c[0], c[1], c[2])[0])


def enforce_thinness(mesh: MedialMesh) -> tuple[MedialMesh, int]:
    """Open every dual 3-cell (4 spheres pairwise sharing valid faces) by
    removing its lowest-quality face; repeats until no pocket remains.
    Returns (mesh, number of faces removed)."""
    removed = 0
    while True:
        face_of = {}
        for f in np.flatnonzero(mesh.face_valid):
            face_of[tuple(int(v) for v in mesh.faces[f])] = int(f)
        opp: dict[tuple[int, int], set] = {}
        for (i, j, k) in face_of:
            opp.setdefault((i, j), set()).add(k)
            opp.setdefault((i, k), set()).add(j)
            opp.setdefault((j, k), set()).add(i)
        pocket = None
        for (i, j, k), f in sorted(face_of.items()):
            cand = (opp.get((i, j), set()) & opp.get((i, k), set())
                    & opp.get((j, k), set())) - {i, j, k}
            for l in sorted(cand):
                quad = tuple(sorted((i, j, k, l)))
                faces = [face_of.get(t) for t in
                         [tuple(sorted(c)) for c in
                          ((i, j, k), (i, j, l), (i, k, l), (j, k, l))]]
                if all(x is not None for x in faces):
                    pocket = faces
                    break
            if pocket:
                break
        if not pocket:
            break
        worst = min(pocket, key=lambda f: (_face_quality(mesh, f), f))
        mesh.face_valid[worst] = False
        removed += 1
    return mesh, removed


# ---------------------------------------------------------------------------
# sheets / seams / junctions
# ---------------------------------------------------------------------------

def extract_structure(mesh: MedialMesh) -> MedialMesh:
    """Fill sheet ids (components of valid faces glued along non-seam edges),
    seam polylines (chains of valid edges between seam-class spheres), and
    junction ids (T4 spheres and endpoints where >= 3 chains meet)."""
    klass = [s.klass for s in mesh.spheres]
    seam_node = {i for i, k in enumerate(klass) if k in SEAM_CLASSES}

    eidx = mesh.edge_index()
    seam_edges = [tuple(int(v) for v in e) for e in mesh.valid_edges()
                  if int(e[0]) in seam_node and int(e[1]) in seam_node]
    split = sorted(i for i in seam_node
                   if klass[i] in (cfg.T4_JUNCTION, cfg.T1_3_CORNER))
    mesh.seam_chains = geom.chain_edges(seam_edges, split_nodes=split) if seam_edges else []

    endpoint_count: dict[int, int] = {}
    for chain in mesh.seam_chains:
        if chain[0] == chain[-1]:
            continue
        for v in (chain[0], chain[-1]):
            endpoint_count[v] = endpoint_count.get(v, 0) + 1
    junctions = {i for i, k in enumerate(klass) if k == cfg.T4_JUNCTION}
    junctions |= {v for v, c in endpoint_count.items() if c >= 3}
    mesh.junction_ids = sorted(junctions)

    seam_edge_set = {(min(a, b), max(a, b)) for a, b in seam_edges}
    valid_face_idx = np.flatnonzero(mesh.face_valid)
    edge_faces: dict[tuple[int, int], list[int]] = {}
    for f in valid_face_idx:
        i, j, k = (int(v) for v in mesh.faces[f])
        for a, b in ((i, j), (i, k), (j, k)):
            edge_faces.setdefault((a, b), []).append(int(f))

    parent = {int(f): int(f) for f in valid_face_idx}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e, fs in edge_faces.items():
        if e in seam_edge_set:
            continue
        r = find(fs[0])
        for other in fs[1:]:
            parent[find(other)] = r
    mesh.sheet_id = -np.ones(len(mesh.faces), dtype=int)
    roots: dict[int, int] = {}
    for f in valid_face_idx:
        r = find(int(f))
        if r not in roots:
            roots[r] = len(roots)
        mesh.sheet_id[f] = roots[r]
    return mesh


def seam_junction_counts(spheres: list) -> tuple[int, int]:
    ks = [s.klass for s in spheres]
    return ks.count(cfg.T3_SEAM), ks.count(cfg.T4_JUNCTION)
