"""Evaluation metrics for a medial mesh against its input surface: medial
structure error ratio (fraction of seam/junction spheres whose recovered
tangent counts contradict their class), Frey triangle quality, the Euler
characteristic check, and the two-sided Hausdorff distance between the
boundary and the interpolated sphere envelope."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from . import config as cfg
from . import geom
from .rpd import MedialMesh, RpdContext, cluster_samples

SHEET_LIKE = (cfg.T2_SHEET,)


# ---------------------------------------------------------------------------
# tangent recovery
# ---------------------------------------------------------------------------

def recover_tangents_batch(centers: np.ndarray, radii: np.ndarray, ctx: RpdContext,
                           max_steps: int = 10, step_ratio: float = 0.01,
                           angle_deg: Optional[float] = None):
    """First tangent from the closest point; a second tangent by shifting the
    center along the negative normal direction (10 steps of 0.01 r), accepted
    when its direction differs from the first by the clustering angle.

    Returns (tangent points list, tangent tri list, found_second mask)."""
    angle = math.radians(angle_deg if angle_deg is not None else ctx.config.theta_cluster_deg)
    cos_a = math.cos(angle)
    n = len(centers)
    d0, p1, t1, _ = ctx.cp.query(centers)
    safe = np.maximum(d0, 1e-300)
    u1 = (p1 - centers) / safe[:, None]
    tangents = [[p1[k]] for k in range(n)]
    tri_lists = [[int(t1[k])] for k in range(n)]
    found = np.zeros(n, dtype=bool)
    degenerate = d0 <= ctx.eps
    active = ~degenerate
    for step in range(1, max_steps + 1):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        shift = centers[idx] - step * step_ratio * radii[idx, None] * u1[idx]
        d, p2, t2, _ = ctx.cp.query(shift)
        u2 = p2 - centers[idx]
        nn = np.linalg.norm(u2, axis=1)
        u2 = u2 / np.maximum(nn, 1e-300)[:, None]
        distinct = np.einsum("ij,ij->i", u1[idx], u2) < cos_a
        hit = idx[distinct]
        for k, g in zip(hit, np.flatnonzero(distinct)):
            tangents[k].append(p2[g])
            tri_lists[k].append(int(t2[g]))
        found[hit] = True
        active[hit] = False
    return tangents, tri_lists, found


def recover_second_tangent(sphere, ctx: RpdContext, max_steps: int = 10):
    """Tangent list for one sphere; no second tangent after the step budget
    marks the sphere as a T1 spike (returned flag)."""
    tangents, tris, found = recover_tangents_batch(
        np.asarray(sphere.center, dtype=float)[None, :],
        np.asarray([sphere.radius], dtype=float), ctx, max_steps=max_steps)
    pts = [geom.SurfacePoint(position=p, normal=ctx.cp.tri_normals[t], tri_index=t)
           for p, t in zip(tangents[0], tris[0])]
    return pts, bool(found[0])


# ---------------------------------------------------------------------------
# MSER
# ---------------------------------------------------------------------------

def _subdivide(mesh: MedialMesh, ctx: RpdContext, sigma: float, max_rounds: int = 4):
    """Uniform 4-way split of valid faces until the longest face edge is
    <= 2 sigma. Returns (centers, radii, klass list, is_subdiv, adjacency)."""
    centers = [np.asarray(s.center, dtype=float) for s in mesh.spheres]
    radii = [float(s.radius) for s in mesh.spheres]
    klass = [s.klass for s in mesh.spheres]
    is_subdiv = [False] * len(centers)
    faces = [tuple(int(v) for v in f) for f in mesh.valid_faces()]
    extra_edges = {tuple(int(v) for v in e) for e in mesh.valid_edges()}

    def max_edge():
        m = 0.0
        for i, j, k in faces:
            for a, b in ((i, j), (i, k), (j, k)):
                m = max(m, float(np.linalg.norm(centers[a] - centers[b])))
        return m

    rounds = 0
    new_positions: list[int] = []
    while faces and max_edge() > 2.0 * sigma and rounds < max_rounds:
        rounds += 1
        cache: dict[tuple[int, int], int] = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            v = cache.get(key)
            if v is None:
                v = len(centers)
                centers.append(0.5 * (centers[a] + centers[b]))
                radii.append(0.5 * (radii[a] + radii[b]))
                klass.append(cfg.T2_SHEET)
                is_subdiv.append(True)
                new_positions.append(v)
                cache[key] = v
            return v

        out = []
        for i, j, k in faces:
            mij, mik, mjk = mid(i, j), mid(i, k), mid(j, k)
            out += [(i, mij, mik), (j, mjk, mij), (k, mik, mjk), (mij, mjk, mik)]
        faces = out

    if new_positions:
        pts = np.asarray([centers[v] for v in new_positions])
        d, _, _, _ = ctx.cp.query(pts)
        for v, dv in zip(new_positions, d):
            radii[v] = float(dv)

    adj: dict[int, set] = {}
    for i, j, k in faces:
        for a, b in ((i, j), (i, k), (j, k)):
            adj.setdefault(a, set()).add(b)
            adj.setdefault(b, set()).add(a)
    for a, b in extra_edges:
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    return (np.asarray(centers), np.asarray(radii), klass,
            np.asarray(is_subdiv, dtype=bool), adj)


def mser(mesh: MedialMesh, ctx: RpdContext, sigma: Optional[float] = None) -> float:
    """Misclassified seam+junction ratio. A seam sphere is correct when the
    tangents aggregated from its neighboring sheet spheres cluster into >= 3
    regions, exceeding every neighbor's own count; junctions need >= 4.
    No seam/junction spheres gives 0 by convention."""
    klass0 = [s.klass for s in mesh.spheres]
    seam_ids = [i for i, k in enumerate(klass0) if k == cfg.T3_SEAM]
    junc_ids = [i for i, k in enumerate(klass0) if k == cfg.T4_JUNCTION]
    total = len(seam_ids) + len(junc_ids)
    if total == 0:
        return 0.0
    if sigma is None:
        sigma = 0.02 * ctx.bbox_diag
    centers, radii, klass, is_subdiv, adj = _subdivide(mesh, ctx, sigma)

    sheet_like = np.asarray([(k in SHEET_LIKE) or sd
                             for k, sd in zip(klass, is_subdiv)], dtype=bool)
    sheet_ids = np.flatnonzero(sheet_like)
    tangents = {}
    tri_lists = {}
    counts = {}
    if len(sheet_ids):
        tg, tl, _ = recover_tangents_batch(centers[sheet_ids], radii[sheet_ids], ctx)
        for k, i in enumerate(sheet_ids):
            tangents[int(i)] = tg[k]
            tri_lists[int(i)] = tl[k]
            counts[int(i)] = len(tg[k])

    mis = 0
    for i in seam_ids + junc_ids:
        nbrs = [v for v in sorted(adj.get(i, ())) if sheet_like[v]]
        agg_p, agg_t = [], []
        nbr_max = 0
        for v in nbrs:
            agg_p.extend(tangents.get(v, ()))
            agg_t.extend(tri_lists.get(v, ()))
            nbr_max = max(nbr_max, counts.get(v, 0))
        need = 3 if klass0[i] == cfg.T3_SEAM else 4
        if not agg_p:
            mis += 1
            continue
        pts = np.asarray(agg_p)
        tri = np.asarray(agg_t, dtype=int)
        dirs = pts - centers[i]
        dirs = dirs / np.maximum(np.linalg.norm(dirs, axis=1), 1e-300)[:, None]
        clusters = cluster_samples(dirs, pts, ctx.cp.tri_normals[tri],
                                   float(radii[i]), ctx)
        count = len(clusters)
        if not (count >= need and count > nbr_max):
            mis += 1
    return mis / total


# ---------------------------------------------------------------------------
# triangle quality
# ---------------------------------------------------------------------------

def triangle_quality(mesh: MedialMesh) -> tuple[float, np.ndarray]:
    """Average and per-face Frey quality over valid faces."""
    vf = mesh.valid_faces()
    if len(vf) == 0:
        return 0.0, np.empty(0)
    c = np.asarray([s.center for s in mesh.spheres])
    q = geom.frey_quality(c[vf[:, 0]], c[vf[:, 1]], c[vf[:, 2]])
    return float(q.mean()), q


# ---------------------------------------------------------------------------
# topology error
# ---------------------------------------------------------------------------

def ter(mesh: MedialMesh, domain) -> int:
    """0 when the valid medial mesh has the Euler characteristic the solid
    demands (chi(boundary)/2, by homotopy equivalence), else 1."""
    expected = domain.boundary_euler() // 2
    return 0 if mesh.euler_characteristic() == expected else 1


# ---------------------------------------------------------------------------
# Hausdorff distance to the interpolated envelope
# ---------------------------------------------------------------------------

@dataclass
class _BallCloud:
    centers: np.ndarray
    radii: np.ndarray
    tree: cKDTree
    r_max: float


def _envelope_balls(mesh: MedialMesh, bbd: float) -> _BallCloud:
    """Discretize the interpolated envelope: barycentric grids on valid faces,
    linear interpolation on face-free valid edges, plus every sphere."""
    spacing = 0.005 * bbd
    C = np.asarray([s.center for s in mesh.spheres])
    R = np.asarray([s.radius for s in mesh.spheres])
    balls_c = [C]
    balls_r = [R]
    vf = mesh.valid_faces()
    face_edges = set()
    for i, j, k in vf:
        for a, b in ((int(i), int(j)), (int(i), int(k)), (int(j), int(k))):
            face_edges.add((min(a, b), max(a, b)))
    for i, j, k in vf:
        tri = C[[i, j, k]]
        e = max(np.linalg.norm(tri[0] - tri[1]), np.linalg.norm(tri[1] - tri[2]),
                np.linalg.norm(tri[2] - tri[0]))
        n = int(np.clip(math.ceil(e / spacing), 1, 24))
        ws = []
        for a in range(n + 1):
            for b in range(n + 1 - a):
                ws.append((a / n, b / n, (n - a - b) / n))
        w = np.asarray(ws)
        balls_c.append(w @ tri)
        balls_r.append(w @ R[[i, j, k]])
    for e_i, (i, j) in enumerate(mesh.edges):
        if not mesh.edge_valid[e_i]:
            continue
        key = (min(int(i), int(j)), max(int(i), int(j)))
        if key in face_edges:
            continue
        e = np.linalg.norm(C[int(i)] - C[int(j)])
        n = int(np.clip(math.ceil(e / spacing), 1, 48))
        t = np.linspace(0.0, 1.0, n + 1)[:, None]
        balls_c.append(C[int(i)] * (1 - t) + C[int(j)] * t)
        balls_r.append(R[int(i)] * (1 - t[:, 0]) + R[int(j)] * t[:, 0])
    centers = np.vstack(balls_c)
    radii = np.concatenate(balls_r)
    return _BallCloud(centers=centers, radii=radii, tree=cKDTree(centers),
                      r_max=float(radii.max()) if len(radii) else 0.0)


def _union_signed(points: np.ndarray, cloud: _BallCloud) -> np.ndarray:
    """min over interpolated spheres of (distance to center - radius):
    the signed distance to the envelope (negative inside)."""
    n_balls = len(cloud.radii)
    out = np.full(len(points), np.inf)
    unresolved = np.arange(len(points))
    k = 32
    while len(unresolved):
        kq = min(k, n_balls)
        d, idx = cloud.tree.query(points[unresolved], k=kq)
        d = np.atleast_2d(d)
        idx = np.atleast_2d(idx)
        phi = (d - cloud.radii[idx]).min(axis=1)
        if kq >= n_balls:
            out[unresolved] = phi
            break
        exact = phi <= d[:, -1] - cloud.r_max
        out[unresolved[exact]] = phi[exact]
        unresolved = unresolved[~exact]
        k *= 2
    return out


def hausdorff(mesh: MedialMesh, ctx: RpdContext, n_samples: Optional[int] = None,
              rng: Optional[np.random.Generator] = None) -> dict:
    """Two-sided Hausdorff distance between the boundary surface and the
    envelope of the union of interpolated spheres, as % of bbox_diag.
    One direction samples the surface; the other samples the envelope by
    rejection (random sphere point kept iff not strictly inside the union)."""
    if len(mesh.valid_edges()) == 0 and len(mesh.valid_faces()) == 0 and len(mesh.spheres) == 0:
        raise ValueError("empty medial mesh")
    conf = ctx.config
    n = n_samples if n_samples is not None else conf.hd_samples
    rng = rng if rng is not None else np.random.default_rng(conf.seed)
    bbd = ctx.bbox_diag
    cloud = _envelope_balls(mesh, bbd)

    surf = geom.uniform_surface_samples(ctx.domain, n, rng)
    d_surf_env = float(np.max(np.abs(_union_signed(surf, cloud))))

    live = cloud.radii > 1e-12 * bbd
    weights = cloud.radii[live] ** 2
    d_env_surf = 0.0
    if weights.sum() > 0:
        pick = rng.choice(np.flatnonzero(live), size=n, p=weights / weights.sum())
        u = rng.normal(size=(n, 3))
        u /= np.maximum(np.linalg.norm(u, axis=1), 1e-300)[:, None]
        x = cloud.centers[pick] + cloud.radii[pick, None] * u
        phi = _union_signed(x, cloud)
        keep = phi >= -1e-6 * bbd
        if np.any(keep):
            d, _, _, _ = ctx.cp.query(x[keep])
            d_env_surf = float(d.max())
    hd = max(d_surf_env, d_env_surf)
    return {"hd_pct": 100.0 * hd / bbd,
            "d_surface_to_envelope": d_surf_env,
            "d_envelope_to_surface": d_env_surf,
            "envelope_balls": int(len(cloud.radii))}


# ---------------------------------------------------------------------------
# combined report
# ---------------------------------------------------------------------------

def metrics_report(mesh: MedialMesh, ctx: RpdContext, sigma: Optional[float] = None,
                   n_samples: Optional[int] = None,
                   rng: Optional[np.random.Generator] = None) -> dict:
    tq_avg, tq = triangle_quality(mesh)
    hd = hausdorff(mesh, ctx, n_samples=n_samples, rng=rng)
    klass = [s.klass for s in mesh.spheres]
    report = {
        "mser": mser(mesh, ctx, sigma),
        "tq_avg": tq_avg,
        "tq_p85": float(np.percentile(tq, 85)) if len(tq) else 0.0,
        "tq_p90": float(np.percentile(tq, 90)) if len(tq) else 0.0,
        "ter": ter(mesh, ctx.domain),
        "euler_characteristic": mesh.euler_characteristic(),
        "expected_euler": ctx.domain.boundary_euler() // 2,
        **hd,
        "n_spheres": len(mesh.spheres),
        "n_valid_edges": int(mesh.edge_valid.sum()),
        "n_valid_faces": int(mesh.face_valid.sum()),
        "n_seam_spheres": klass.count(cfg.T3_SEAM),
        "n_junction_spheres": klass.count(cfg.T4_JUNCTION),
        "n_sheets": int(mesh.sheet_id.max() + 1) if len(mesh.sheet_id) else 0,
        "n_seam_chains": len(mesh.seam_chains),
    }
    return report
