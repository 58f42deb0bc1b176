"""Volumetric restricted power diagram of a sphere set over a tet domain:
cell clipping with a security-radius candidate search, cell sampling with
surface projections, sub-volume clustering, and dual medial mesh extraction.

Cells are recomputed from scratch each pass so the partition invariant
(sum of cell volumes == domain volume) holds exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from . import config as cfg
from . import geom
from .geom import ConvexCellPiece, TAG_BOUNDARY, TAG_INTERNAL

log = logging.getLogger(__name__)


@dataclass
class Sphere:
    """A medial sphere; the unit of optimization."""

    center: np.ndarray
    radius: float
    klass: str = cfg.UNKNOWN
    pinned: bool = False

    def copy(self) -> "Sphere":
        return Sphere(self.center.copy(), float(self.radius), self.klass, self.pinned)


@dataclass
class Samples:
    """Volumetric samples of one cell with their surface projections."""

    x: np.ndarray        # (S, 3) sample positions
    foot: np.ndarray     # (S, 3) closest surface points
    n: np.ndarray        # (S, 3) unit direction sample -> footpoint
    w: np.ndarray        # (S,) represented volume per sample
    tri: np.ndarray      # (S,) footpoint triangle index
    dist: np.ndarray     # (S,) distance to surface

    def __len__(self) -> int:
        return len(self.x)


@dataclass
class PowerCell:
    """One sphere's restricted power cell."""

    sphere_id: int
    pieces: list = field(default_factory=list)
    neighbor_ids: list = field(default_factory=list)
    neighbor_areas: dict = field(default_factory=dict)   # sphere id -> bisector area
    samples: Optional[Samples] = None
    touches_boundary: bool = False

    def volume(self) -> float:
        return sum(geom.piece_volume(p) for p in self.pieces)

    def is_empty(self) -> bool:
        return not self.pieces

    def contains(self, points: np.ndarray, tol: float) -> np.ndarray:
        points = np.atleast_2d(points)
        inside = np.zeros(len(points), dtype=bool)
        for p in self.pieces:
            inside |= geom.piece_contains(p, points, tol)
        return inside


@dataclass
class MedialMesh:
    """Medial spheres + dual connectivity, annotated with structure."""

    spheres: list
    edges: np.ndarray                    # (E, 2) sorted index pairs
    faces: np.ndarray                    # (F, 3) sorted index triples
    edge_valid: np.ndarray
    face_valid: np.ndarray
    sheet_id: np.ndarray                 # per face, -1 until extracted
    seam_chains: list = field(default_factory=list)   # list[list[int]]
    junction_ids: list = field(default_factory=list)
    touches_boundary: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))

    def edge_index(self) -> dict:
        return {(int(a), int(b)): k for k, (a, b) in enumerate(self.edges)}

    def valid_edges(self) -> np.ndarray:
        return self.edges[self.edge_valid]

    def valid_faces(self) -> np.ndarray:
        return self.faces[self.face_valid]

    def euler_characteristic(self) -> int:
        ve = self.valid_edges()
        vf = self.valid_faces()
        used = set(int(i) for i in ve.ravel()) | set(int(i) for i in vf.ravel())
        return len(used) - len(ve) + len(vf)


@dataclass
class RpdContext:
    """Shared read-only context for RPD passes over one domain."""

    domain: object
    cp: geom.ClosestPointIndex
    config: cfg.PipelineConfig
    feature_segs: np.ndarray      # (M, 2, 3) convex-sharp polyline segments
    eps: float                    # eps_rel * bbox_diag

    @property
    def bbox_diag(self) -> float:
        return self.domain.bbox_diag


def make_context(domain, config: Optional[cfg.PipelineConfig] = None) -> RpdContext:
    config = config or cfg.PipelineConfig()
    segs = []
    for chain in domain.convex_polylines():
        pts = domain.vertices[chain]
        for a, b in zip(pts[:-1], pts[1:]):
            segs.append((a, b))
    segs = np.asarray(segs) if segs else np.empty((0, 2, 3))
    return RpdContext(domain=domain, cp=geom.build_closest_point_index(domain),
                      config=config, feature_segs=segs,
                      eps=config.eps_rel * domain.bbox_diag)


# ---------------------------------------------------------------------------
# RPD computation
# ---------------------------------------------------------------------------

def _drop_duplicates(centers: np.ndarray, radii: np.ndarray, eps: float) -> np.ndarray:
    """Mask of spheres to keep; exact coincident duplicates lose the higher index."""
    keep = np.ones(len(centers), dtype=bool)
    tree = cKDTree(centers)
    for i, j in sorted(tree.query_pairs(max(eps, 1e-300))):
        if abs(radii[i] - radii[j]) <= eps and keep[i] and keep[j]:
            keep[max(i, j)] = False
            log.warning("dropping duplicate sphere %d (coincides with %d)", max(i, j), min(i, j))
    return keep


def compute_rpd(domain, spheres: list, ctx: Optional[RpdContext] = None,
                workers: Optional[int] = None) -> list:
    """Restricted power cells of all spheres; cells exactly partition the domain.

    Each tet is clipped against bisector planes of power-distance competitors
    from a security-radius candidate set (KNN, doubled until the furthest
    candidate's bisector cannot cut the tet).
    """
    if ctx is None:
        ctx = make_context(domain)
    if workers is None:
        workers = ctx.config.workers
    if not spheres:
        raise ValueError("compute_rpd needs at least one sphere")
    n = len(spheres)
    centers = np.asarray([s.center for s in spheres], dtype=float)
    radii = np.asarray([s.radius for s in spheres], dtype=float)
    eps = ctx.eps

    keep = _drop_duplicates(centers, radii, eps)
    live = np.flatnonzero(keep)
    lc, lr = centers[live], radii[live]
    m = len(live)
    tree = cKDTree(lc)
    r_max = float(lr.max()) if m else 0.0
    w = np.einsum("ij,ij->i", lc, lc) - lr * lr   # power weight per live sphere

    boundary_keys = {tuple(sorted(map(int, t))): True for t in domain.boundary_tris}
    cells = [PowerCell(sphere_id=i) for i in range(n)]

    verts = domain.vertices
    tets = domain.tets
    tet_v = verts[tets]
    tet_c = tet_v.mean(axis=1)
    tet_R = np.sqrt(np.max(np.sum((tet_v - tet_c[:, None, :]) ** 2, axis=2), axis=1))

    def _tet_pieces(t: int) -> list:
        tv = tet_v[t]
        c, R = tet_c[t], tet_R[t]
        k = min(ctx.config.knn_rpd, m)
        while True:
            dists, cand = tree.query(c, k=k)
            dists = np.atleast_1d(dists)
            cand = np.atleast_1d(cand)
            if k >= m:
                break
            upper = float(np.min((dists + R) ** 2 - lr[cand] ** 2))
            d_far = dists[-1]
            lower = max(d_far - R, 0.0) ** 2 - r_max * r_max
            if lower > upper:
                break
            k = min(2 * k, m)

        # local candidate data, ordered by power distance at the tet center
        order = np.argsort(dists * dists - lr[cand] ** 2, kind="stable")
        cand = cand[order]
        cc = lc[cand]
        cw = w[cand]

        tags = []
        for loop in [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]]:
            key = tuple(sorted(int(tets[t][q]) for q in loop))
            tags.append(TAG_BOUNDARY if key in boundary_keys else TAG_INTERNAL)

        out_pieces: list = []
        seed = 0          # candidate position with minimal power at center
        queue = [seed]
        seen = {seed}
        while queue:
            a = queue.pop(0)
            ia = cand[a]
            # Bisector planes of ia vs every other candidate. The formula is
            # already canonical across the pair: IEEE negation is exact, so
            # cell j's plane against i is the bitwise mirror of i's against j.
            normals = 2.0 * (cc - cc[a])
            offsets = cw - cw[a]

            piece = geom.tet_piece(tv, tags, source_tet=t)
            cutters = []
            alive = True
            bc, bR = geom.piece_bounding_sphere(piece)
            nn = np.linalg.norm(normals, axis=1)
            skip = np.zeros(len(cand), dtype=bool)
            skip[a] = True
            reach = normals @ bc - offsets + bR * nn
            skip |= reach < -eps
            for b in range(len(cand)):
                if skip[b]:
                    continue
                piece2, cut = geom.clip_convex_ex(piece, normals[b], float(offsets[b]),
                                                  int(live[cand[b]]), eps)
                if piece2 is None:
                    alive = False
                    break
                if cut:
                    cutters.append(b)
                    piece = piece2
                    bc, bR = geom.piece_bounding_sphere(piece)
                    reach = normals @ bc - offsets + bR * nn
                    skip |= reach < -eps
                else:
                    piece = piece2
            if alive and geom.piece_volume(piece) > 0.0:
                out_pieces.append((int(live[ia]), piece))
                for b in cutters:
                    if b not in seen:
                        seen.add(b)
                        queue.append(b)
        return out_pieces

    n_tets = len(tets)
    if workers > 1 and n_tets > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_tet_pieces, range(n_tets), chunksize=max(1, n_tets // (4 * workers))))
    else:
        results = [_tet_pieces(t) for t in range(n_tets)]
    for per_tet in results:
        for gid, piece in per_tet:
            cells[gid].pieces.append(piece)

    # neighbor areas and boundary flags
    for cell in cells:
        areas: dict[int, float] = {}
        touches = False
        for piece in cell.pieces:
            for fi, tag in enumerate(piece.clip_tags):
                if tag >= 0:
                    a, _ = geom.face_area_centroid(piece, fi)
                    areas[tag] = areas.get(tag, 0.0) + a
                elif tag == TAG_BOUNDARY:
                    touches = True
        cell.neighbor_areas = areas
        cell.neighbor_ids = sorted(j for j, a in areas.items() if a > eps * eps)
        cell.touches_boundary = touches
    return cells


# ---------------------------------------------------------------------------
# cell sampling
# ---------------------------------------------------------------------------

def _fan_tets(piece: ConvexCellPiece) -> tuple[np.ndarray, np.ndarray]:
    """Tetrahedra (apex at the piece centroid) covering the piece; returns
    (tets (T,4,3), volumes (T,))."""
    ctr = piece.vertices.mean(axis=0)
    tets = []
    for loop in piece.faces:
        v = piece.vertices[loop]
        for a, b in zip(loop[1:-1], loop[2:]):
            tets.append((ctr, piece.vertices[loop[0]], piece.vertices[a], piece.vertices[b]))
    tets = np.asarray(tets)
    vols = np.abs(np.einsum("ij,ij->i", tets[:, 1] - tets[:, 0],
                            np.cross(tets[:, 2] - tets[:, 0], tets[:, 3] - tets[:, 0]))) / 6.0
    return tets, vols


def _uniform_in_tets(tets: np.ndarray, counts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    total = int(counts.sum())
    if total == 0:
        return np.empty((0, 3))
    rep = np.repeat(np.arange(len(tets)), counts)
    s, t, u = rng.random((3, total))
    m = s + t > 1
    s[m], t[m] = 1 - s[m], 1 - t[m]
    m = t + u > 1
    t2 = 1 - u[m]
    u2 = 1 - s[m] - t[m]
    t[m], u[m] = t2, u2
    m2 = (~m) & (s + t + u > 1)
    s2 = 1 - t[m2] - u[m2]
    u3 = s[m2] + t[m2] + u[m2] - 1
    s[m2], u[m2] = s2, u3
    a = tets[rep, 0]
    return (a + s[:, None] * (tets[rep, 1] - a) + t[:, None] * (tets[rep, 2] - a)
            + u[:, None] * (tets[rep, 3] - a))


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Deterministic integer allocation proportional to weights."""
    if weights.sum() <= 0:
        out = np.zeros(len(weights), dtype=int)
        out[: total] = 1
        return out
    quota = weights / weights.sum() * total
    base = np.floor(quota).astype(int)
    rem = total - int(base.sum())
    if rem > 0:
        order = np.lexsort((np.arange(len(weights)), -(quota - base)))
        base[order[:rem]] += 1
    return base


def sample_positions(cell: PowerCell, ctx: RpdContext, rng: np.random.Generator):
    """Sample positions + represented volumes for one cell (no projections yet)."""
    conf = ctx.config
    vols = np.asarray([geom.piece_volume(p) for p in cell.pieces])
    total_target = max(conf.samples_per_cell, conf.min_samples_per_cell,
                       conf.samples_per_piece * len(cell.pieces))
    per_piece = np.maximum(_largest_remainder(vols, total_target), conf.samples_per_piece)
    xs, ws = [], []
    for piece, vol, cnt in zip(cell.pieces, vols, per_piece):
        tets, tvols = _fan_tets(piece)
        bary = np.einsum("t,td->d", tvols, tets.mean(axis=1)) / max(tvols.sum(), 1e-300)
        pts = [bary[None, :]]
        if cnt > 1:
            alloc = _largest_remainder(tvols, int(cnt) - 1)
            pts.append(_uniform_in_tets(tets, alloc, rng))
        pts = np.vstack(pts)
        xs.append(pts)
        ws.append(np.full(len(pts), vol / len(pts)))
    return np.vstack(xs), np.concatenate(ws)


def _attach_projections(x: np.ndarray, w: np.ndarray, ctx: RpdContext) -> Samples:
    dist, foot, tri, region = ctx.cp.query(x)
    n = foot - x
    on_surface = dist <= ctx.eps
    safe = np.where(on_surface, 1.0, dist)
    n = n / safe[:, None]
    if np.any(on_surface):
        # continuity limit of (foot - x)/|foot - x| as x approaches the wall
        n[on_surface] = ctx.cp.normals_at(tri[on_surface], region[on_surface])
    return Samples(x=x, foot=foot, n=n, w=w, tri=tri, dist=dist)


def sample_cell(cell: PowerCell, ctx: RpdContext, rng: np.random.Generator) -> PowerCell:
    """Fill ``cell.samples``: piece barycenters + stratified interior points
    (count proportional to piece volume), each with footpoint and direction."""
    if cell.is_empty():
        raise ValueError(f"cell {cell.sphere_id} is empty; cannot sample")
    x, w = sample_positions(cell, ctx, rng)
    cell.samples = _attach_projections(x, w, ctx)
    return cell


def sample_all(cells: list, ctx: RpdContext, rng: np.random.Generator) -> None:
    """Sample every non-empty cell; one batched closest-point query."""
    xs, ws, owners = [], [], []
    for cell in cells:
        if cell.is_empty():
            cell.samples = None
            continue
        x, w = sample_positions(cell, ctx, rng)
        xs.append(x)
        ws.append(w)
        owners.append((cell, len(x)))
    if not xs:
        return
    allx = np.vstack(xs)
    allw = np.concatenate(ws)
    samples = _attach_projections(allx, allw, ctx)
    k = 0
    for cell, cnt in owners:
        sl = slice(k, k + cnt)
        cell.samples = Samples(x=samples.x[sl], foot=samples.foot[sl], n=samples.n[sl],
                               w=samples.w[sl], tri=samples.tri[sl], dist=samples.dist[sl])
        k += cnt


# ---------------------------------------------------------------------------
# sub-volume clustering
# ---------------------------------------------------------------------------

def _point_segment_distance(points: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Min distance from each point to any segment; (P,) for (P,3) x (M,2,3)."""
    if len(segs) == 0:
        return np.full(len(points), np.inf)
    a, b = segs[:, 0], segs[:, 1]
    ab = b - a
    denom = np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-300)
    ap = points[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("pmd,md->pm", ap, ab) / denom, 0.0, 1.0)
    proj = a[None, :, :] + t[..., None] * ab[None, :, :]
    d = np.linalg.norm(points[:, None, :] - proj, axis=2)
    return d.min(axis=1)


def _segment_segment_distance(p1: np.ndarray, p2: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Min distance from each segment (p1[k], p2[k]) to any polyline segment."""
    if len(segs) == 0:
        return np.full(len(p1), np.inf)
    q1, q2 = segs[:, 0], segs[:, 1]
    d1 = (p2 - p1)[:, None, :]
    d2 = (q2 - q1)[None, :, :]
    r = p1[:, None, :] - q1[None, :, :]
    a = np.einsum("pmd,pmd->pm", d1, np.broadcast_to(d1, r.shape))
    e = np.einsum("pmd,pmd->pm", np.broadcast_to(d2, r.shape), d2)
    f = np.einsum("pmd,pmd->pm", np.broadcast_to(d2, r.shape), r)
    c = np.einsum("pmd,pmd->pm", np.broadcast_to(d1, r.shape), r)
    b = np.einsum("pmd,pmd->pm", np.broadcast_to(d1, r.shape), d2)
    denom = a * e - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 1e-300, np.clip((b * f - c * e) / denom, 0.0, 1.0), 0.0)
        t = np.where(e > 1e-300, (b * s + f) / e, 0.0)
        s = np.where(t < 0, np.where(a > 1e-300, np.clip(-c / a, 0, 1), 0.0), s)
        s = np.where(t > 1, np.where(a > 1e-300, np.clip((b - c) / a, 0, 1), 0.0), s)
    t = np.clip(t, 0.0, 1.0)
    cp1 = p1[:, None, :] + s[..., None] * d1
    cp2 = q1[None, :, :] + t[..., None] * d2
    return np.linalg.norm(cp1 - cp2, axis=2).min(axis=1)


def cluster_samples(n_dirs: np.ndarray, foots: np.ndarray, out_normals: np.ndarray,
                    radius: float, ctx: RpdContext) -> list:
    """Partition samples into sub-volume clusters.

    Two samples join when they are not separated by a convex-sharp feature
    polyline AND (their directions agree within theta_cluster OR their
    footpoints are within delta_cluster). A pair counts as separated when the
    segment between the footpoints passes within delta/2 of a feature
    polyline while the footpoint wall normals differ by more than phi.
    """
    theta = np.radians(ctx.config.theta_cluster_deg)
    delta = 2.0 * radius * np.sin(theta / 2.0)
    cos_theta = np.cos(theta)
    angle_ok = n_dirs @ n_dirs.T > cos_theta
    fd = foots[:, None, :] - foots[None, :, :]
    prox_ok = np.einsum("abd,abd->ab", fd, fd) < delta * delta

    join = angle_ok | prox_ok
    if len(ctx.feature_segs):
        cos_phi = np.cos(np.radians(ctx.config.phi_deg))
        wall_differs = out_normals @ out_normals.T < cos_phi
        suspicious = join & wall_differs
        ia, ib = np.nonzero(np.triu(suspicious, k=1))
        if len(ia):
            cross = _segment_segment_distance(foots[ia], foots[ib], ctx.feature_segs)
            sep = cross < max(delta / 2.0, ctx.eps)
            join[ia[sep], ib[sep]] = False
            join[ib[sep], ia[sep]] = False
    n_comp, labels = connected_components(csr_matrix(join), directed=False)
    clusters = [np.flatnonzero(labels == c) for c in range(n_comp)]
    clusters.sort(key=lambda idx: (-len(idx), int(idx[0])))
    return clusters


def significant_clusters(clusters: list, noise_frac: float = 0.03) -> list:
    """Clusters large enough to count as sub-volumes: at least 2 samples and
    noise_frac of the total. Grazing single-sample clusters otherwise flip
    sheet spheres into fake seams."""
    total = sum(len(c) for c in clusters)
    cut = max(2, int(np.ceil(noise_frac * total)))
    out = [c for c in clusters if len(c) >= cut]
    return out if out else clusters[:1]


def subvolume_clusters(cell: PowerCell, ctx: RpdContext,
                       radius: Optional[float] = None) -> list:
    """Sub-volume clusters of a sampled cell, sorted by size descending.

    ``radius`` is the local sphere radius driving the footpoint proximity
    threshold; defaults to the median sample distance when not supplied.
    """
    if cell.samples is None or len(cell.samples) == 0:
        raise ValueError(f"cell {cell.sphere_id} has no samples")
    sm = cell.samples
    out_normals = ctx.cp.tri_normals[sm.tri]
    if radius is None:
        radius = float(np.median(sm.dist))
    return cluster_samples(sm.n, sm.foot, out_normals, radius, ctx)


# ---------------------------------------------------------------------------
# dual extraction
# ---------------------------------------------------------------------------

def _resolve_degenerate_triples(faces: list, triple_seg: dict, spheres: list,
                                ctx: RpdContext) -> list:
    """Where >= 4 cells meet along one power edge (regular configurations),
    every sub-triple fires and the dual gets both quad diagonals. Bundle
    triples sharing the same segment and fan-triangulate the cell polygon
    around the line instead."""
    q = 1e-5 * ctx.bbox_diag
    buckets: dict[tuple[int, int, int], list[int]] = {}
    for t, key in enumerate(faces):
        seg = triple_seg.get(key)
        if seg is None:
            continue
        mid = seg[0]
        buckets.setdefault(tuple(int(np.floor(v / q)) for v in mid), []).append(t)

    parent = list(range(len(faces)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for bkey, ts in buckets.items():
        group = list(ts)
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    if (dx, dy, dz) != (0, 0, 0):
                        group += buckets.get((bkey[0] + dx, bkey[1] + dy, bkey[2] + dz), [])
        for a in ts:
            ma, da = triple_seg[faces[a]]
            for b in group:
                if b <= a:
                    continue
                mb, _ = triple_seg[faces[b]]
                if float(np.linalg.norm(ma - mb)) < q:
                    ra, rb = find(a), find(b)
                    if ra != rb:
                        parent[max(ra, rb)] = min(ra, rb)

    groups: dict[int, list[int]] = {}
    for t in range(len(faces)):
        groups.setdefault(find(t), []).append(t)

    out = []
    for ts in groups.values():
        ids = sorted({v for t in ts for v in faces[t]})
        if len(ids) <= 3 or len(ts) == 1:
            out.extend(faces[t] for t in ts)
            continue
        mid, axis = triple_seg[faces[ts[0]]]
        nrm = np.linalg.norm(axis)
        if nrm == 0:
            out.extend(faces[t] for t in ts)
            continue
        axis = axis / nrm
        ref = np.array([1.0, 0.0, 0.0])
        if abs(axis @ ref) > 0.9:
            ref = np.array([0.0, 1.0, 0.0])
        b1 = np.cross(axis, ref)
        b1 /= np.linalg.norm(b1)
        b2 = np.cross(axis, b1)
        rel = np.asarray([spheres[i].center for i in ids]) - mid
        ang = np.arctan2(rel @ b2, rel @ b1)
        order = [ids[k] for k in np.argsort(ang, kind="stable")]
        start = order.index(min(ids))
        cyc = order[start:] + order[:start]
        for a, b in zip(cyc[1:-1], cyc[2:]):
            out.append(tuple(sorted((cyc[0], a, b))))
    return sorted(set(out))


def dual_medial_mesh(cells: list, spheres: list, ctx: RpdContext) -> MedialMesh:
    """Medial mesh as the dual of the RPD: edges from shared bisector faces,
    faces from shared power-edge segments."""
    eps = ctx.eps
    edge_area: dict[tuple[int, int], float] = {}
    for cell in cells:
        i = cell.sphere_id
        for j, a in cell.neighbor_areas.items():
            key = (min(i, j), max(i, j))
            edge_area[key] = max(edge_area.get(key, 0.0), a)

    triple_len: dict[tuple[int, int, int], float] = {}
    triple_seg: dict[tuple[int, int, int], tuple[np.ndarray, np.ndarray]] = {}
    for cell in cells:
        i = cell.sphere_id
        local: dict[tuple[int, int, int], float] = {}
        for piece in cell.pieces:
            btags = [(fi, tag) for fi, tag in enumerate(piece.clip_tags) if tag >= 0]
            for a in range(len(btags)):
                fa, ja = btags[a]
                sa = set(piece.faces[fa])
                for b in range(a + 1, len(btags)):
                    fb, jb = btags[b]
                    if ja == jb:
                        continue
                    shared = sa.intersection(piece.faces[fb])
                    if len(shared) >= 2:
                        pts = piece.vertices[sorted(shared)]
                        d = pts[:, None, :] - pts[None, :, :]
                        d2 = np.einsum("abd,abd->ab", d, d)
                        am = int(np.argmax(d2))
                        seg = float(np.sqrt(d2.flat[am]))
                        key = tuple(sorted((i, ja, jb)))
                        local[key] = local.get(key, 0.0) + seg
                        if seg > 0 and (key not in triple_seg or seg > triple_len.get(key, 0.0)):
                            pa, pb = pts[am // len(pts)], pts[am % len(pts)]
                            triple_seg[key] = (0.5 * (pa + pb), pb - pa)
        for key, ln in local.items():
            triple_len[key] = max(triple_len.get(key, 0.0), ln)

    faces = sorted(k for k, ln in triple_len.items() if ln > eps)
    faces = _resolve_degenerate_triples(faces, triple_seg, spheres, ctx)

    edges = sorted(k for k, a in edge_area.items() if a > eps * eps)
    edge_set = set(edges)
    for (i, j, k) in faces:
        for e in ((i, j), (i, k), (j, k)):
            if e not in edge_set:
                edge_set.add(e)
                edges.append(e)
    edges = sorted(edges)

    e_arr = np.asarray(edges, dtype=int).reshape(-1, 2)
    f_arr = np.asarray(faces, dtype=int).reshape(-1, 3)
    touches = np.zeros(len(spheres), dtype=bool)
    for cell in cells:
        touches[cell.sphere_id] = cell.touches_boundary
    return MedialMesh(spheres=spheres, edges=e_arr, faces=f_arr,
                      edge_valid=np.ones(len(e_arr), dtype=bool),
                      face_valid=np.ones(len(f_arr), dtype=bool),
                      sheet_id=-np.ones(len(f_arr), dtype=int),
                      touches_boundary=touches)


# ---------------------------------------------------------------------------
# debug export
# ---------------------------------------------------------------------------

def dump_cells_ply(cells: list, path) -> None:
    """Polygon soup of all cell faces with the neighbor tag per face."""
    verts: list[np.ndarray] = []
    faces: list[tuple[list[int], int, int]] = []
    for cell in cells:
        for piece in cell.pieces:
            base = len(verts)
            verts.extend(piece.vertices)
            for loop, tag in zip(piece.faces, piece.clip_tags):
                faces.append(([base + v for v in loop], tag, cell.sphere_id))
    lines = ["ply", "format ascii 1.0", f"element vertex {len(verts)}",
             "property float x", "property float y", "property float z",
             f"element face {len(faces)}",
             "property list uchar int vertex_indices",
             "property int neighbor_tag", "property int cell_id", "end_header"]
    for v in verts:
        lines.append(f"{v[0]} {v[1]} {v[2]}")
    for loop, tag, cid in faces:
        lines.append(f"{len(loop)} " + " ".join(str(i) for i in loop) + f" {tag} {cid}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
