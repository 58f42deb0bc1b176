"""Shared geometry primitives: convex clipping, closest-point queries on the
boundary surface, Poisson-disk pin sampling, and KNN.

All operations are pure; the closest-point index is read-only after build.
Plane-side tests use the global tolerance ``eps_rel * bbox_diag`` (single knob,
see config.PipelineConfig.eps_rel).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

# Face tags on clipped convex pieces. Non-negative tags are the id of the
# sphere whose bisector produced the face.
TAG_BOUNDARY = -1   # face lies on the domain boundary surface
TAG_INTERNAL = -2   # face is interior to the tet decomposition


@dataclass
class SurfacePoint:
    """A point on the boundary surface with its outward unit normal."""

    position: np.ndarray
    normal: np.ndarray
    tri_index: int


@dataclass
class ConvexCellPiece:
    """One convex fragment of a restricted power cell.

    ``faces`` are loops of indices into ``vertices``, ordered so the face
    normal points out of the piece. ``clip_tags`` parallels ``faces``.
    """

    vertices: np.ndarray                 # (V, 3)
    faces: list = field(default_factory=list)   # list[list[int]]
    clip_tags: list = field(default_factory=list)  # list[int]
    source_tet: int = -1


def _row_dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("...i,...i->...", a, b)


# ---------------------------------------------------------------------------
# convex piece construction and measures
# ---------------------------------------------------------------------------

def tet_piece(verts: np.ndarray, face_tags: Sequence[int], source_tet: int = -1) -> ConvexCellPiece:
    """Piece covering one tetrahedron. ``verts`` is (4,3) positively oriented;
    face_tags gives the tag of the face opposite each vertex."""
    # Outward-oriented faces opposite vertices 0..3 of a positive tet.
    loops = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]]
    return ConvexCellPiece(
        vertices=np.asarray(verts, dtype=float).copy(),
        faces=[list(l) for l in loops],
        clip_tags=list(face_tags),
        source_tet=source_tet,
    )


def piece_volume(piece: ConvexCellPiece) -> float:
    """Volume by the divergence theorem over outward-oriented faces."""
    v = piece.vertices
    total = 0.0
    for loop in piece.faces:
        p0 = v[loop[0]]
        for a, b in zip(loop[1:-1], loop[2:]):
            total += np.dot(p0, np.cross(v[a], v[b]))
    return total / 6.0


def face_area_centroid(piece: ConvexCellPiece, fi: int) -> tuple[float, np.ndarray]:
    v = piece.vertices
    loop = piece.faces[fi]
    p0 = v[loop[0]]
    area2 = np.zeros(3)
    cw = np.zeros(3)
    tot = 0.0
    for a, b in zip(loop[1:-1], loop[2:]):
        cr = np.cross(v[a] - p0, v[b] - p0)
        w = np.linalg.norm(cr)
        area2 += cr
        cw += w * (p0 + v[a] + v[b]) / 3.0
        tot += w
    area = 0.5 * np.linalg.norm(area2)
    centroid = cw / tot if tot > 0 else v[loop].mean(axis=0)
    return area, centroid


def piece_face_planes(piece: ConvexCellPiece) -> tuple[np.ndarray, np.ndarray]:
    """(normals, offsets) with outward unit normals; inside is n.x <= c."""
    v = piece.vertices
    normals = np.zeros((len(piece.faces), 3))
    offsets = np.zeros(len(piece.faces))
    for i, loop in enumerate(piece.faces):
        pts = v[loop]
        # Newell normal: robust for near-degenerate loops
        n = np.zeros(3)
        for a, b in zip(pts, np.roll(pts, -1, axis=0)):
            n += np.cross(a, b)
        norm = np.linalg.norm(n)
        if norm > 0:
            n = n / norm
        normals[i] = n
        offsets[i] = float(np.dot(n, pts.mean(axis=0)))
    return normals, offsets


def piece_contains(piece: ConvexCellPiece, points: np.ndarray, tol: float) -> np.ndarray:
    normals, offsets = piece_face_planes(piece)
    d = points @ normals.T - offsets
    return np.all(d <= tol, axis=-1)


def piece_bounding_sphere(piece: ConvexCellPiece) -> tuple[np.ndarray, float]:
    c = piece.vertices.mean(axis=0)
    r = float(np.sqrt(np.max(np.sum((piece.vertices - c) ** 2, axis=1))))
    return c, r


# ---------------------------------------------------------------------------
# half-space clipping
# ---------------------------------------------------------------------------

def _lex_less(a: np.ndarray, b: np.ndarray) -> bool:
    if a[0] != b[0]:
        return a[0] < b[0]
    if a[1] != b[1]:
        return a[1] < b[1]
    return a[2] < b[2]


def _edge_point(va: np.ndarray, vb: np.ndarray, da: float, db: float) -> np.ndarray:
    # Canonical endpoint order so adjacent cells cutting the same edge with
    # the same plane produce the same interpolated point.
    if _lex_less(vb, va):
        va, vb, da, db = vb, va, db, da
    t = da / (da - db)
    return va + t * (vb - va)


def clip_convex_ex(piece: ConvexCellPiece, normal: np.ndarray, offset: float,
                   tag: int, tol: float):
    """Clip ``piece`` to the half-space ``normal . x <= offset``.

    Returns (result, cut) where result is None for an empty piece and cut
    says whether a new cap face was created.
    """
    v = piece.vertices
    d = v @ normal - offset
    if np.max(d) <= tol:
        # Piece entirely on the keep side. If the plane grazes a whole
        # internal face, that face IS the bisector contact (it would
        # otherwise go unrecorded when bisectors coincide with tet faces).
        if tag >= 0 and np.max(d) >= -tol:
            on = np.abs(d) <= tol
            for fi, loop in enumerate(piece.faces):
                if piece.clip_tags[fi] == TAG_INTERNAL and all(on[k] for k in loop):
                    new_tags = list(piece.clip_tags)
                    new_tags[fi] = tag
                    return (ConvexCellPiece(vertices=piece.vertices, faces=piece.faces,
                                            clip_tags=new_tags,
                                            source_tet=piece.source_tet), False)
        return piece, False
    if np.min(d) >= -tol:
        return None, False

    on = np.abs(d) <= tol
    keep = d <= tol

    new_pts: list[np.ndarray] = []
    old_map: dict[int, int] = {}
    cut_map: dict[tuple[int, int], int] = {}

    def _old(i: int) -> int:
        j = old_map.get(i)
        if j is None:
            j = len(new_pts)
            new_pts.append(v[i])
            old_map[i] = j
        return j

    def _cut(i: int, j: int) -> int:
        key = (i, j) if i < j else (j, i)
        k = cut_map.get(key)
        if k is None:
            k = len(new_pts)
            new_pts.append(_edge_point(v[i], v[j], d[i], d[j]))
            cut_map[key] = k
        return k

    new_faces: list[list[int]] = []
    new_tags: list[int] = []
    plane_idx: set[int] = set()

    for loop, ftag in zip(piece.faces, piece.clip_tags):
        out: list[int] = []
        m = len(loop)
        for e in range(m):
            i, j = loop[e], loop[(e + 1) % m]
            if keep[i]:
                oi = _old(i)
                out.append(oi)
                if on[i]:
                    plane_idx.add(oi)
            if (d[i] < -tol and d[j] > tol) or (d[i] > tol and d[j] < -tol):
                ci = _cut(i, j)
                out.append(ci)
                plane_idx.add(ci)
        # drop consecutive duplicates
        dedup: list[int] = []
        for k in out:
            if not dedup or dedup[-1] != k:
                dedup.append(k)
        if len(dedup) >= 2 and dedup[0] == dedup[-1]:
            dedup.pop()
        if len(dedup) >= 3:
            new_faces.append(dedup)
            new_tags.append(ftag)

    if not new_faces:
        return None, False

    pts = np.asarray(new_pts)
    cut = False
    if len(plane_idx) >= 3:
        # Cross-section of a convex piece is convex: order its points by
        # angle and orient the loop along +normal (outward for the kept side).
        idx = np.fromiter(plane_idx, dtype=int)
        ppts = pts[idx]
        ctr = ppts.mean(axis=0)
        ref = ppts[0] - ctr
        nrm = np.linalg.norm(ref)
        if nrm > 0:
            ref = ref / nrm
            b2 = np.cross(normal / np.linalg.norm(normal), ref)
            ang = np.arctan2((ppts - ctr) @ b2, (ppts - ctr) @ ref)
            order = np.argsort(ang, kind="stable")
            cap = [int(idx[k]) for k in order]
            if len(cap) >= 3:
                new_faces.append(cap)
                new_tags.append(tag)
                cut = True

    result = ConvexCellPiece(vertices=pts, faces=new_faces, clip_tags=new_tags,
                             source_tet=piece.source_tet)
    return result, cut


def clip_convex(piece: ConvexCellPiece, normal: np.ndarray, offset: float,
                tag: int = TAG_INTERNAL, tol: float = 1e-9) -> Optional[ConvexCellPiece]:
    """Intersection of ``piece`` with the half-space ``normal . x <= offset``.
    Empty intersection returns None."""
    result, _ = clip_convex_ex(piece, np.asarray(normal, dtype=float), float(offset), tag, tol)
    return result


# ---------------------------------------------------------------------------
# closest point on the boundary surface
# ---------------------------------------------------------------------------

_REGION_VERT = (0, 1, 2)
_REGION_FACE = 6


def closest_point_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray,
                               c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized closest point on triangles for matched rows.

    Returns (points, region) with region codes 0/1/2 = vertex a/b/c,
    3 = edge ab, 4 = edge ac, 5 = edge bc, 6 = interior.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = _row_dot(ab, ap)
    d2 = _row_dot(ac, ap)
    bp = p - b
    d3 = _row_dot(ab, bp)
    d4 = _row_dot(ac, bp)
    cp = p - c
    d5 = _row_dot(ab, cp)
    d6 = _row_dot(ac, cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = np.where(d1 - d3 != 0, d1 / (d1 - d3), 0.0)
        t_ac = np.where(d2 - d6 != 0, d2 / (d2 - d6), 0.0)
        den_bc = (d4 - d3) + (d5 - d6)
        t_bc = np.where(den_bc != 0, (d4 - d3) / den_bc, 0.0)
        den_f = va + vb + vc
        v_f = np.where(den_f != 0, vb / den_f, 1.0 / 3.0)
        w_f = np.where(den_f != 0, vc / den_f, 1.0 / 3.0)

    cand_a = a
    cand_b = b
    cand_c = c
    cand_ab = a + t_ab[..., None] * ab
    cand_ac = a + t_ac[..., None] * ac
    cand_bc = b + t_bc[..., None] * (c - b)
    cand_f = a + v_f[..., None] * ab + w_f[..., None] * ac

    conds = [
        (d1 <= 0) & (d2 <= 0),
        (d3 >= 0) & (d4 <= d3),
        (d6 >= 0) & (d5 <= d6),
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),
        (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),
    ]
    region = np.select(conds, [0, 1, 2, 3, 4, 5], default=_REGION_FACE)
    pick = [cand_a, cand_b, cand_c, cand_ab, cand_ac, cand_bc]
    point = cand_f.copy()
    for code, cand in enumerate(pick):
        m = region == code
        if np.any(m):
            point[m] = cand[m]
    return point, region


class ClosestPointIndex:
    """Exact closest-point queries against the boundary triangles.

    A centroid KD-tree culls candidates; the exact minimum over the surviving
    triangles is then taken, with ties broken by lowest triangle index.
    Signed distances use angle-weighted pseudonormals so the sign is robust
    at edges and vertices.
    """

    def __init__(self, vertices: np.ndarray, tris: np.ndarray):
        self.vertices = np.asarray(vertices, dtype=float)
        self.tris = np.asarray(tris, dtype=int)
        ta, tb, tc = (self.vertices[self.tris[:, k]] for k in range(3))
        self._ta, self._tb, self._tc = ta, tb, tc
        n = np.cross(tb - ta, tc - ta)
        self.tri_areas = 0.5 * np.linalg.norm(n, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            self.tri_normals = np.where(
                np.linalg.norm(n, axis=1, keepdims=True) > 0,
                n / np.linalg.norm(n, axis=1, keepdims=True), 0.0)
        self._centroids = (ta + tb + tc) / 3.0
        self._tri_radius = np.sqrt(np.max(
            np.stack([np.sum((x - self._centroids) ** 2, axis=1) for x in (ta, tb, tc)]),
            axis=0))
        self._rmax = float(np.max(self._tri_radius)) if len(self.tris) else 0.0
        self._tree = cKDTree(self._centroids)
        self._vertex_pn = self._vertex_pseudonormals()
        self._edge_pn = self._edge_pseudonormals()

    def _vertex_pseudonormals(self) -> np.ndarray:
        pn = np.zeros_like(self.vertices)
        for k in range(3):
            i = self.tris[:, k]
            e1 = self.vertices[self.tris[:, (k + 1) % 3]] - self.vertices[i]
            e2 = self.vertices[self.tris[:, (k + 2) % 3]] - self.vertices[i]
            cosang = _row_dot(e1, e2) / np.maximum(
                np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1), 1e-300)
            ang = np.arccos(np.clip(cosang, -1.0, 1.0))
            np.add.at(pn, i, ang[:, None] * self.tri_normals)
        norms = np.linalg.norm(pn, axis=1, keepdims=True)
        return pn / np.maximum(norms, 1e-300)

    def _edge_pseudonormals(self) -> dict:
        pn: dict[tuple[int, int], np.ndarray] = {}
        for t, tri in enumerate(self.tris):
            for k in range(3):
                e = (int(tri[k]), int(tri[(k + 1) % 3]))
                key = (min(e), max(e))
                pn[key] = pn.get(key, 0.0) + self.tri_normals[t]
        for key, v in pn.items():
            nrm = np.linalg.norm(v)
            pn[key] = v / nrm if nrm > 0 else v
        return pn

    def query(self, points: np.ndarray, chunk: int = 16384):
        """Closest surface points. Returns (dist, footpoint, tri_idx, region)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(pts)
        dist = np.empty(n)
        foot = np.empty((n, 3))
        tri = np.empty(n, dtype=int)
        region = np.empty(n, dtype=int)
        for s in range(0, n, chunk):
            e = min(n, s + chunk)
            self._query_chunk(pts[s:e], dist[s:e], foot[s:e], tri[s:e], region[s:e])
        return dist, foot, tri, region

    def _query_chunk(self, pts, dist, foot, tri, region):
        _, i1 = self._tree.query(pts, k=1)
        cp0, _ = closest_point_on_triangles(pts, self._ta[i1], self._tb[i1], self._tc[i1])
        d_ub = np.linalg.norm(pts - cp0, axis=1)
        radii = d_ub + self._rmax + 1e-12
        cand = self._tree.query_ball_point(pts, radii)
        counts = np.fromiter((len(c) for c in cand), dtype=int, count=len(pts))
        qi = np.repeat(np.arange(len(pts)), counts)
        ti = np.concatenate([np.asarray(c, dtype=int) for c in cand]) if len(pts) else np.empty(0, int)
        # cull: triangle can only win if centroid within d_ub + its own radius
        keepm = np.linalg.norm(pts[qi] - self._centroids[ti], axis=1) <= d_ub[qi] + self._tri_radius[ti] + 1e-12
        qi, ti = qi[keepm], ti[keepm]
        cp, reg = closest_point_on_triangles(pts[qi], self._ta[ti], self._tb[ti], self._tc[ti])
        dd = np.linalg.norm(pts[qi] - cp, axis=1)
        order = np.lexsort((ti, dd, qi))
        qi_o = qi[order]
        first = np.ones(len(qi_o), dtype=bool)
        first[1:] = qi_o[1:] != qi_o[:-1]
        sel = order[first]
        dist[qi[sel]] = dd[sel]
        foot[qi[sel]] = cp[sel]
        tri[qi[sel]] = ti[sel]
        region[qi[sel]] = reg[sel]

    def normals_at(self, tri_idx: np.ndarray, region: np.ndarray) -> np.ndarray:
        """Outward pseudonormal appropriate for the footpoint region."""
        tri_idx = np.atleast_1d(tri_idx)
        region = np.atleast_1d(region)
        out = self.tri_normals[tri_idx].copy()
        for k, (t, r) in enumerate(zip(tri_idx, region)):
            if r in _REGION_VERT:
                out[k] = self._vertex_pn[self.tris[t, r]]
            elif r in (3, 4, 5):
                pairs = {3: (0, 1), 4: (0, 2), 5: (1, 2)}
                i, j = (int(self.tris[t, pairs[r][0]]), int(self.tris[t, pairs[r][1]]))
                out[k] = self._edge_pn[(min(i, j), max(i, j))]
        return out

    def closest_point(self, x: np.ndarray) -> tuple[float, SurfacePoint]:
        d, fp, t, reg = self.query(np.asarray(x, dtype=float)[None, :])
        normal = self.normals_at(t, reg)[0]
        return float(d[0]), SurfacePoint(position=fp[0], normal=normal, tri_index=int(t[0]))

    def signed_distance(self, points: np.ndarray):
        """Negative inside the solid. Returns (signed, foot, tri, region)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d, fp, t, reg = self.query(pts)
        pn = self.normals_at(t, reg)
        sign = np.where(_row_dot(pts - fp, pn) >= 0, 1.0, -1.0)
        return sign * d, fp, t, reg


def build_closest_point_index(domain) -> ClosestPointIndex:
    """Queryable index over a TetDomain's boundary surface."""
    return ClosestPointIndex(domain.vertices, domain.boundary_tris)


# ---------------------------------------------------------------------------
# Poisson-disk pins
# ---------------------------------------------------------------------------

def _grid_key(p: np.ndarray, cell: float) -> tuple[int, int, int]:
    return (int(np.floor(p[0] / cell)), int(np.floor(p[1] / cell)), int(np.floor(p[2] / cell)))


class _RejectGrid:
    def __init__(self, radius: float):
        self.r = radius
        self.cells: dict[tuple[int, int, int], list[np.ndarray]] = {}

    def ok(self, p: np.ndarray) -> bool:
        cx, cy, cz = _grid_key(p, self.r)
        r2 = self.r * self.r
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    for q in self.cells.get((cx + dx, cy + dy, cz + dz), ()):
                        d = p - q
                        if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] < r2:
                            return False
        return True

    def add(self, p: np.ndarray) -> None:
        self.cells.setdefault(_grid_key(p, self.r), []).append(p)


def sample_polyline(points: np.ndarray, spacing: float) -> np.ndarray:
    """Points along a polyline at roughly even spacing, endpoints included."""
    pts = np.asarray(points, dtype=float)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    total = float(seg.sum())
    if total == 0:
        return pts[:1]
    n = max(1, int(np.round(total / spacing)))
    stations = np.linspace(0.0, total, n + 1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    out = np.empty((len(stations), 3))
    for k, s in enumerate(stations):
        i = min(np.searchsorted(cum, s, side="right") - 1, len(seg) - 1)
        t = (s - cum[i]) / seg[i] if seg[i] > 0 else 0.0
        out[k] = pts[i] + t * (pts[i + 1] - pts[i])
    return out


def poisson_disk_pins(domain, gamma: float, rng: np.random.Generator,
                      oversample: int = 30) -> list[SurfacePoint]:
    """Surface pins with pairwise distance >= bbox_diag / gamma.

    Greedy dart throwing from an area-weighted candidate pool with grid
    rejection; deterministic given the generator state. Pins are forced
    onto concave-sharp feature polylines first so sphere shrinking seeds
    spheres tangent to those creases.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    radius = domain.bbox_diag / gamma
    areas = domain.boundary_areas()
    total_area = float(areas.sum())
    grid = _RejectGrid(radius)
    pins: list[SurfacePoint] = []

    cp = build_closest_point_index(domain)

    def _add_point(p: np.ndarray) -> None:
        _, fp, ti, reg = cp.query(p[None, :])
        nrm = cp.normals_at(ti, reg)[0]
        pins.append(SurfacePoint(position=fp[0], normal=nrm, tri_index=int(ti[0])))
        grid.add(fp[0])

    for chain in domain.concave_polylines():
        for p in sample_polyline(domain.vertices[chain], radius):
            if grid.ok(p):
                _add_point(p)

    # hex-packing upper bound on the pin count sizes the candidate pool
    expected_max = max(1, int(np.ceil(total_area / (np.sqrt(3.0) / 2.0 * radius * radius))))
    m = int(np.clip(oversample * expected_max, 2000, 600_000))
    tri_choice = rng.choice(len(areas), size=m, p=areas / total_area)
    u = rng.random((m, 2))
    su = np.sqrt(u[:, 0])
    bary = np.stack([1.0 - su, su * (1.0 - u[:, 1]), su * u[:, 1]], axis=1)
    tv = domain.vertices[domain.boundary_tris[tri_choice]]
    candidates = np.einsum("nk,nkd->nd", bary, tv)

    tri_normals = cp.tri_normals
    for k in range(m):
        p = candidates[k]
        if grid.ok(p):
            t = int(tri_choice[k])
            pins.append(SurfacePoint(position=p.copy(), normal=tri_normals[t], tri_index=t))
            grid.add(p)
    return pins


def uniform_surface_samples(domain, n: int, rng: np.random.Generator) -> np.ndarray:
    """Area-weighted uniform random points on the boundary surface."""
    areas = domain.boundary_areas()
    tri_choice = rng.choice(len(areas), size=n, p=areas / areas.sum())
    u = rng.random((n, 2))
    su = np.sqrt(u[:, 0])
    bary = np.stack([1.0 - su, su * (1.0 - u[:, 1]), su * u[:, 1]], axis=1)
    tv = domain.vertices[domain.boundary_tris[tri_choice]]
    return np.einsum("nk,nkd->nd", bary, tv)


def frey_quality(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Triangle quality (6/sqrt(3)) * area / (half_perimeter * longest_edge);
    1 for equilateral, 0 for degenerate. Vectorized over leading axes."""
    a, b, c = (np.atleast_2d(x) for x in (a, b, c))
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=-1)
    la = np.linalg.norm(b - a, axis=-1)
    lb = np.linalg.norm(c - b, axis=-1)
    lc = np.linalg.norm(a - c, axis=-1)
    half_p = 0.5 * (la + lb + lc)
    h = np.maximum(np.maximum(la, lb), lc)
    denom = half_p * h
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(denom > 0, (6.0 / np.sqrt(3.0)) * area / denom, 0.0)
    return q


# ---------------------------------------------------------------------------
# KNN
# ---------------------------------------------------------------------------

def knn(centers: np.ndarray, k: int) -> list[np.ndarray]:
    """Indices of the k nearest other centers, ties broken by index.

    Fewer than k+1 centers returns all others; k=0 returns empty lists.
    """
    centers = np.asarray(centers, dtype=float)
    n = len(centers)
    if k <= 0:
        return [np.empty(0, dtype=int) for _ in range(n)]
    k_eff = min(k, n - 1)
    tree = cKDTree(centers)
    # extra slots so equidistant ties can be re-sorted deterministically
    kq = min(n, k_eff + 9)
    dist, idx = tree.query(centers, k=kq)
    out = []
    for i in range(n):
        di, ii = dist[i], idx[i]
        mask = ii != i
        di, ii = di[mask], ii[mask]
        order = np.lexsort((ii, di))
        out.append(ii[order][:k_eff].astype(int))
    return out


# ---------------------------------------------------------------------------
# edge chains
# ---------------------------------------------------------------------------

def chain_edges(edges: Sequence[tuple[int, int]], split_nodes: Sequence[int] = ()) -> list[list[int]]:
    """Group edges into maximal vertex chains, splitting at nodes of valence
    != 2 and at ``split_nodes``. Closed loops come back with first == last."""
    adj: dict[int, list[int]] = {}
    for a, b in edges:
        adj.setdefault(int(a), []).append(int(b))
        adj.setdefault(int(b), []).append(int(a))
    split = set(int(s) for s in split_nodes)
    terminals = sorted(v for v, nb in adj.items() if len(nb) != 2 or v in split)
    used: set[tuple[int, int]] = set()

    def _take(a: int, b: int) -> None:
        used.add((a, b))
        used.add((b, a))

    chains: list[list[int]] = []
    for start in terminals:
        for nxt in sorted(adj[start]):
            if (start, nxt) in used:
                continue
            chain = [start, nxt]
            _take(start, nxt)
            cur, prev = nxt, start
            while cur not in split and len(adj[cur]) == 2:
                a, b = adj[cur]
                nxt2 = a if a != prev else b
                if (cur, nxt2) in used:
                    break
                chain.append(nxt2)
                _take(cur, nxt2)
                prev, cur = cur, nxt2
            chains.append(chain)
    # leftover pure cycles
    for a in sorted(adj):
        for b in sorted(adj[a]):
            if (a, b) in used:
                continue
            chain = [a, b]
            _take(a, b)
            prev, cur = a, b
            while cur != a:
                n1, n2 = adj[cur]
                nxt2 = n1 if n1 != prev else n2
                chain.append(nxt2)
                _take(cur, nxt2)
                prev, cur = cur, nxt2
            chains.append(chain)
    return chains
