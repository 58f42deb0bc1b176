"""Analytic tetrahedral test shapes: grid boxes, icosphere balls, tori, and
an L-shaped extrusion. Used by the test suite and the demo scripts; also
handy as CLI inputs via write_medit."""

from __future__ import annotations

import numpy as np

from . import mesh_io
from .mesh_io import TetDomain, write_medit  # noqa: F401  (re-export for fixtures users)

# Kuhn subdivision of a unit cell: six tets around the main diagonal.
# Every cell uses the same pattern, so faces of neighboring cells conform.
_KUHN_PATHS = [
    (0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0),
]


def box_domain(size=(1000.0, 1000.0, 1000.0), cells=(1, 1, 1)) -> TetDomain:
    """Axis-aligned box tessellated into 6 tets per grid cell."""
    sx, sy, sz = size
    nx, ny, nz = cells

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    verts = np.array([
        (sx * i / nx, sy * j / ny, sz * k / nz)
        for i in range(nx + 1) for j in range(ny + 1) for k in range(nz + 1)
    ])
    tets = []
    e = np.eye(3, dtype=int)
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                base = np.array([i, j, k])
                for path in _KUHN_PATHS:
                    c0 = base
                    c1 = c0 + e[path[0]]
                    c2 = c1 + e[path[1]]
                    c3 = c2 + e[path[2]]
                    ids = [vid(*c) for c in (c0, c1, c2, c3)]
                    p = verts[ids]
                    vol = np.dot(p[1] - p[0], np.cross(p[2] - p[0], p[3] - p[0]))
                    if vol < 0:
                        ids[2], ids[3] = ids[3], ids[2]
                    tets.append(ids)
    return mesh_io.from_arrays(verts, np.asarray(tets, dtype=int))


def cube_domain(side: float = 1000.0, cells: int = 1) -> TetDomain:
    return box_domain((side, side, side), (cells, cells, cells))


def slab_domain(side: float = 1000.0, thickness: float = 100.0, cells=(8, 8, 1)) -> TetDomain:
    return box_domain((side, side, thickness), cells)


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ], dtype=float)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = np.array([
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ], dtype=int)
    return v, f


def icosphere(subdiv: int = 3) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = _icosahedron()
    for _ in range(subdiv):
        verts = list(verts)
        cache: dict[tuple[int, int], int] = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            i = cache.get(key)
            if i is None:
                p = verts[a] + verts[b]
                p = p / np.linalg.norm(p)
                i = len(verts)
                verts.append(p)
                cache[key] = i
            return i

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        verts = np.asarray(verts)
        faces = np.asarray(new_faces, dtype=int)
    return verts, faces


def ball_domain(subdiv: int = 3, radius: float = 500.0, center=(500.0, 500.0, 500.0)) -> TetDomain:
    """Icosphere ball tetrahedralized by coning every surface triangle to the
    center (valid because the shape is star-convex)."""
    sv, sf = icosphere(subdiv)
    center = np.asarray(center, dtype=float)
    verts = np.vstack([center[None, :], center + radius * sv])
    tets = np.column_stack([np.zeros(len(sf), dtype=int), sf + 1])
    return mesh_io.from_arrays(verts, tets)


def _prism_tets(ids: list[int]) -> list[tuple[int, int, int, int]]:
    """Split prism (bottom v0v1v2, top v3v4v5, vi+3 above vi) into 3 tets with
    quad diagonals chosen toward the smallest global index, so neighboring
    prisms conform."""
    order = int(np.argmin(ids[:3] + ids[3:]))
    rot = order % 3
    i = [rot, (rot + 1) % 3, (rot + 2) % 3]
    v = [ids[i[0]], ids[i[1]], ids[i[2]], ids[i[0] + 3], ids[i[1] + 3], ids[i[2] + 3]]
    if order >= 3:  # smallest index on top: mirror the prism (swap decks)
        v = v[3:] + v[:3]
    v1, v2, v3, v4, v5, v6 = v
    if min(v2, v6) < min(v3, v5):
        return [(v1, v2, v3, v6), (v1, v2, v6, v5), (v1, v5, v6, v4)]
    return [(v1, v2, v3, v5), (v1, v5, v3, v6), (v1, v5, v6, v4)]


def torus_domain(major: float = 320.0, minor: float = 130.0, n_u: int = 36,
                 n_v: int = 14, center=(500.0, 500.0, 500.0)) -> TetDomain:
    """Solid torus: swept polygonal cross-section, 3 tets per prism wedge.

    n_v >= 14 keeps the cross-section dihedral angles above 150 degrees so no
    convex-sharp rings appear at the default feature threshold.
    """
    center = np.asarray(center, dtype=float)
    ring = []      # cross-section center per sweep station
    tube = []      # tube surface vertices [i][j]
    for i in range(n_u):
        a = 2.0 * np.pi * i / n_u
        cu = np.array([np.cos(a), np.sin(a), 0.0])
        ring.append(center + major * cu)
        row = []
        for j in range(n_v):
            b = 2.0 * np.pi * j / n_v
            p = center + (major + minor * np.cos(b)) * cu + np.array([0, 0, minor * np.sin(b)])
            row.append(p)
        tube.append(row)

    verts = list(ring)
    tube_ids = []
    for i in range(n_u):
        row_ids = []
        for j in range(n_v):
            row_ids.append(len(verts))
            verts.append(tube[i][j])
        tube_ids.append(row_ids)
    verts = np.asarray(verts)

    tets = []
    for i in range(n_u):
        i2 = (i + 1) % n_u
        for j in range(n_v):
            j2 = (j + 1) % n_v
            prism = [i, tube_ids[i][j], tube_ids[i][j2],
                     i2, tube_ids[i2][j], tube_ids[i2][j2]]
            for t in _prism_tets(prism):
                p = verts[list(t)]
                vol = np.dot(p[1] - p[0], np.cross(p[2] - p[0], p[3] - p[0]))
                tet = list(t)
                if vol < 0:
                    tet[2], tet[3] = tet[3], tet[2]
                tets.append(tet)
    return mesh_io.from_arrays(verts, np.asarray(tets, dtype=int))


def lshape_domain(side: float = 1000.0, cells: int = 4) -> TetDomain:
    """L-shaped extrusion: a box grid minus one quadrant; has a single
    concave-sharp edge chain along the inner corner."""
    n = cells
    half = n // 2
    sx = sy = sz = side / n

    def vid_map():
        ids = {}
        verts = []
        for i in range(n + 1):
            for j in range(n + 1):
                for k in range(n + 1):
                    ids[(i, j, k)] = len(verts)
                    verts.append((sx * i, sy * j, sz * k))
        return ids, np.asarray(verts)

    ids, verts = vid_map()
    e = np.eye(3, dtype=int)
    tets = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                if i >= half and k >= half:   # removed quadrant
                    continue
                base = np.array([i, j, k])
                for path in _KUHN_PATHS:
                    c0 = base
                    c1 = c0 + e[path[0]]
                    c2 = c1 + e[path[1]]
                    c3 = c2 + e[path[2]]
                    t = [ids[tuple(c)] for c in (c0, c1, c2, c3)]
                    p = verts[t]
                    vol = np.dot(p[1] - p[0], np.cross(p[2] - p[0], p[3] - p[0]))
                    if vol < 0:
                        t[2], t[3] = t[3], t[2]
                    tets.append(t)
    used = np.unique(np.asarray(tets))
    remap = -np.ones(len(verts), dtype=int)
    remap[used] = np.arange(len(used))
    return mesh_io.from_arrays(verts[used], remap[np.asarray(tets, dtype=int)])
