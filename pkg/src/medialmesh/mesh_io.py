"""Tetrahedral mesh input: loading, validation, normalization, and detection
of sharp boundary features.

Accepted formats are MEDIT ``.mesh`` (ASCII) and legacy ``.vtk`` unstructured
grids. A TetDomain is immutable after construction (arrays are marked
read-only) and safe to share across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import geom


class MeshError(ValueError):
    """Invalid mesh input (parse failure, bad topology, inverted elements)."""


@dataclass
class NormalizeTransform:
    """Uniform scale + translation mapping input coordinates to the
    normalized [0,1000]^3 frame. ``x_norm = (x_in - offset) * scale``."""

    scale: float
    offset: np.ndarray

    def to_normalized(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.offset) * self.scale

    def to_input(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) / self.scale + self.offset

    def scale_to_input(self, length) -> np.ndarray:
        return np.asarray(length, dtype=float) / self.scale


@dataclass
class TetDomain:
    """Tetrahedral volume with boundary surface and detected sharp features."""

    vertices: np.ndarray                  # (N, 3)
    tets: np.ndarray                      # (M, 4), positive orientation
    boundary_tris: np.ndarray             # (B, 3), outward oriented
    bbox_diag: float = 0.0
    feature_edges: np.ndarray = field(default_factory=lambda: np.empty((0, 2), dtype=int))
    feature_edge_kind: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))  # +1 convex, -1 concave
    feature_corners: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    convex_chains: list = field(default_factory=list)    # list[list[int]] vertex chains
    concave_chains: list = field(default_factory=list)

    def __post_init__(self):
        for arr in (self.vertices, self.tets, self.boundary_tris,
                    self.feature_edges, self.feature_edge_kind, self.feature_corners):
            arr.setflags(write=False)

    # -- measures ----------------------------------------------------------

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def tet_volumes(self) -> np.ndarray:
        v = self.vertices[self.tets]
        return np.einsum("ij,ij->i", v[:, 1] - v[:, 0],
                         np.cross(v[:, 2] - v[:, 0], v[:, 3] - v[:, 0])) / 6.0

    def volume(self) -> float:
        return float(self.tet_volumes().sum())

    def boundary_areas(self) -> np.ndarray:
        t = self.vertices[self.boundary_tris]
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    def enclosed_volume(self) -> float:
        """Volume enclosed by the boundary surface (divergence theorem)."""
        t = self.vertices[self.boundary_tris]
        return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)

    def boundary_euler(self) -> int:
        edges = set()
        for tri in self.boundary_tris:
            for k in range(3):
                a, b = int(tri[k]), int(tri[(k + 1) % 3])
                edges.add((min(a, b), max(a, b)))
        nv = len(np.unique(self.boundary_tris))
        return nv - len(edges) + len(self.boundary_tris)

    def convex_polylines(self) -> list:
        return self.convex_chains

    def concave_polylines(self) -> list:
        return self.concave_chains


_TET_FACES = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]]


def _extract_boundary(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Faces incident to exactly one tet, outward oriented."""
    count: dict[tuple[int, int, int], int] = {}
    oriented: dict[tuple[int, int, int], tuple[int, int, int]] = {}
    for tet in tets:
        for loop in _TET_FACES:
            f = (int(tet[loop[0]]), int(tet[loop[1]]), int(tet[loop[2]]))
            key = tuple(sorted(f))
            count[key] = count.get(key, 0) + 1
            oriented[key] = f
    tris = [oriented[k] for k, c in count.items() if c == 1]
    return np.asarray(sorted(tris), dtype=int)


def _check_boundary_manifold(boundary_tris: np.ndarray) -> None:
    edge_count: dict[tuple[int, int], int] = {}
    for t, tri in enumerate(boundary_tris):
        for k in range(3):
            a, b = int(tri[k]), int(tri[(k + 1) % 3])
            key = (min(a, b), max(a, b))
            edge_count[key] = edge_count.get(key, 0) + 1
    for key, c in edge_count.items():
        if c != 2:
            raise MeshError(f"non-manifold boundary: edge {key} belongs to {c} boundary triangles")
    # connectivity via union-find over tris sharing an edge
    parent = list(range(len(boundary_tris)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    edge_tris: dict[tuple[int, int], list[int]] = {}
    for t, tri in enumerate(boundary_tris):
        for k in range(3):
            a, b = int(tri[k]), int(tri[(k + 1) % 3])
            edge_tris.setdefault((min(a, b), max(a, b)), []).append(t)
    for ts in edge_tris.values():
        r = find(ts[0])
        for o in ts[1:]:
            parent[find(o)] = r
    roots = {find(t) for t in range(len(boundary_tris))}
    if len(roots) > 1:
        raise MeshError(f"boundary surface has {len(roots)} connected components; expected 1")


def from_arrays(vertices: np.ndarray, tets: np.ndarray,
                boundary_tris: Optional[np.ndarray] = None) -> TetDomain:
    """Validated TetDomain from raw arrays."""
    vertices = np.asarray(vertices, dtype=float).copy()
    tets = np.asarray(tets, dtype=int).copy()
    if tets.ndim != 2 or tets.shape[1] != 4:
        raise MeshError("tets must be an (M,4) index array")
    if tets.size and (tets.min() < 0 or tets.max() >= len(vertices)):
        bad = int(np.argmax(np.any((tets < 0) | (tets >= len(vertices)), axis=1)))
        raise MeshError(f"tet {bad} references vertex index outside 0..{len(vertices) - 1}")
    v = vertices[tets]
    vols = np.einsum("ij,ij->i", v[:, 1] - v[:, 0],
                     np.cross(v[:, 2] - v[:, 0], v[:, 3] - v[:, 0])) / 6.0
    if np.any(vols <= 0):
        bad = int(np.argmax(vols <= 0))
        raise MeshError(f"tet {bad} has non-positive signed volume {vols[bad]:.3e}")
    if boundary_tris is None:
        boundary_tris = _extract_boundary(vertices, tets)
    else:
        boundary_tris = np.asarray(boundary_tris, dtype=int).copy()
    _check_boundary_manifold(boundary_tris)
    lo, hi = vertices.min(axis=0), vertices.max(axis=0)
    return TetDomain(vertices=vertices, tets=tets, boundary_tris=boundary_tris,
                     bbox_diag=float(np.linalg.norm(hi - lo)))


# ---------------------------------------------------------------------------
# file readers / writer
# ---------------------------------------------------------------------------

def _load_medit(path: Path) -> tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    tokens = path.read_text().split()
    i = 0
    verts = None
    tets = None
    tris = None

    def take(n):
        nonlocal i
        out = tokens[i:i + n]
        if len(out) != n:
            raise MeshError(f"{path.name}: truncated file in section near token {i}")
        i += n
        return out

    nt = len(tokens)
    while i < nt:
        kw = tokens[i].lower()
        i += 1
        if kw == "meshversionformatted":
            take(1)
        elif kw == "dimension":
            dim = int(take(1)[0])
            if dim != 3:
                raise MeshError(f"{path.name}: dimension {dim} unsupported")
        elif kw == "vertices":
            n = int(take(1)[0])
            data = np.asarray(take(4 * n), dtype=float).reshape(n, 4)
            verts = data[:, :3]
        elif kw == "tetrahedra":
            n = int(take(1)[0])
            data = np.asarray(take(5 * n), dtype=float).reshape(n, 5)
            tets = data[:, :4].astype(int) - 1
        elif kw == "triangles":
            n = int(take(1)[0])
            data = np.asarray(take(4 * n), dtype=float).reshape(n, 4)
            tris = data[:, :3].astype(int) - 1
        elif kw == "edges":
            n = int(take(1)[0])
            take(3 * n)
        elif kw == "corners" or kw == "requiredvertices" or kw == "ridges":
            n = int(take(1)[0])
            take(n)
        elif kw == "end":
            break
        else:
            raise MeshError(f"{path.name}: unknown MEDIT section '{tokens[i - 1]}'")
    if verts is None or tets is None:
        raise MeshError(f"{path.name}: missing Vertices or Tetrahedra section")
    return verts, tets, tris


def _load_vtk(path: Path) -> tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    tokens = path.read_text().split()
    up = [t.upper() for t in tokens]
    try:
        pi = up.index("POINTS")
        n = int(tokens[pi + 1])
        verts = np.asarray(tokens[pi + 3:pi + 3 + 3 * n], dtype=float).reshape(n, 3)
        ci = up.index("CELLS")
        m = int(tokens[ci + 1])
        total = int(tokens[ci + 2])
        raw = np.asarray(tokens[ci + 3:ci + 3 + total + m], dtype=int)
        cells = []
        k = 0
        for _ in range(m):
            cnt = raw[k]
            cells.append(raw[k + 1:k + 1 + cnt])
            k += cnt + 1
        ti = up.index("CELL_TYPES")
        types = np.asarray(tokens[ti + 2:ti + 2 + m], dtype=int)
    except (ValueError, IndexError) as exc:
        raise MeshError(f"{path.name}: malformed legacy VTK unstructured grid ({exc})") from exc
    tets = [c for c, t in zip(cells, types) if t == 10]
    tris = [c for c, t in zip(cells, types) if t == 5]
    if not tets:
        raise MeshError(f"{path.name}: no tetrahedral cells (VTK type 10) found")
    return verts, np.asarray(tets, dtype=int), (np.asarray(tris, dtype=int) if tris else None)


def load_tet_mesh(path) -> TetDomain:
    """Load and validate a tetrahedral mesh (MEDIT .mesh or legacy .vtk)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    suffix = path.suffix.lower()
    if suffix == ".mesh":
        verts, tets, tris = _load_medit(path)
    elif suffix == ".vtk":
        verts, tets, tris = _load_vtk(path)
    else:
        raise MeshError(f"{path.name}: unsupported extension '{suffix}' (use .mesh or .vtk)")
    if tets.size and (tets.min() < 0 or tets.max() >= len(verts)):
        bad = int(np.argmax(np.any((tets < 0) | (tets >= len(verts)), axis=1)))
        raise MeshError(f"{path.name}: tet {bad} references vertex index outside 0..{len(verts) - 1}")
    return from_arrays(verts, tets, tris)


def write_medit(path, vertices: np.ndarray, tets: np.ndarray,
                tris: Optional[np.ndarray] = None) -> None:
    lines = ["MeshVersionFormatted 2", "Dimension 3", "Vertices", str(len(vertices))]
    for v in vertices:
        lines.append(f"{v[0]!r} {v[1]!r} {v[2]!r} 0")
    if tris is not None and len(tris):
        lines.append("Triangles")
        lines.append(str(len(tris)))
        for t in tris:
            lines.append(f"{t[0] + 1} {t[1] + 1} {t[2] + 1} 0")
    lines.append("Tetrahedra")
    lines.append(str(len(tets)))
    for t in tets:
        lines.append(f"{t[0] + 1} {t[1] + 1} {t[2] + 1} {t[3] + 1} 0")
    lines.append("End")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def normalize(domain: TetDomain, target: float = 1000.0) -> tuple[TetDomain, NormalizeTransform]:
    """Uniformly scale + translate so the bbox fits [0,target]^3 with the
    longest axis spanning exactly ``target``."""
    lo, hi = domain.bbox()
    extent = float(np.max(hi - lo))
    if extent <= 0:
        raise MeshError("degenerate bounding box: zero extent")
    scale = target / extent
    tf = NormalizeTransform(scale=scale, offset=lo.copy())
    verts = tf.to_normalized(domain.vertices)
    out = TetDomain(vertices=verts, tets=domain.tets.copy(),
                    boundary_tris=domain.boundary_tris.copy(),
                    bbox_diag=float(np.linalg.norm(verts.max(axis=0) - verts.min(axis=0))),
                    feature_edges=domain.feature_edges.copy(),
                    feature_edge_kind=domain.feature_edge_kind.copy(),
                    feature_corners=domain.feature_corners.copy(),
                    convex_chains=[list(c) for c in domain.convex_chains],
                    concave_chains=[list(c) for c in domain.concave_chains])
    return out, tf


# ---------------------------------------------------------------------------
# sharp-feature detection
# ---------------------------------------------------------------------------

def detect_features(domain: TetDomain, phi: float = math.radians(30.0),
                    manual_edges: Optional[Sequence[tuple[int, int]]] = None) -> TetDomain:
    """Flag boundary edges whose interior dihedral angle is < pi - phi
    (convex-sharp) or > pi + phi (concave-sharp); chain them into polylines
    and mark corners. ``phi`` in radians; phi = 0 disables detection."""
    tris = domain.boundary_tris
    verts = domain.vertices
    tv = verts[tris]
    n = np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0])
    n = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)

    edge_tris: dict[tuple[int, int], list[int]] = {}
    for t, tri in enumerate(tris):
        for k in range(3):
            a, b = int(tri[k]), int(tri[(k + 1) % 3])
            edge_tris.setdefault((min(a, b), max(a, b)), []).append(t)

    conv, conc = [], []
    if phi > 0:
        cos_phi = math.cos(phi)
        for (a, b), ts in sorted(edge_tris.items()):
            t1, t2 = ts
            c = float(np.dot(n[t1], n[t2]))
            if c >= cos_phi:    # angle between normals <= phi: not sharp
                continue
            opp = [v for v in tris[t2] if v != a and v != b][0]
            below = float(np.dot(verts[opp] - verts[a], n[t1])) < 0.0
            (conv if below else conc).append((a, b))
    if manual_edges:
        have = {tuple(e) for e in conv}
        for a, b in manual_edges:
            key = (min(int(a), int(b)), max(int(a), int(b)))
            if key not in edge_tris:
                raise MeshError(f"manual sharp edge {key} is not a boundary edge")
            if key not in have:
                conv.append(key)
                have.add(key)
    conv = sorted(conv)
    conc = sorted(conc)

    valence: dict[int, int] = {}
    for a, b in conv:
        valence[a] = valence.get(a, 0) + 1
        valence[b] = valence.get(b, 0) + 1
    corners = sorted(v for v, c in valence.items() if c >= 3 or c == 1)

    convex_chains = geom.chain_edges(conv, split_nodes=corners) if conv else []
    concave_chains = geom.chain_edges(conc) if conc else []

    edges = np.asarray(conv + conc, dtype=int).reshape(-1, 2)
    kinds = np.asarray([1] * len(conv) + [-1] * len(conc), dtype=int)
    return replace(domain,
                   vertices=domain.vertices.copy(), tets=domain.tets.copy(),
                   boundary_tris=domain.boundary_tris.copy(),
                   feature_edges=edges, feature_edge_kind=kinds,
                   feature_corners=np.asarray(corners, dtype=int),
                   convex_chains=convex_chains, concave_chains=concave_chains)
