"""Sphere-level numerical solvers: the least-squares tangency system assembled
from cell samples (with singular-value case analysis), sphere shrinking from a
surface pin, Gauss-Newton point-tangency refinement, and the combined
projection policy that keeps spheres on the medial axis.

All solvers are pure per sphere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import config as cfg
from . import geom
from .geom import SurfacePoint
from .rpd import PowerCell, RpdContext, Sphere, subvolume_clusters

_MOTION_EPS = 1e-8


@dataclass
class SqemSystem:
    """4x4 least-squares tangency system over (center, radius) with its
    singular decomposition and solution-space case label."""

    A: np.ndarray                # (4,4) normal matrix, PSD
    b: np.ndarray                # (4,)
    rhs_sq: float                # sum w * rhs^2, completes the residual
    svals: np.ndarray            # (4,) descending
    svecs: np.ndarray            # (4,4), columns match svals
    case_label: str = cfg.UNDER
    m_star: np.ndarray = field(default_factory=lambda: np.zeros(4))
    null_basis: np.ndarray = field(default_factory=lambda: np.zeros((4, 0)))
    motion_basis: np.ndarray = field(default_factory=lambda: np.zeros((3, 0)))
    line_dir: Optional[np.ndarray] = None      # LINE: spatial direction, unit
    plane_normal: Optional[np.ndarray] = None  # PLANE: spatial normal, unit

    def residual_at(self, m: np.ndarray) -> float:
        m = np.asarray(m, dtype=float)
        return float(max(m @ self.A @ m - 2.0 * self.b @ m + self.rhs_sq, 0.0))


def classify_case(svals: np.ndarray, tau_rank: float) -> str:
    """Case label from singular-value ratios (scale invariant)."""
    s1 = float(svals[0])
    if s1 <= 0.0:
        return cfg.UNDER
    r = svals / s1
    if r[1] <= tau_rank:
        return cfg.UNDER
    if r[2] <= tau_rank:
        return cfg.PLANE
    if r[3] <= tau_rank:
        return cfg.LINE
    return cfg.FULL_RANK


def build_sqem(rows: np.ndarray, rhs: np.ndarray, weights: np.ndarray,
               tau_rank: float) -> SqemSystem:
    """Weighted normal system from plane-tangency rows [n, 1] m = n.p."""
    wa = rows * weights[:, None]
    A = wa.T @ rows
    b = wa.T @ rhs
    rhs_sq = float(np.sum(weights * rhs * rhs))
    u, s, vt = np.linalg.svd(A)
    v = vt.T
    sys = SqemSystem(A=A, b=b, rhs_sq=rhs_sq, svals=s, svecs=v)
    sys.case_label = classify_case(s, tau_rank)

    s1 = s[0] if s[0] > 0 else 1.0
    sig = s / s1 > tau_rank
    inv = np.where(sig, 1.0 / np.where(s > 0, s, 1.0), 0.0)
    sys.m_star = v @ (inv * (u.T @ b))
    sys.null_basis = v[:, ~sig]

    if sys.null_basis.shape[1]:
        spatial = sys.null_basis[:3, :]
        bu, bs, _ = np.linalg.svd(spatial, full_matrices=False)
        rank = int(np.sum(bs > _MOTION_EPS))
        sys.motion_basis = bu[:, :rank]
    if sys.case_label == cfg.LINE and sys.motion_basis.shape[1] == 1:
        sys.line_dir = sys.motion_basis[:, 0].copy()
    if sys.case_label == cfg.PLANE and sys.motion_basis.shape[1] == 2:
        n = np.cross(sys.motion_basis[:, 0], sys.motion_basis[:, 1])
        nrm = np.linalg.norm(n)
        if nrm > 0:
            sys.plane_normal = n / nrm
    return sys


def assemble_sqem(cell: PowerCell, ctx: RpdContext) -> SqemSystem:
    """Accumulate per-sample tangent-plane constraints of a sampled cell,
    each row weighted by the sample's represented volume."""
    if cell.samples is None or len(cell.samples) == 0:
        raise ValueError(f"cell {cell.sphere_id} has no samples")
    sm = cell.samples
    rows = np.hstack([sm.n, np.ones((len(sm), 1))])
    rhs = np.einsum("ij,ij->i", sm.n, sm.foot)
    return build_sqem(rows, rhs, sm.w, ctx.config.tau_rank)


def solve_sqem(system: SqemSystem, current: Sphere) -> Sphere:
    """Minimizer for FULL_RANK; orthogonal projection of (center, radius)
    onto the affine solution line/plane otherwise. Radius clamped >= 0."""
    if system.case_label == cfg.UNDER:
        raise ValueError("under-constrained system: fall back to sphere shrinking")
    if system.case_label == cfg.FULL_RANK:
        m = np.linalg.solve(system.A, system.b)
    else:
        m_cur = np.r_[current.center, current.radius]
        u = system.null_basis
        m = system.m_star + u @ (u.T @ (m_cur - system.m_star))
    return Sphere(center=m[:3].copy(), radius=max(float(m[3]), 0.0),
                  klass=current.klass, pinned=current.pinned)


# ---------------------------------------------------------------------------
# sphere shrinking
# ---------------------------------------------------------------------------

def shrink_spheres(pins: list, ctx: RpdContext,
                   initial_radius: Optional[float] = None,
                   max_iter: int = 30) -> list:
    """Vectorized sphere shrinking for a batch of pins (see shrink_sphere)."""
    bbd = ctx.bbox_diag
    tol_move = 1e-6 * bbd
    p = np.asarray([pin.position for pin in pins], dtype=float)
    n = np.asarray([pin.normal for pin in pins], dtype=float)
    m = len(pins)
    r = np.full(m, initial_radius if initial_radius is not None else bbd / 2.0)
    converged = np.zeros(m, dtype=bool)
    active = np.ones(m, dtype=bool)
    for _ in range(max_iter):
        if not np.any(active):
            break
        ai = np.flatnonzero(active)
        theta = p[ai] - r[ai, None] * n[ai]
        d, foot, _, _ = ctx.cp.query(theta)
        empty = d >= r[ai] - tol_move
        converged[ai[empty]] = True
        active[ai[empty]] = False
        rest = ai[~empty]
        if len(rest) == 0:
            continue
        q = foot[~empty]
        pq = p[rest] - q
        denom = 2.0 * np.einsum("ij,ij->i", pq, n[rest])
        degenerate = denom <= 1e-12 * bbd
        active[rest[degenerate]] = False
        ok = rest[~degenerate]
        r_new = np.einsum("ij,ij->i", pq, pq)[~degenerate] / denom[~degenerate]
        settled = np.abs(r_new - r[ok]) < tol_move
        r[ok] = r_new
        converged[ok[settled]] = True
        active[ok[settled]] = False
    theta = p - r[:, None] * n
    d, _, _, _ = ctx.cp.query(theta)
    tangent_ok = np.abs(d - r) <= 1e-4 * bbd
    out = []
    for k in range(m):
        klass = cfg.UNKNOWN if (converged[k] and tangent_ok[k]) else cfg.T1_SPIKE
        out.append(Sphere(center=theta[k].copy(), radius=float(r[k]), klass=klass))
    return out


def shrink_sphere(pin: SurfacePoint, ctx: RpdContext,
                  initial_radius: Optional[float] = None,
                  max_iter: int = 30) -> Sphere:
    """Maximal empty ball tangent at ``pin``: starting from a large radius,
    repeatedly pass the sphere through the nearest intruding surface point
    (tangency at the pin preserved) until the ball is empty. Stops when the
    radius change drops below 1e-6 * bbox_diag or after ``max_iter``
    iterations; non-convergence returns the last iterate flagged T1_spike."""
    return shrink_spheres([pin], ctx, initial_radius=initial_radius,
                          max_iter=max_iter)[0]


# ---------------------------------------------------------------------------
# point-tangency refinement
# ---------------------------------------------------------------------------

def cluster_tri_regions(cell: PowerCell, clusters: list) -> list:
    """Footpoint triangle sets per cluster (the surface regions used for
    re-projection in optimize_sphere_tangents)."""
    return [np.unique(cell.samples.tri[idx]) for idx in clusters]


def _closest_in_region(theta: np.ndarray, tris: np.ndarray, ctx: RpdContext) -> np.ndarray:
    tv = ctx.domain.vertices[ctx.domain.boundary_tris[tris]]
    q = np.broadcast_to(theta, (len(tris), 3))
    pts, _ = geom.closest_point_on_triangles(q, tv[:, 0], tv[:, 1], tv[:, 2])
    d = np.linalg.norm(pts - theta, axis=1)
    return pts[int(np.argmin(d))]


def optimize_sphere_tangents(sphere: Sphere, cluster_tris: list, ctx: RpdContext,
                             max_iter: int = 20) -> tuple[Sphere, float]:
    """Gauss-Newton on sum_c (|p_c - center| - r)^2 where p_c is the closest
    surface point within cluster c's region, re-projected each iteration.
    Accepted steps never increase the objective (step halving).

    Returns (sphere, max tangency residual); fewer than 2 clusters returns
    the input with an infinite residual (caller falls back to shrinking)."""
    if len(cluster_tris) < 2:
        return sphere, math.inf
    bbd = ctx.bbox_diag
    m = np.r_[np.asarray(sphere.center, dtype=float), float(sphere.radius)]

    def residuals(mv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ps = np.asarray([_closest_in_region(mv[:3], tris, ctx) for tris in cluster_tris])
        d = np.linalg.norm(ps - mv[:3], axis=1)
        return d - mv[3], ps

    f, ps = residuals(m)
    energy = float(f @ f)
    for _ in range(max_iter):
        d = np.linalg.norm(ps - m[:3], axis=1)
        safe = np.maximum(d, 1e-300)
        jac = np.hstack([-(ps - m[:3]) / safe[:, None], -np.ones((len(ps), 1))])
        step, *_ = np.linalg.lstsq(jac, -f, rcond=None)
        alpha = 1.0
        improved = False
        while alpha > 1e-6:
            trial = m + alpha * step
            f_t, ps_t = residuals(trial)
            e_t = float(f_t @ f_t)
            if e_t <= energy:
                m, f, ps, energy = trial, f_t, ps_t, e_t
                improved = True
                break
            alpha *= 0.5
        if not improved or np.linalg.norm(alpha * step) < 1e-6 * bbd:
            break
    out = Sphere(center=m[:3].copy(), radius=max(float(m[3]), 0.0),
                 klass=sphere.klass, pinned=sphere.pinned)
    return out, float(np.max(np.abs(f)))


# ---------------------------------------------------------------------------
# combined projection policy
# ---------------------------------------------------------------------------

def largest_cluster_pin(cell: PowerCell, clusters: list, ctx: RpdContext) -> SurfacePoint:
    """Representative footpoint of the cell's largest cluster: the member
    sample whose footpoint is closest to the cluster's footpoint centroid."""
    idx = clusters[0]
    foots = cell.samples.foot[idx]
    ctr = foots.mean(axis=0)
    k = int(np.argmin(np.linalg.norm(foots - ctr, axis=1)))
    si = int(idx[k])
    tri = int(cell.samples.tri[si])
    return SurfacePoint(position=cell.samples.foot[si],
                        normal=ctx.cp.tri_normals[tri], tri_index=tri)


def project_sphere(sphere: Sphere, cell: PowerCell, ctx: RpdContext,
                   system: Optional[SqemSystem] = None,
                   clusters: Optional[list] = None) -> Sphere:
    """Project a sphere onto the medial axis: SQEM solve, point-tangency
    refinement, and sphere-shrinking fallback; the final radius is the exact
    distance to the boundary. Pinned spheres are returned unchanged."""
    if sphere.pinned:
        return sphere
    if cell.is_empty():
        d, sp = ctx.cp.closest_point(sphere.center)
        return shrink_sphere(sp, ctx)
    if clusters is None:
        clusters = subvolume_clusters(cell, ctx, radius=sphere.radius)
    if system is None:
        system = assemble_sqem(cell, ctx)

    bbd = ctx.bbox_diag
    cur = sphere
    residual = math.inf
    if system.case_label != cfg.UNDER:
        cur = solve_sqem(system, cur)
        regions = cluster_tri_regions(cell, clusters)
        refined, residual = optimize_sphere_tangents(cur, regions, ctx)
        if residual <= 1e-3 * bbd:
            cur = refined
    if system.case_label == cfg.UNDER or residual > 1e-3 * bbd:
        cur = shrink_sphere(largest_cluster_pin(cell, clusters, ctx), ctx)
        cur.klass = sphere.klass if cur.klass == cfg.UNKNOWN else cur.klass

    d, _ = ctx.cp.closest_point(cur.center)
    return Sphere(center=cur.center.copy(), radius=float(d),
                  klass=cur.klass if cur.klass != cfg.UNKNOWN else sphere.klass,
                  pinned=False)
