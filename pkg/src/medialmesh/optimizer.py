"""Structure-aware particle optimization: Gaussian repulsion energy over KNN
neighbors, gradients projected onto each sphere's admissible motion space,
an L-BFGS inner loop, sphere projection after every pass, and a simplified
feature-preservation step that inserts (and keeps optimizing) seam spheres.

The restricted power diagram and the tangency systems are frozen within each
inner loop and recomputed per outer pass.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize

from . import config as cfg
from . import geom, mesh_io, rpd, structure
from .config import PipelineConfig
from .rpd import (MedialMesh, RpdContext, Sphere, cluster_samples, compute_rpd,
                  dual_medial_mesh, make_context, sample_all, subvolume_clusters)
from . import spheres as sph
from .spheres import SqemSystem, assemble_sqem

log = logging.getLogger(__name__)


@dataclass
class OptState:
    """Mutable optimization state across outer iterations."""

    spheres: list
    sigma: float
    config: PipelineConfig
    outer_iter: int = 0
    energy_history: list = field(default_factory=list)     # (E_before, E_after) per inner loop
    structure_counts: list = field(default_factory=list)   # (n_seam, n_junction) per outer

    def centers(self) -> np.ndarray:
        return np.asarray([s.center for s in self.spheres])

    def free_indices(self) -> np.ndarray:
        return np.asarray([i for i, s in enumerate(self.spheres) if not s.pinned], dtype=int)


def compute_sigma(initial_mesh_area: float, n: int, c_sigma: float = 0.3) -> float:
    """Kernel width: c_sigma * sqrt(area / n), the average spacing of n
    particles spread over the initial medial mesh."""
    if n <= 0:
        raise ValueError("sphere count must be positive")
    if initial_mesh_area <= 0:
        raise ValueError("initial mesh area must be positive")
    return c_sigma * math.sqrt(initial_mesh_area / n)


def mesh_area(mesh: MedialMesh) -> float:
    """Total area of valid faces (triangles spanned by sphere centers)."""
    total = 0.0
    for f in np.flatnonzero(mesh.face_valid):
        i, j, k = (int(v) for v in mesh.faces[f])
        a = mesh.spheres[i].center
        b = mesh.spheres[j].center
        c = mesh.spheres[k].center
        total += 0.5 * float(np.linalg.norm(np.cross(b - a, c - a)))
    return total


# ---------------------------------------------------------------------------
# particle energy and forces
# ---------------------------------------------------------------------------

def particle_pair(theta_i: np.ndarray, theta_j: np.ndarray, sigma: float):
    """Gaussian pair energy exp(-d^2 / (2 sigma^2)) and the energy gradient
    on particle i, (theta_j - theta_i) / sigma^2 * E. Coincident particles
    give energy 1 and zero force."""
    diff = np.asarray(theta_j, dtype=float) - np.asarray(theta_i, dtype=float)
    e = math.exp(-float(diff @ diff) / (2.0 * sigma * sigma))
    return e, diff / (sigma * sigma) * e


def _symmetrized_pairs(neighbor_lists: list) -> np.ndarray:
    """Unordered unique pairs: (i,j) present when j lists i or i lists j."""
    pairs = set()
    for i, nbrs in enumerate(neighbor_lists):
        for j in nbrs:
            j = int(j)
            if j != i:
                pairs.add((min(i, j), max(i, j)))
    if not pairs:
        return np.empty((0, 2), dtype=int)
    return np.asarray(sorted(pairs), dtype=int)


def total_energy_forces(centers: np.ndarray, neighbor_lists: list, sigma: float):
    """Total energy (both directed terms per pair) and per-sphere gradient."""
    centers = np.asarray(centers, dtype=float)
    pairs = _symmetrized_pairs(neighbor_lists)
    grad = np.zeros_like(centers)
    if len(pairs) == 0:
        return 0.0, grad
    pi, pj = pairs[:, 0], pairs[:, 1]
    diff = centers[pj] - centers[pi]
    d2 = np.einsum("ij,ij->i", diff, diff)
    e = np.exp(-d2 / (2.0 * sigma * sigma))
    f = diff * (e / (sigma * sigma))[:, None]
    np.add.at(grad, pi, 2.0 * f)
    np.add.at(grad, pj, -2.0 * f)
    return float(2.0 * e.sum()), grad


def project_gradient(force: np.ndarray, system: Optional[SqemSystem]) -> np.ndarray:
    """Restrict a spatial gradient to the sphere's admissible motion space:
    zero for FULL_RANK (sphere fixed) and UNDER (queued for shrinking),
    v v^T g on a solution line, g - n n^T g on a solution plane."""
    if system is None or system.case_label in (cfg.FULL_RANK, cfg.UNDER):
        return np.zeros(3)
    basis = system.motion_basis
    if basis.shape[1] == 0:
        return np.zeros(3)
    return basis @ (basis.T @ np.asarray(force, dtype=float))


# ---------------------------------------------------------------------------
# inner loop
# ---------------------------------------------------------------------------

def inner_loop(state: OptState, systems: list, ctx: RpdContext) -> dict:
    """L-BFGS over the unpinned centers with projected gradients; the
    tangency systems stay fixed. Stops when the max-norm of the projected
    gradient falls below grad_tol or after max_inner iterations. Radii are
    refreshed to the exact boundary distance afterwards."""
    conf = state.config
    free = state.free_indices()
    if len(free) == 0:
        return {"evals": 0, "e0": 0.0, "e1": 0.0, "converged": True}
    centers = state.centers()
    frozen_neighbors = geom.knn(centers, conf.knn)
    evals = 0

    def fun(x: np.ndarray):
        nonlocal evals
        evals += 1
        pts = centers.copy()
        pts[free] = x.reshape(-1, 3)
        nbrs = geom.knn(pts, conf.knn) if conf.knn_refresh_per_eval else frozen_neighbors
        energy, grad = total_energy_forces(pts, nbrs, state.sigma)
        proj = np.zeros((len(free), 3))
        for k, i in enumerate(free):
            proj[k] = project_gradient(grad[i], systems[i])
        return energy, proj.ravel()

    x0 = centers[free].ravel()
    e0, _ = fun(x0)
    res = minimize(fun, x0, jac=True, method="L-BFGS-B",
                   options={"maxcor": conf.lbfgs_memory, "maxiter": conf.max_inner,
                            "gtol": conf.grad_tol, "ftol": 0.0})
    if res.status == 2:
        log.warning("inner loop line search stopped early: %s", res.message)
    new_centers = res.x.reshape(-1, 3)
    for k, i in enumerate(free):
        state.spheres[i].center = new_centers[k].copy()
    # radius = exact distance to the boundary
    d, _, _, _ = ctx.cp.query(new_centers)
    for k, i in enumerate(free):
        state.spheres[i].radius = float(d[k])
    e1 = float(res.fun)
    state.energy_history.append((float(e0), e1))
    return {"evals": evals, "e0": float(e0), "e1": e1,
            "converged": bool(res.success or res.status == 1)}


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def _merge_duplicates(spheres_list: list, dist_tol: float) -> list:
    """Union near-coincident spheres (center distance < dist_tol, radius
    ratio within [0.9, 1.1]); keeps the lowest-index representative."""
    from scipy.spatial import cKDTree

    if not spheres_list:
        return spheres_list
    centers = np.asarray([s.center for s in spheres_list])
    radii = np.asarray([s.radius for s in spheres_list])
    parent = list(range(len(spheres_list)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    tree = cKDTree(centers)
    for i, j in sorted(tree.query_pairs(dist_tol)):
        hi = max(radii[i], radii[j])
        lo = min(radii[i], radii[j])
        if hi <= 0 or lo / hi >= 0.9:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
    return [s for i, s in enumerate(spheres_list) if find(i) == i]


def initialize(ctx: RpdContext, gamma: float, rng: np.random.Generator):
    """Seed spheres: shrink one sphere per Poisson-disk pin, compute the
    kernel width from the initial dual mesh, merge near-duplicates, and add
    pinned zero-radius spheres along convex-sharp polylines and corners.

    Returns (spheres, sigma)."""
    domain = ctx.domain
    pins = geom.poisson_disk_pins(domain, gamma, rng)
    if not pins:
        raise ValueError("no surface pins produced; check gamma")
    seeds = sph.shrink_spheres(pins, ctx)

    cells = compute_rpd(domain, seeds, ctx)
    mesh = dual_medial_mesh(cells, seeds, ctx)
    area = mesh_area(mesh)
    if area <= 0:
        # No dual faces (degenerate start): fall back to pin-disk scale
        area = math.pi * (domain.bbox_diag / gamma) ** 2 * max(len(seeds), 1)
    sigma = compute_sigma(area, len(seeds), ctx.config.c_sigma)

    seeds = _merge_duplicates(seeds, sigma / 4.0)

    spacing = domain.bbox_diag / gamma
    corner_pos = {tuple(domain.vertices[c]) for c in domain.feature_corners}
    out = list(seeds)
    for chain in domain.convex_polylines():
        pts = geom.sample_polyline(domain.vertices[chain], spacing)
        for p in pts:
            if tuple(p) in corner_pos:
                continue
            out.append(Sphere(center=p.copy(), radius=0.0,
                              klass=cfg.T1_2_FEATURE_EDGE, pinned=True))
    for c in domain.feature_corners:
        out.append(Sphere(center=domain.vertices[c].copy(), radius=0.0,
                          klass=cfg.T1_3_CORNER, pinned=True))
    return out, sigma


# ---------------------------------------------------------------------------
# feature preservation
# ---------------------------------------------------------------------------

def _cluster_mean_dirs(cell, clusters) -> np.ndarray:
    dirs = []
    for idx in clusters:
        m = cell.samples.n[idx].mean(axis=0)
        nrm = np.linalg.norm(m)
        dirs.append(m / nrm if nrm > 0 else m)
    return np.asarray(dirs) if dirs else np.empty((0, 3))


def _same_sheet(dirs_i: np.ndarray, dirs_j: np.ndarray, cos_theta: float) -> bool:
    """Both cells span two sub-volumes whose directions pair up: the edge
    stays inside one sheet and cannot need a seam sphere."""
    if len(dirs_i) != 2 or len(dirs_j) != 2:
        return False
    m = dirs_i @ dirs_j.T
    return bool((m.max(axis=1) > cos_theta).all() and (m.max(axis=0) > cos_theta).all())


def preserve_features(state: OptState, cells: list, clusters_list: list,
                      mesh: MedialMesh, ctx: RpdContext) -> int:
    """Insert a sphere at the midpoint of every valid edge whose dual region
    spans >= 3 sub-volumes while neither endpoint is a seam or junction
    sphere; inserted spheres keep moving in later passes. Insertions are
    capped at 20% of the current sphere count."""
    conf = ctx.config
    spheres_list = state.spheres
    cap = max(1, math.ceil(conf.insert_cap_ratio * len(spheres_list)))
    cos_theta = math.cos(math.radians(conf.theta_cluster_deg))
    mean_dirs = [_cluster_mean_dirs(c, rpd.significant_clusters(cl)) if c.samples is not None
                 else np.empty((0, 3))
                 for c, cl in zip(cells, clusters_list)]

    candidates = []
    for (i, j) in mesh.valid_edges():
        i, j = int(i), int(j)
        if i >= len(cells) or j >= len(cells):
            continue
        ki, kj = spheres_list[i].klass, spheres_list[j].klass
        if ki in (cfg.T3_SEAM, cfg.T4_JUNCTION) or kj in (cfg.T3_SEAM, cfg.T4_JUNCTION):
            continue
        if cells[i].samples is None or cells[j].samples is None:
            continue
        if _same_sheet(mean_dirs[i], mean_dirs[j], cos_theta):
            continue
        si, sj = cells[i].samples, cells[j].samples
        n = np.vstack([si.n, sj.n])
        foot = np.vstack([si.foot, sj.foot])
        tri = np.concatenate([si.tri, sj.tri])
        radius = 0.5 * (spheres_list[i].radius + spheres_list[j].radius)
        union = rpd.significant_clusters(
            cluster_samples(n, foot, ctx.cp.tri_normals[tri], radius, ctx))
        if len(union) >= 3:
            candidates.append((-len(union), i, j, union, foot, tri))

    candidates.sort(key=lambda c: (c[0], c[1], c[2]))
    inserted = 0
    min_sep = state.sigma / 4.0
    centers = np.asarray([s.center for s in spheres_list])
    radii = np.asarray([s.radius for s in spheres_list])
    for _, i, j, union, foot, tri in candidates:
        if inserted >= cap:
            break
        mid = 0.5 * (spheres_list[i].center + spheres_list[j].center)
        d, _, _, _ = ctx.cp.query(mid[None, :])
        seed = Sphere(center=mid, radius=float(d[0]))
        regions = [np.unique(tri[idx]) for idx in union]
        refined, residual = sph.optimize_sphere_tangents(seed, regions, ctx)
        if math.isfinite(residual):
            seed = refined
        dd, _, _, _ = ctx.cp.query(seed.center[None, :])
        seed.radius = float(dd[0])
        # a sphere that lands on an existing one would only be merged back
        dist2 = np.einsum("nd,nd->n", centers - seed.center, centers - seed.center)
        near = dist2 < min_sep * min_sep
        if np.any(near):
            hi = np.maximum(radii[near], seed.radius)
            lo = np.minimum(radii[near], seed.radius)
            if np.any((hi <= 0) | (lo / np.maximum(hi, 1e-300) >= 0.9)):
                continue
        spheres_list.append(seed)
        centers = np.vstack([centers, seed.center[None, :]])
        radii = np.append(radii, seed.radius)
        inserted += 1
    return inserted


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------

@dataclass
class PipelineResult:
    mesh: MedialMesh
    state: OptState
    ctx: RpdContext
    domain: object                       # normalized TetDomain
    transform: mesh_io.NormalizeTransform
    cells: list
    clusters: list
    sigma: float
    faces_removed: int
    log: list


def _prep(state: OptState, ctx: RpdContext, rng: np.random.Generator):
    """One RPD pass: cells, samples, clusters, classification, dual mesh."""
    cells = compute_rpd(ctx.domain, state.spheres, ctx)
    sample_all(cells, ctx, rng)
    clusters = []
    for cell, sphere in zip(cells, state.spheres):
        if cell.is_empty() or cell.samples is None:
            clusters.append([])
        else:
            clusters.append(subvolume_clusters(cell, ctx, radius=sphere.radius))
    structure.classify_all(state.spheres, cells, clusters)
    mesh = dual_medial_mesh(cells, state.spheres, ctx)
    return cells, clusters, mesh


def run_pipeline(domain, config: Optional[PipelineConfig] = None,
                 extra_spheres: Optional[list] = None,
                 progress: Optional[Callable[[dict], None]] = None) -> PipelineResult:
    """Full structure-aware optimization: initialize, iterate (inner particle
    loop, sphere projection, feature preservation) until the seam/junction
    counts stabilize, then extract and clean the medial structure.
    Deterministic for a fixed config.seed."""
    conf = config or PipelineConfig()
    rng = np.random.default_rng(conf.seed)

    if len(domain.feature_edges) == 0 and conf.phi_deg > 0:
        domain = mesh_io.detect_features(domain, math.radians(conf.phi_deg))
    domain, transform = mesh_io.normalize(domain)
    ctx = make_context(domain, conf)

    spheres_list, sigma = initialize(ctx, conf.gamma, rng)
    if extra_spheres:
        spheres_list.extend(s.copy() for s in extra_spheres)
    state = OptState(spheres=spheres_list, sigma=sigma, config=conf)
    records: list[dict] = []

    cells, clusters, mesh = _prep(state, ctx, rng)
    preserve_features(state, cells, clusters, mesh, ctx)

    prev_sj: Optional[int] = None
    for outer in range(1, conf.max_outer + 1):
        t0 = time.time()
        state.outer_iter = outer
        cells, clusters, mesh = _prep(state, ctx, rng)
        systems: list[Optional[SqemSystem]] = []
        for cell, sphere in zip(cells, state.spheres):
            if sphere.pinned or cell.is_empty() or cell.samples is None:
                systems.append(None)
            else:
                systems.append(assemble_sqem(cell, ctx))
        n_seam, n_junc = structure.seam_junction_counts(state.spheres)
        state.structure_counts.append((n_seam, n_junc))

        info = inner_loop(state, systems, ctx)
        # Projected gradients kept each sphere on its solution manifold, so
        # this pass's systems/clusters stay valid for the projection step.
        for i, sphere in enumerate(state.spheres):
            if i >= len(cells) or sphere.pinned:
                continue
            state.spheres[i] = sph.project_sphere(sphere, cells[i], ctx,
                                                  system=systems[i],
                                                  clusters=clusters[i] or None)
        inserted = preserve_features(state, cells, clusters, mesh, ctx)
        before_merge = len(state.spheres)
        state.spheres = _merge_duplicates(state.spheres, sigma / 4.0)
        merged = before_merge - len(state.spheres)

        sj = n_seam + n_junc
        rec = {"outer": outer, "spheres": len(state.spheres), "seams": n_seam,
               "junctions": n_junc, "inserted": inserted, "merged": merged,
               "energy_before": info["e0"], "energy_after": info["e1"],
               "lbfgs_evals": info["evals"], "seconds": round(time.time() - t0, 3)}
        records.append(rec)
        if progress:
            progress(rec)
        log.info("outer %d: %d spheres, %d seam, %d junction, +%d inserted, -%d merged, E %.4g -> %.4g",
                 outer, len(state.spheres), n_seam, n_junc, inserted, merged, info["e0"], info["e1"])
        if prev_sj is not None and inserted == 0 and merged == 0:
            if abs(sj - prev_sj) / max(sj, 1) < conf.outer_tol:
                break
        prev_sj = sj

    cells, clusters, mesh = _prep(state, ctx, rng)
    mesh = structure.prune_invalid(mesh, cells, ctx, clusters)
    mesh, faces_removed = structure.enforce_thinness(mesh)
    mesh = structure.extract_structure(mesh)
    return PipelineResult(mesh=mesh, state=state, ctx=ctx, domain=domain,
                          transform=transform, cells=cells, clusters=clusters,
                          sigma=sigma, faces_removed=faces_removed, log=records)
