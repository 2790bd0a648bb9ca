"""Scan preprocessing and pairwise scan matching.

Raw range scans are taken on a platform that tilts on rough ground, so
beam endpoints are first projected onto the plane orthogonal to measured
gravity. Consecutive projected scans are then registered with a robust
point-to-line matcher to build an odometry chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .core import (
    GravityVector,
    HuberLoss,
    ImuSample,
    PlanarPose,
    Scan2D,
    Timestamp,
    Vec3,
    compose,
    rotation_aligning,
    wrap_angle,
)

DOWN = np.array([0.0, 0.0, -1.0])


class DegenerateScanError(ValueError):
    """Scan has too few usable returns to work with."""


@dataclass(eq=False)
class ProjectedScan:
    """Gravity-leveled scan: 2D points in the horizontal sensor plane."""

    stamp: Timestamp
    points_xy: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points_xy, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise ValueError("projected points must be finite")
        self.points_xy = pts
        self.stamp = int(self.stamp)

    def __len__(self) -> int:
        return self.points_xy.shape[0]


@dataclass(frozen=True)
class MatchResult:
    """Outcome of registering a moving scan against a reference scan.

    relative_pose maps moving-scan coordinates into the reference frame.
    final_cost is the normalized robust matching cost at that pose (beams
    without a valid correspondence saturate at the distance gate, so costs
    are comparable across poses). A result that did not converge keeps the
    caller's initial guess rather than silently claiming the identity.
    """

    relative_pose: PlanarPose
    final_cost: float
    inlier_count: int
    converged: bool


@dataclass(frozen=True)
class MatcherConfig:
    max_iterations: int = 50
    update_tolerance: float = 1e-6
    distance_gate: float = 0.5
    normal_angle_gate: float = math.radians(45.0)
    min_inliers: int = 25
    huber: HuberLoss = field(default_factory=lambda: HuberLoss(0.1))
    normal_neighbors: int = 8
    normal_radius: float = 0.3
    normal_flatness: float = 0.02
    min_point_norm: float = 1e-9
    initial_damping: float = 1e-4


def filter_gravity(samples: list[ImuSample], alpha: float = 0.05) -> list[GravityVector]:
    """Exponential moving average over raw accelerometer readings.

    The filter state starts at the first sample; each output direction is
    the normalized running average at that stamp.
    """
    if not samples:
        raise ValueError("empty IMU stream")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must be in (0, 1]")
    state = samples[0].accel.as_array()
    out: list[GravityVector] = []
    for sample in samples:
        state = (1.0 - alpha) * state + alpha * sample.accel.as_array()
        norm = np.linalg.norm(state)
        if norm < 1e-12:
            raise ValueError("gravity filter collapsed to zero vector")
        out.append(GravityVector(sample.stamp, Vec3.from_array(state / norm)))
    return out


def associate_gravity(
    scans: list[Scan2D],
    gravity: list[GravityVector],
    max_offset_ns: int = 100_000_000,
) -> tuple[list[tuple[Scan2D, GravityVector]], int]:
    """Pair each scan with the gravity sample nearest in time.

    Ties go to the earlier sample. Scans whose nearest sample is more than
    max_offset_ns away are dropped; the second return value counts them.
    Both streams must be time-sorted and the gravity stream non-empty.
    """
    if not gravity:
        raise ValueError("empty IMU stream")
    g_stamps = np.array([g.stamp for g in gravity], dtype=np.int64)
    if np.any(np.diff(g_stamps) < 0):
        raise ValueError("gravity stream is not time-sorted")
    s_stamps = np.array([s.stamp for s in scans], dtype=np.int64)
    if np.any(np.diff(s_stamps) < 0):
        raise ValueError("scan stream is not time-sorted")
    pairs: list[tuple[Scan2D, GravityVector]] = []
    dropped = 0
    right = np.searchsorted(g_stamps, s_stamps, side="left")
    for scan, r in zip(scans, right):
        candidates = [i for i in (r - 1, r) if 0 <= i < len(gravity)]
        best = min(candidates, key=lambda i: (abs(int(g_stamps[i] - scan.stamp)), g_stamps[i]))
        if abs(int(g_stamps[best] - scan.stamp)) > max_offset_ns:
            dropped += 1
            continue
        pairs.append((scan, gravity[best]))
    return pairs, dropped


def scan_to_points(scan: Scan2D) -> np.ndarray:
    """Beam endpoints with finite returns, as (N, 3) sensor-frame points."""
    mask = scan.finite_mask()
    r = scan.ranges[mask]
    a = scan.angles()[mask]
    return np.column_stack([r * np.cos(a), r * np.sin(a), np.zeros(r.size)])


def project_points_to_plane(points: np.ndarray, gravity: np.ndarray) -> np.ndarray:
    """Remove each point's component along gravity.

    The result lies in the plane through the origin orthogonal to gravity;
    applying the projection twice changes nothing.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    g = np.asarray(gravity, dtype=float).reshape(3)
    return pts - np.outer((pts @ g) / float(g @ g), g)


def gravity_project(scan: Scan2D, gravity: GravityVector, min_point_norm: float = 1e-9) -> ProjectedScan:
    """Level a scan: project beam endpoints onto the horizontal plane.

    The in-plane basis is chosen by the smallest rotation taking the
    gravity direction onto -z, so a level scan passes through bit-for-bit.
    Points that project onto the origin (beams parallel to gravity) are
    discarded as zero-range.
    """
    points = scan_to_points(scan)
    if points.shape[0] < 2:
        raise DegenerateScanError("scan has fewer than 2 finite returns")
    g = gravity.direction.as_array()
    flat = project_points_to_plane(points, g)
    basis = rotation_aligning(g, DOWN)
    leveled = flat @ basis.T
    xy = leveled[:, :2]
    keep = np.linalg.norm(xy, axis=1) >= min_point_norm
    xy = xy[keep]
    if xy.shape[0] < 2:
        raise DegenerateScanError("projection left fewer than 2 usable points")
    return ProjectedScan(scan.stamp, xy)


def estimate_normals(
    points: np.ndarray,
    neighbors: int = 8,
    radius: float = 0.3,
    flatness: float = 0.02,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-point 2D normals from local neighborhoods.

    Returns (normals, valid). A normal is valid when at least 3 neighbors
    fall within the radius and the neighborhood is line-like (smaller over
    larger covariance eigenvalue at most ``flatness``); corner
    neighborhoods mixing two surfaces fail that test and would otherwise
    yield diagonal normals biasing registration. Normals are oriented to
    face the sensor origin.
    """
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    k = min(neighbors, n)
    tree = cKDTree(pts)
    dist, idx = tree.query(pts, k=k)
    if k == 1:
        dist, idx = dist[:, None], idx[:, None]
    near = dist <= radius
    counts = near.sum(axis=1)
    valid = counts >= 3
    nbr = pts[idx]  # (n, k, 2)
    w = near.astype(float)[:, :, None]
    denom = np.maximum(counts, 1)[:, None]
    mean = (nbr * w).sum(axis=1) / denom
    centered = (nbr - mean[:, None, :]) * w
    cov = np.einsum("nki,nkj->nij", centered, centered) / denom[:, :, None]
    eigvals, eigvecs = np.linalg.eigh(cov)
    normals = eigvecs[:, :, 0]  # eigenvector of the smaller eigenvalue
    valid &= eigvals[:, 1] > 1e-12
    valid &= eigvals[:, 0] <= flatness * eigvals[:, 1]
    flip = np.einsum("ni,ni->n", normals, pts) > 0.0
    normals[flip] *= -1.0
    return normals, valid


class _MatchProblem:
    """Precomputed per-pair matching state shared by cost and solver."""

    def __init__(self, reference: ProjectedScan, moving: ProjectedScan, config: MatcherConfig):
        self.cfg = config
        self.ref = reference.points_xy
        self.mov = moving.points_xy
        ref_normals, ref_valid = estimate_normals(
            self.ref, config.normal_neighbors, config.normal_radius, config.normal_flatness
        )
        # Correspondences are only drawn from reference points whose local
        # surface orientation is trustworthy. Isolated returns and corner
        # neighborhoods stay out of the search tree entirely, so the
        # nearest-match index can never flip between a usable and an
        # unusable point as the pose moves; such flips reward the solver
        # for warping the pose to capture extra correspondences.
        self.usable = np.flatnonzero(ref_valid)
        self.line_points = self.ref[self.usable]
        self.line_normals = ref_normals[self.usable]
        self.tree = cKDTree(self.line_points) if self.usable.size else None
        self.mov_normals, self.mov_valid = estimate_normals(
            self.mov, config.normal_neighbors, config.normal_radius, config.normal_flatness
        )
        self.cos_gate = math.cos(config.normal_angle_gate)

    def associate(self, state: np.ndarray):
        cfg = self.cfg
        n_mov = self.mov.shape[0]
        c, s = math.cos(state[2]), math.sin(state[2])
        rot = np.array([[c, -s], [s, c]])
        moved = self.mov @ rot.T + state[:2]
        if self.tree is None:
            norms = np.full(n_mov, cfg.distance_gate)
            return {
                "cost": float(cfg.huber.values(norms).sum() / n_mov),
                "moved": moved,
                "idx": np.zeros(n_mov, dtype=int),
                "line": np.zeros(n_mov, dtype=bool),
                "line_res": np.zeros(n_mov),
                "delta": np.zeros_like(moved),
                "inliers": 0,
            }
        dist, idx = self.tree.query(moved)
        within = dist <= cfg.distance_gate
        rotated_normals = self.mov_normals @ rot.T
        agreement = np.abs(np.einsum("ni,ni->n", rotated_normals, self.line_normals[idx]))
        # Both sides must present a trustworthy flat patch and the patches
        # must agree in orientation; a mover with an unknown normal cannot
        # be told apart from a cross-surface mismatch, so it saturates.
        line = within & self.mov_valid & (agreement >= self.cos_gate)
        delta = moved - self.line_points[idx]
        line_res = np.einsum("ni,ni->n", self.line_normals[idx], delta)
        norms = np.full(n_mov, cfg.distance_gate)
        norms[line] = np.abs(line_res[line])
        cost = float(cfg.huber.values(norms).sum() / n_mov)
        return {
            "cost": cost,
            "moved": moved,
            "idx": idx,
            "line": line,
            "line_res": line_res,
            "delta": delta,
            "inliers": int(np.count_nonzero(line)),
        }

    def normal_equations(self, state: np.ndarray, assoc: dict) -> tuple[np.ndarray, np.ndarray]:
        cfg = self.cfg
        moved_centered = assoc["moved"] - state[:2]  # rotated moving points
        dtheta = np.column_stack([-moved_centered[:, 1], moved_centered[:, 0]])
        h = np.zeros((3, 3))
        g = np.zeros(3)
        line = assoc["line"]
        if np.any(line):
            nrm = self.line_normals[assoc["idx"][line]]
            res = assoc["line_res"][line]
            jac = np.column_stack([nrm, np.einsum("ni,ni->n", nrm, dtheta[line])])
            w = cfg.huber.weights(np.abs(res))
            h += np.einsum("n,ni,nj->ij", w, jac, jac)
            g += np.einsum("n,ni,n->i", w, jac, res)
        return h, g


def matching_cost(reference: ProjectedScan, moving: ProjectedScan, pose: PlanarPose, config: MatcherConfig | None = None) -> float:
    """Normalized robust matching cost of a pose (diagnostic)."""
    cfg = config if config is not None else MatcherConfig()
    problem = _MatchProblem(reference, moving, cfg)
    return problem.associate(np.array([pose.x, pose.y, pose.theta]))["cost"]


def match_scans(
    reference: ProjectedScan,
    moving: ProjectedScan,
    initial_guess: PlanarPose = PlanarPose(),
    config: MatcherConfig | None = None,
) -> MatchResult:
    """Estimate the pose taking moving-scan points into the reference frame.

    Robust point-to-line registration: nearest-neighbor correspondences
    gated by distance and normal agreement, Huber-weighted normal
    equations, and a damped step that is only accepted when the
    re-associated cost does not increase. Beams without a usable
    correspondence saturate at the distance gate. The cost at the
    returned pose never exceeds the cost at the initial guess.
    """
    cfg = config if config is not None else MatcherConfig()
    if len(reference) < 2 or len(moving) < 2:
        raise DegenerateScanError("matching needs at least 2 points per scan")
    problem = _MatchProblem(reference, moving, cfg)
    state = np.array([initial_guess.x, initial_guess.y, initial_guess.theta])
    assoc = problem.associate(state)
    cost = assoc["cost"]
    damping = cfg.initial_damping
    converged = False
    for _ in range(cfg.max_iterations):
        h, g = problem.normal_equations(state, assoc)
        scale = np.diag(np.maximum(np.diag(h), 1e-12))
        try:
            step = np.linalg.solve(h + damping * scale, -g)
        except np.linalg.LinAlgError:
            break
        candidate = state + step
        candidate[2] = wrap_angle(candidate[2])
        cand_assoc = problem.associate(candidate)
        small = float(np.linalg.norm(step)) < cfg.update_tolerance
        if cand_assoc["cost"] <= cost:
            state, assoc, cost = candidate, cand_assoc, cand_assoc["cost"]
            damping = max(damping * 0.1, 1e-12)
            converged = True  # survives loop exhaustion: cost still decreasing
            if small:
                break
        else:
            damping *= 10.0
            if small:
                # The damped step shrank below tolerance without improving:
                # the current state is the minimum.
                converged = True
                break
            converged = False
            if damping > 1e10:
                break
    converged = converged and assoc["inliers"] >= cfg.min_inliers
    return MatchResult(
        relative_pose=PlanarPose(float(state[0]), float(state[1]), float(state[2])),
        final_cost=cost,
        inlier_count=assoc["inliers"],
        converged=converged,
    )


@dataclass(eq=False)
class OdometryChain:
    """Dead-reckoned trajectory from consecutive scan matches.

    entries holds (node_id, pose-in-frame-of-node-0); relatives[k] is the
    transform used between nodes k and k+1. Nodes whose match failed reuse
    the previous relative (constant velocity) and are listed in
    fallback_nodes.
    """

    entries: list[tuple[int, PlanarPose]]
    relatives: list[PlanarPose]
    fallback_nodes: list[int]
    results: list[MatchResult]


def build_odometry_chain(scans: list[ProjectedScan], config: MatcherConfig | None = None) -> OdometryChain:
    """Chain consecutive scan matches into poses for nodes 0..N-1."""
    if not scans:
        raise ValueError("no scans to chain")
    cfg = config if config is not None else MatcherConfig()
    entries: list[tuple[int, PlanarPose]] = [(0, PlanarPose())]
    relatives: list[PlanarPose] = []
    fallbacks: list[int] = []
    results: list[MatchResult] = []
    guess = PlanarPose()
    for k in range(1, len(scans)):
        result = match_scans(scans[k - 1], scans[k], initial_guess=guess, config=cfg)
        results.append(result)
        if result.converged:
            rel = result.relative_pose
        else:
            rel = guess
            fallbacks.append(k)
        relatives.append(rel)
        entries.append((k, compose(entries[-1][1], rel)))
        guess = rel
    return OdometryChain(entries, relatives, fallbacks, results)
