"""Session-to-map pipeline.

Chains the front end (gravity leveling, scan-to-keyframe odometry), wall
extrusion, thermal projection, loop-closure detection, and pose-graph
refinement into one deterministic run over a loaded session.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..core import PlanarPose, Timestamp, compose, inverse, planar_to_rigid3, wrap_angle
from ..pose_graph import (
    GraphEdge,
    GraphNode,
    PoseGraph,
    SolverWeights,
    detect_loop_closures,
    optimize,
    refine,
)
from ..scan_frontend import (
    DegenerateScanError,
    MatcherConfig,
    ProjectedScan,
    associate_gravity,
    filter_gravity,
    gravity_project,
    match_scans,
)
from ..sim import SessionDataset, trajectory_ate
from ..thermal_map import ThermalImage, ThermalPointCloud, WallCloud, accumulate_map, extrude_walls, project_to_thermal


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs for the mapping pipeline; defaults fit hand-held indoor scans."""

    gravity_alpha: float = 0.05
    max_gravity_offset_ns: int = 100_000_000
    keyframe_distance: float = 0.08
    keyframe_angle: float = math.radians(10.0)
    matcher: MatcherConfig = field(default_factory=MatcherConfig)
    thermal_window_ns: int = 250_000_000
    motion_smooth_xy: float = 0.01
    motion_smooth_theta: float = math.radians(1.0)
    cell_spread_floor: float = 0.5
    cell_spread_noise_factor: float = 6.0
    bilinear: bool = True
    loop_min_gap: int = 10
    loop_max_distance: float = 2.0
    loop_max_cost: float = 0.01
    loop_min_inlier_ratio: float = 0.6
    loop_stride: int = 3
    loop_max_candidates: int = 4000
    loop_max_per_node: int = 2
    weights: SolverWeights = field(default_factory=SolverWeights)
    # Point-pair refinement rounds between loop-closure clouds. Zero keeps
    # the relative-pose graph alone, which is the accurate choice when scan
    # matching is strong: mutual-NN pairs between two beam-sampled
    # extrusions inherit the sampling offsets (every z level repeats its
    # column's offset), and several hundred weight-1 pair rows out-pull the
    # weight-5 relative-pose rows. Enable a few rounds when loop relatives
    # are weak and map stitching matters more than millimeter trajectory
    # accuracy.
    refine_rounds: int = 0
    pair_distance: float = 0.3
    max_pairs: int = 500
    voxel_size: float = 0.05


@dataclass(eq=False)
class MappingResult:
    cloud: ThermalPointCloud
    trajectory: list[tuple[Timestamp, PlanarPose]]
    graph: PoseGraph
    diagnostics: dict[str, object]


def estimate_image_noise(image: ThermalImage) -> float:
    """Robust per-pixel noise level from horizontal first differences.

    The median absolute difference ignores the few pixels that straddle
    scene edges, so smooth-but-warm scenes do not read as noisy.
    """
    d = np.diff(image.temperatures, axis=1)
    return 1.4826 * float(np.median(np.abs(d))) / math.sqrt(2.0)


def _pose_lerp(a: PlanarPose, b: PlanarPose, frac: float) -> PlanarPose:
    return PlanarPose(
        a.x + (b.x - a.x) * frac,
        a.y + (b.y - a.y) * frac,
        a.theta + wrap_angle(b.theta - a.theta) * frac,
    )


class _DenseTrack:
    """Per-scan poses with interpolation and local-uniformity checks."""

    def __init__(self, stamps: np.ndarray, poses: list[PlanarPose]):
        self.stamps = stamps
        self.poses = poses

    def interval_of(self, stamp: int) -> int:
        i = int(np.searchsorted(self.stamps, stamp, side="right") - 1)
        return max(0, min(i, len(self.poses) - 2))

    def pose_at(self, stamp: int) -> PlanarPose:
        if len(self.poses) == 1:
            return self.poses[0]
        i = self.interval_of(stamp)
        t0, t1 = int(self.stamps[i]), int(self.stamps[i + 1])
        frac = 0.0 if t1 == t0 else (stamp - t0) / (t1 - t0)
        return _pose_lerp(self.poses[i], self.poses[i + 1], min(max(frac, 0.0), 1.0))

    def _motion(self, i: int) -> tuple[np.ndarray, float]:
        a, b = self.poses[i], self.poses[i + 1]
        return np.array([b.x - a.x, b.y - a.y]), wrap_angle(b.theta - a.theta)

    def is_smooth_at(self, stamp: int, tol_xy: float, tol_theta: float) -> bool:
        """True when motion around the stamp looks locally uniform.

        Interpolated poses are only trustworthy while the platform moves at
        constant velocity; intervals bracketing a speed or turn change are
        rejected so their thermal frames are skipped.
        """
        if len(self.poses) < 2:
            return True
        i = self.interval_of(stamp)
        v_i, s_i = self._motion(i)
        for j in (i - 1, i + 1):
            if 0 <= j < len(self.poses) - 1:
                v_j, s_j = self._motion(j)
                if float(np.linalg.norm(v_i - v_j)) > tol_xy:
                    return False
                if abs(wrap_angle(s_i - s_j)) > tol_theta:
                    return False
        return True


def run_mapping(dataset: SessionDataset, config: PipelineConfig | None = None) -> MappingResult:
    """Reconstruct a temperature-annotated wall map from one session.

    The map and trajectory live in the frame of the first usable scan
    (node 0). Deterministic: identical datasets and config produce
    identical results.
    """
    cfg = config if config is not None else PipelineConfig()
    if not dataset.scans:
        raise ValueError("session has no scans")

    gravity = filter_gravity(dataset.imu, alpha=cfg.gravity_alpha)
    pairs, dropped_gravity = associate_gravity(dataset.scans, gravity, max_offset_ns=cfg.max_gravity_offset_ns)

    projected: list[ProjectedScan] = []
    degenerate = 0
    for scan, g in pairs:
        try:
            projected.append(gravity_project(scan, g))
        except DegenerateScanError:
            degenerate += 1
    if not projected:
        raise ValueError("no usable scans after gravity leveling")

    # Scan-to-keyframe odometry: every scan is matched against the current
    # keyframe, so drift accumulates per keyframe hop rather than per scan.
    kf_indices = [0]
    kf_poses = [PlanarPose()]
    kf_relatives: list[PlanarPose] = []
    scan_poses = [PlanarPose()]
    fallbacks = 0
    rel_to_kf = PlanarPose()
    last_step = PlanarPose()
    for k in range(1, len(projected)):
        guess = compose(rel_to_kf, last_step)
        result = match_scans(projected[kf_indices[-1]], projected[k], initial_guess=guess, config=cfg.matcher)
        if result.converged:
            rel = result.relative_pose
        else:
            rel = guess
            fallbacks += 1
        last_step = compose(inverse(rel_to_kf), rel)
        rel_to_kf = rel
        scan_poses.append(compose(kf_poses[-1], rel))
        if math.hypot(rel.x, rel.y) >= cfg.keyframe_distance or abs(rel.theta) >= cfg.keyframe_angle:
            kf_indices.append(k)
            kf_relatives.append(rel)
            kf_poses.append(scan_poses[-1])
            rel_to_kf = PlanarPose()

    kf_scans = [projected[i] for i in kf_indices]
    extrusion = dataset.calib.extrusion()
    clouds: list[WallCloud] = [extrude_walls(s, extrusion, node_id=n) for n, s in enumerate(kf_scans)]

    # Thermal attachment: each frame colors the keyframe cloud nearest in
    # time, using the camera pose interpolated from the dense scan track.
    scan_stamps = np.array([p.stamp for p in projected], dtype=np.int64)
    node_stamps = scan_stamps[kf_indices]
    track = _DenseTrack(scan_stamps, scan_poses)
    frames_used = 0
    frames_far = 0
    frames_unsteady = 0
    for frame in dataset.frames:
        slot = int(np.searchsorted(node_stamps, frame.stamp))
        candidates = [i for i in (slot - 1, slot) if 0 <= i < len(node_stamps)]
        node = min(candidates, key=lambda i: abs(int(node_stamps[i]) - frame.stamp))
        if abs(int(node_stamps[node]) - frame.stamp) > cfg.thermal_window_ns:
            frames_far += 1
            continue
        if not track.is_smooth_at(frame.stamp, cfg.motion_smooth_xy, cfg.motion_smooth_theta):
            frames_unsteady += 1
            continue
        sensor_at_frame = planar_to_rigid3(track.pose_at(frame.stamp), dataset.calib.sensor_height)
        node_lift = planar_to_rigid3(kf_poses[node], dataset.calib.sensor_height)
        camera_pose = dataset.calib.camera_extrinsic.compose(sensor_at_frame.inverse()).compose(node_lift)
        gate = max(cfg.cell_spread_floor, cfg.cell_spread_noise_factor * estimate_image_noise(frame))
        clouds[node] = project_to_thermal(
            clouds[node],
            camera_pose,
            dataset.calib.intrinsics,
            frame,
            bilinear=cfg.bilinear,
            max_cell_spread=gate,
        )
        frames_used += 1

    loop_edges, loop_rejected = detect_loop_closures(
        kf_scans,
        kf_poses,
        matcher_config=cfg.matcher,
        min_index_gap=cfg.loop_min_gap,
        max_distance=cfg.loop_max_distance,
        max_cost=cfg.loop_max_cost,
        min_inlier_ratio=cfg.loop_min_inlier_ratio,
        stride=cfg.loop_stride,
        max_candidates=cfg.loop_max_candidates,
        max_per_node=cfg.loop_max_per_node,
    )

    nodes = [GraphNode(n, pose, cloud) for n, (pose, cloud) in enumerate(zip(kf_poses, clouds))]
    edges: list[GraphEdge] = [
        GraphEdge(n, n + 1, rel, kind="odometry") for n, rel in enumerate(kf_relatives)
    ]
    edges.extend(loop_edges)
    graph = PoseGraph(nodes, edges)
    if cfg.refine_rounds > 0:
        solved = refine(
            graph,
            weights=cfg.weights,
            rounds=cfg.refine_rounds,
            pair_distance=cfg.pair_distance,
            max_pairs=cfg.max_pairs,
        )
    else:
        solved = optimize(graph, weights=cfg.weights)

    final_poses = [node.pose for node in solved.graph.nodes]
    session_stamp = dataset.scans[0].stamp
    cloud = accumulate_map(clouds, final_poses, extrusion, voxel_size=cfg.voxel_size, session_stamp=session_stamp)
    trajectory = [(int(node_stamps[n]), final_poses[n]) for n in range(len(final_poses))]

    diagnostics: dict[str, object] = {
        "scans_total": len(dataset.scans),
        "scans_dropped_gravity": dropped_gravity,
        "scans_degenerate": degenerate,
        "keyframes": len(kf_indices),
        "odometry_fallbacks": fallbacks,
        "frames_total": len(dataset.frames),
        "frames_used": frames_used,
        "frames_outside_window": frames_far,
        "frames_unsteady": frames_unsteady,
        "loop_edges": len(loop_edges),
        "loop_rejected": loop_rejected,
        "pgo_converged": solved.converged,
        "pgo_iterations": solved.iterations,
        "pgo_initial_objective": solved.initial_objective,
        "pgo_final_objective": solved.final_objective,
        "map_points": len(cloud),
        "temperature_set_points": int(np.count_nonzero(np.isfinite(cloud.temperatures))),
    }
    if dataset.ground_truth:
        diagnostics["ate_m"] = trajectory_ate(trajectory, dataset.ground_truth, align=True)
    return MappingResult(cloud=cloud, trajectory=trajectory, graph=solved.graph, diagnostics=diagnostics)
