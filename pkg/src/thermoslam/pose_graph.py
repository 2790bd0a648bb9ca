"""Joint geometric/thermal pose-graph refinement.

Nodes carry planar poses and their extruded wall clouds. Edges constrain
relative poses (odometry and loop closures); loop-closure edges may also
carry point pairs whose world positions and attached temperatures should
agree. Temperatures ride along with the points, so the thermal term raises
the objective when paired readings disagree but contributes no pose
gradient for a fixed pairing; it bites through the pairing rounds in
:func:`refine`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .core import HuberLoss, PlanarPose, compose, inverse, wrap_angle
from .scan_frontend import MatcherConfig, ProjectedScan, match_scans
from .thermal_map import WallCloud

EDGE_KINDS = ("odometry", "loop_closure")

_SPIN = np.array([[0.0, -1.0], [1.0, 0.0]])  # d/dtheta of a rotation, left factor


class DisconnectedGraphError(ValueError):
    """The pose graph does not connect all nodes."""


@dataclass(frozen=True)
class SolverWeights:
    """Relative scaling of the residual families."""

    translation: float = 5.0
    rotation: float = 400.0
    thermal: float = 1.0

    def __post_init__(self) -> None:
        if min(self.translation, self.rotation, self.thermal) < 0.0:
            raise ValueError("weights must be >= 0")


@dataclass(eq=False)
class GraphNode:
    node_id: int
    pose: PlanarPose
    cloud: WallCloud


@dataclass(eq=False)
class GraphEdge:
    """Relative-pose constraint between two nodes.

    measured maps to-node coordinates into the from-node frame.
    point_pairs is an (P, 2) integer array of (from-cloud index,
    to-cloud index) correspondences; empty for plain odometry edges.
    """

    from_id: int
    to_id: int
    measured: PlanarPose
    kind: str = "odometry"
    point_pairs: np.ndarray = field(default_factory=lambda: np.empty((0, 2), dtype=int))

    def __post_init__(self) -> None:
        if self.kind not in EDGE_KINDS:
            raise ValueError(f"edge kind must be one of {EDGE_KINDS}")
        if self.from_id == self.to_id:
            raise ValueError("edge endpoints must differ")
        self.point_pairs = np.asarray(self.point_pairs, dtype=int).reshape(-1, 2)


@dataclass(eq=False)
class PoseGraph:
    nodes: list[GraphNode]
    edges: list[GraphEdge]

    def __post_init__(self) -> None:
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node ids")
        known = set(ids)
        for e in self.edges:
            if e.from_id not in known or e.to_id not in known:
                raise ValueError(f"edge references unknown node ({e.from_id}, {e.to_id})")

    def node(self, node_id: int) -> GraphNode:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(node_id)


def _check_connected(graph: PoseGraph) -> None:
    parent = {n.node_id: n.node_id for n in graph.nodes}

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for e in graph.edges:
        parent[find(e.from_id)] = find(e.to_id)
    roots = {find(n.node_id) for n in graph.nodes}
    if len(roots) > 1:
        raise DisconnectedGraphError(f"pose graph splits into {len(roots)} components")


def select_point_pairs(
    node_i: tuple[PlanarPose, WallCloud],
    node_j: tuple[PlanarPose, WallCloud],
    max_distance: float = 0.3,
    max_pairs: int = 500,
) -> np.ndarray:
    """Mutual nearest-neighbor pairs between two temperature-set clouds.

    Points are compared in the world frame under the given poses. Only
    points with a set temperature participate. Pairs further apart than
    max_distance are discarded; if more than max_pairs survive they are
    thinned by uniform subsampling. Deterministic for fixed inputs.
    """
    pose_i, cloud_i = node_i
    pose_j, cloud_j = node_j
    set_i = np.flatnonzero(cloud_i.temperature_set())
    set_j = np.flatnonzero(cloud_j.temperature_set())
    if set_i.size == 0 or set_j.size == 0:
        return np.empty((0, 2), dtype=int)

    def world(pose: PlanarPose, pts: np.ndarray) -> np.ndarray:
        out = pts.copy()
        out[:, :2] = pose.apply(pts[:, :2])
        return out

    wi = world(pose_i, cloud_i.positions[set_i])
    wj = world(pose_j, cloud_j.positions[set_j])
    tree_j = cKDTree(wj)
    dist_ij, nn_ij = tree_j.query(wi)
    tree_i = cKDTree(wi)
    _, nn_ji = tree_i.query(wj)
    cand = np.arange(set_i.size)
    mutual = nn_ji[nn_ij[cand]] == cand
    keep = mutual & (dist_ij <= max_distance)
    pairs = np.column_stack([set_i[keep], set_j[nn_ij[keep]]])
    if pairs.shape[0] > max_pairs:
        sel = np.unique(np.round(np.linspace(0, pairs.shape[0] - 1, max_pairs)).astype(int))
        pairs = pairs[sel]
    return pairs


def detect_loop_closures(
    scans: list[ProjectedScan],
    poses: list[PlanarPose],
    matcher_config: MatcherConfig | None = None,
    min_index_gap: int = 10,
    max_distance: float = 2.0,
    max_cost: float = 0.01,
    min_inlier_ratio: float = 0.6,
    stride: int = 1,
    max_candidates: int | None = None,
    max_per_node: int | None = None,
) -> tuple[list[GraphEdge], int]:
    """Find loop-closure edges among non-adjacent nodes.

    Candidates are node pairs more than min_index_gap apart in index whose
    estimated positions lie within max_distance. Each candidate is matched;
    an edge is kept only when the match converges under the cost gate with
    enough inliers. Returns (edges, rejected_candidate_count) in a
    deterministic order.
    """
    if len(scans) != len(poses):
        raise ValueError("scans and poses length mismatch")
    cfg = matcher_config if matcher_config is not None else MatcherConfig()
    xy = np.array([[p.x, p.y] for p in poses]) if poses else np.empty((0, 2))
    edges: list[GraphEdge] = []
    rejected = 0
    evaluated = 0
    accepted_count = {i: 0 for i in range(len(scans))}
    for i in range(0, len(scans), max(stride, 1)):
        for j in range(i + min_index_gap + 1, len(scans), max(stride, 1)):
            if max_candidates is not None and evaluated >= max_candidates:
                return edges, rejected
            if max_per_node is not None and (
                accepted_count[i] >= max_per_node or accepted_count[j] >= max_per_node
            ):
                continue
            if float(np.linalg.norm(xy[i] - xy[j])) >= max_distance:
                continue
            evaluated += 1
            guess = compose(inverse(poses[i]), poses[j])
            result = match_scans(scans[i], scans[j], initial_guess=guess, config=cfg)
            ratio = result.inlier_count / max(len(scans[j]), 1)
            if result.converged and result.final_cost <= max_cost and ratio >= min_inlier_ratio:
                edges.append(GraphEdge(i, j, result.relative_pose, kind="loop_closure"))
                accepted_count[i] += 1
                accepted_count[j] += 1
            else:
                rejected += 1
    return edges, rejected


# ---------------------------------------------------------------------------
# Residual blocks. Each returns (residual, d residual / d pose_i,
# d residual / d pose_j); pose parameters are ordered (x, y, theta).


def relative_pose_residual(
    pose_i: PlanarPose,
    pose_j: PlanarPose,
    measured: PlanarPose,
    weights: SolverWeights,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Weighted mismatch between the estimated and measured relative pose.

    The residual is [sqrt(tw)*dx, sqrt(tw)*dy, sqrt(rw)*dtheta] of the
    error transform (estimated relative)^-1 * measured; it vanishes when
    the poses agree with the measurement.
    """
    sqrt_t = math.sqrt(weights.translation)
    sqrt_r = math.sqrt(weights.rotation)
    u = np.array([pose_j.x - pose_i.x, pose_j.y - pose_i.y])
    tm = np.array([measured.x, measured.y])
    a = pose_i.theta - pose_j.theta
    ca, sa = math.cos(a), math.sin(a)
    rot_a = np.array([[ca, -sa], [sa, ca]])  # R(theta_i - theta_j)
    cj, sj = math.cos(pose_j.theta), math.sin(pose_j.theta)
    rot_nj = np.array([[cj, sj], [-sj, cj]])  # R(-theta_j)
    et = rot_a @ tm - rot_nj @ u
    etheta = wrap_angle(measured.theta - pose_j.theta + pose_i.theta)
    r = np.array([sqrt_t * et[0], sqrt_t * et[1], sqrt_r * etheta])

    ji = np.zeros((3, 3))
    jj = np.zeros((3, 3))
    spin_rot_tm = _SPIN @ rot_a @ tm
    ji[:2, :2] = sqrt_t * rot_nj
    ji[:2, 2] = sqrt_t * spin_rot_tm
    ji[2, 2] = sqrt_r
    jj[:2, :2] = -sqrt_t * rot_nj
    jj[:2, 2] = sqrt_t * (-spin_rot_tm + _SPIN @ rot_nj @ u)
    jj[2, 2] = -sqrt_r
    return r, ji, jj


def point_pair_blocks(
    pose_i: PlanarPose,
    pose_j: PlanarPose,
    points_i: np.ndarray,
    points_j: np.ndarray,
    weights: SolverWeights,
):
    """Geometric residuals of paired cloud points, vectorized over pairs.

    Each pair contributes the 3D difference between the from-node point and
    the to-node point mapped through the estimated relative transform.
    Returns (residuals (P,3), Ji (P,3,3), Jj (P,3,3)). The z row carries
    the constant height difference with zero derivatives.
    """
    pi = np.atleast_2d(points_i)
    pj = np.atleast_2d(points_j)
    n = pi.shape[0]
    u = np.array([pose_j.x - pose_i.x, pose_j.y - pose_i.y])
    b = pose_j.theta - pose_i.theta
    cb, sb = math.cos(b), math.sin(b)
    rot_b = np.array([[cb, -sb], [sb, cb]])  # R(theta_j - theta_i)
    ci, si = math.cos(pose_i.theta), math.sin(pose_i.theta)
    rot_ni = np.array([[ci, si], [-si, ci]])  # R(-theta_i)
    moved_xy = pj[:, :2] @ rot_b.T + rot_ni @ u
    res = np.empty((n, 3))
    res[:, :2] = pi[:, :2] - moved_xy
    res[:, 2] = pi[:, 2] - pj[:, 2]

    ji = np.zeros((n, 3, 3))
    jj = np.zeros((n, 3, 3))
    spin_b = (pj[:, :2] @ rot_b.T) @ _SPIN.T  # S @ R(b) @ b_xy per pair
    spin_u = _SPIN @ rot_ni @ u
    ji[:, :2, :2] = rot_ni
    ji[:, :2, 2] = spin_b + spin_u
    jj[:, :2, :2] = -rot_ni
    jj[:, :2, 2] = -spin_b
    return res, ji, jj


def thermal_pair_residuals(
    temps_i: np.ndarray,
    temps_j: np.ndarray,
    weights: SolverWeights,
) -> np.ndarray:
    """Weighted temperature disagreement of paired points.

    Temperatures are attached to points, so this residual is constant with
    respect to every pose: its Jacobian is identically zero.
    """
    return math.sqrt(weights.thermal) * (np.asarray(temps_i, dtype=float) - np.asarray(temps_j, dtype=float))


@dataclass(frozen=True)
class OptimizeConfig:
    max_iterations: int = 100
    relative_tolerance: float = 1e-8
    initial_damping: float = 1e-4


@dataclass(eq=False)
class OptimizeResult:
    graph: PoseGraph
    converged: bool
    iterations: int
    initial_objective: float
    final_objective: float


def _graph_index(graph: PoseGraph) -> dict[int, int]:
    return {n.node_id: k for k, n in enumerate(graph.nodes)}


def _pose_array(graph: PoseGraph) -> np.ndarray:
    return np.array([[n.pose.x, n.pose.y, n.pose.theta] for n in graph.nodes])


def _pass(
    states: np.ndarray,
    graph: PoseGraph,
    index: dict[int, int],
    weights: SolverWeights,
    loss: HuberLoss,
    thermal_loss: HuberLoss,
    with_derivatives: bool,
):
    """One sweep over all residual blocks.

    Returns (objective, H, g); H and g are None unless requested. Robust
    weighting is applied per block via the usual rho'(r)/r scheme.
    """
    dim = 3 * len(graph.nodes)
    h = np.zeros((dim, dim)) if with_derivatives else None
    g = np.zeros(dim) if with_derivatives else None
    objective = 0.0

    def pose_of(k: int) -> PlanarPose:
        return PlanarPose(states[k, 0], states[k, 1], states[k, 2])

    for edge in graph.edges:
        ki, kj = index[edge.from_id], index[edge.to_id]
        pose_i, pose_j = pose_of(ki), pose_of(kj)
        r, jac_i, jac_j = relative_pose_residual(pose_i, pose_j, edge.measured, weights)
        norm = float(np.linalg.norm(r))
        objective += float(loss.values(np.array([norm]))[0])
        if with_derivatives:
            w = float(loss.weights(np.array([norm]))[0])
            si, sj = 3 * ki, 3 * kj
            h[si : si + 3, si : si + 3] += w * jac_i.T @ jac_i
            h[sj : sj + 3, sj : sj + 3] += w * jac_j.T @ jac_j
            cross = w * jac_i.T @ jac_j
            h[si : si + 3, sj : sj + 3] += cross
            h[sj : sj + 3, si : si + 3] += cross.T
            g[si : si + 3] += w * jac_i.T @ r
            g[sj : sj + 3] += w * jac_j.T @ r

        if edge.point_pairs.shape[0] == 0:
            continue
        cloud_i = graph.nodes[ki].cloud
        cloud_j = graph.nodes[kj].cloud
        ii, jj_idx = edge.point_pairs[:, 0], edge.point_pairs[:, 1]
        res, jac_pi, jac_pj = point_pair_blocks(
            pose_i, pose_j, cloud_i.positions[ii], cloud_j.positions[jj_idx], weights
        )
        norms = np.linalg.norm(res, axis=1)
        objective += float(loss.values(norms).sum())
        th = thermal_pair_residuals(cloud_i.temperatures[ii], cloud_j.temperatures[jj_idx], weights)
        objective += float(thermal_loss.values(np.abs(th)).sum())
        if with_derivatives:
            w = loss.weights(norms)
            si, sj = 3 * ki, 3 * kj
            h[si : si + 3, si : si + 3] += np.einsum("n,nri,nrj->ij", w, jac_pi, jac_pi)
            h[sj : sj + 3, sj : sj + 3] += np.einsum("n,nri,nrj->ij", w, jac_pj, jac_pj)
            cross = np.einsum("n,nri,nrj->ij", w, jac_pi, jac_pj)
            h[si : si + 3, sj : sj + 3] += cross
            h[sj : sj + 3, si : si + 3] += cross.T
            g[si : si + 3] += np.einsum("n,nri,nr->i", w, jac_pi, res)
            g[sj : sj + 3] += np.einsum("n,nri,nr->i", w, jac_pj, res)
            # The thermal block's pose Jacobian is identically zero.
    return objective, h, g


def objective(
    graph: PoseGraph,
    weights: SolverWeights,
    loss: HuberLoss | None = None,
    thermal_loss: HuberLoss | None = None,
) -> float:
    """Robust joint objective at the graph's current poses."""
    loss = loss if loss is not None else HuberLoss(0.1)
    thermal_loss = thermal_loss if thermal_loss is not None else HuberLoss(2.0)
    value, _, _ = _pass(_pose_array(graph), graph, _graph_index(graph), weights, loss, thermal_loss, False)
    return value


def optimize(
    graph: PoseGraph,
    weights: SolverWeights | None = None,
    loss: HuberLoss | None = None,
    thermal_loss: HuberLoss | None = None,
    config: OptimizeConfig | None = None,
) -> OptimizeResult:
    """Damped least-squares refinement of all poses except the anchor.

    The node with id 0 is the gauge anchor and comes back bitwise
    unchanged. Steps are only accepted when the objective does not
    increase, so the objective is non-increasing over accepted iterations;
    termination is by relative objective change or the iteration cap, and
    a non-converged run still returns its best iterate, flagged.
    """
    weights = weights if weights is not None else SolverWeights()
    loss = loss if loss is not None else HuberLoss(0.1)
    thermal_loss = thermal_loss if thermal_loss is not None else HuberLoss(2.0)
    cfg = config if config is not None else OptimizeConfig()
    index = _graph_index(graph)
    if 0 not in index:
        raise ValueError("pose graph needs a node with id 0 as gauge anchor")
    _check_connected(graph)
    anchor = index[0]
    free = np.ones(3 * len(graph.nodes), dtype=bool)
    free[3 * anchor : 3 * anchor + 3] = False
    if not np.any(free):
        value = objective(graph, weights, loss, thermal_loss)
        return OptimizeResult(graph, True, 0, value, value)

    states = _pose_array(graph)
    value, h, g = _pass(states, graph, index, weights, loss, thermal_loss, True)
    initial = value
    damping = cfg.initial_damping
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iterations + 1):
        hf = h[np.ix_(free, free)]
        gf = g[free]
        scale = np.diag(np.maximum(np.diag(hf), 1e-12))
        try:
            step = np.linalg.solve(hf + damping * scale, -gf)
        except np.linalg.LinAlgError:
            damping *= 10.0
            if damping > 1e12:
                break
            continue
        cand = states.copy()
        cand_flat = cand.reshape(-1)
        cand_flat[free] += step
        cand[:, 2] = np.array([wrap_angle(t) for t in cand[:, 2]])
        cand_value, cand_h, cand_g = _pass(cand, graph, index, weights, loss, thermal_loss, True)
        if cand_value <= value:
            drop = value - cand_value
            states, value, h, g = cand, cand_value, cand_h, cand_g
            damping = max(damping * 0.1, 1e-15)
            if drop <= cfg.relative_tolerance * max(value, 1e-300):
                converged = True
                break
        else:
            damping *= 10.0
            if damping > 1e12:
                break

    new_nodes = []
    for k, node in enumerate(graph.nodes):
        if k == anchor:
            new_nodes.append(GraphNode(node.node_id, node.pose, node.cloud))
        else:
            new_nodes.append(
                GraphNode(node.node_id, PlanarPose(states[k, 0], states[k, 1], states[k, 2]), node.cloud)
            )
    out = PoseGraph(new_nodes, graph.edges)
    return OptimizeResult(out, converged, iterations, initial, value)


def refine(
    graph: PoseGraph,
    weights: SolverWeights | None = None,
    loss: HuberLoss | None = None,
    thermal_loss: HuberLoss | None = None,
    config: OptimizeConfig | None = None,
    rounds: int = 3,
    pair_distance: float = 0.3,
    max_pairs: int = 500,
) -> OptimizeResult:
    """Alternate point-pair selection and optimization.

    Re-pairing between rounds is what lets the pose-independent thermal
    term influence the solution: disagreeing pairings raise the objective
    until the geometry stops producing them.
    """
    if rounds < 1:
        raise ValueError("refine needs at least one round")
    result = OptimizeResult(graph, True, 0, math.nan, math.nan)
    current = graph
    for _ in range(rounds):
        index = _graph_index(current)
        for edge in current.edges:
            if edge.kind != "loop_closure":
                continue
            node_i = current.nodes[index[edge.from_id]]
            node_j = current.nodes[index[edge.to_id]]
            edge.point_pairs = select_point_pairs(
                (node_i.pose, node_i.cloud),
                (node_j.pose, node_j.cloud),
                max_distance=pair_distance,
                max_pairs=max_pairs,
            )
        result = optimize(current, weights, loss, thermal_loss, config)
        current = result.graph
    return result
