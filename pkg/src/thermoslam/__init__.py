"""Thermal 2.5D mapping toolkit.

Reconstructs temperature-annotated wall point clouds from 2D range scans,
IMU gravity, and radiometric thermal frames; refines trajectories with a
joint geometric/thermal pose graph; and compares maps across sessions for
concrete curing-heat monitoring. A synthetic-site simulator provides
ground truth for every stage.
"""

from .core import (
    GravityVector,
    HuberLoss,
    ImuSample,
    PlanarPose,
    RigidTransform3,
    Scan2D,
    Vec3,
    compose,
    inverse,
    planar_to_rigid3,
    rigid3_to_planar,
    rotation_about_z,
    rotation_aligning,
    wrap_angle,
)
from .scan_frontend import (
    DegenerateScanError,
    MatcherConfig,
    MatchResult,
    ProjectedScan,
    associate_gravity,
    build_odometry_chain,
    filter_gravity,
    gravity_project,
    match_scans,
)
from .thermal_map import (
    Calibration,
    CameraIntrinsics,
    ExtrusionConfig,
    ThermalImage,
    ThermalPointCloud,
    WallCloud,
    accumulate_map,
    extrude_walls,
    project_to_thermal,
    voxel_thin,
)
from .pose_graph import (
    DisconnectedGraphError,
    GraphEdge,
    GraphNode,
    OptimizeConfig,
    OptimizeResult,
    PoseGraph,
    SolverWeights,
    detect_loop_closures,
    optimize,
    refine,
    select_point_pairs,
)
from .monitor import (
    AlignmentError,
    DeltaReport,
    MaturityRecord,
    RateViolation,
    accumulate_maturity,
    icp_align,
    rate_alert,
    temperature_delta,
    transform_cloud,
)
from .sim import (
    NoiseSpec,
    SensorRig,
    SessionDataset,
    SimulationError,
    SiteModel,
    TrajectorySpec,
    WallSegment,
    linear_field,
    rectangle_site,
    simulate_session,
    trajectory_ate,
    two_room_site,
    uniform_field,
)

__version__ = "0.1.0"
