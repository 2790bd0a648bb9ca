"""Wall extrusion and thermal colorization.

Projected 2D wall points are replicated vertically into 2.5D wall clouds,
then colored by projecting them into radiometric thermal frames through a
pinhole camera. Temperatures stay attached to points from then on; a point
keeps the reading from the closest camera that saw it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import PlanarPose, RigidTransform3, Timestamp, planar_to_rigid3
from .scan_frontend import ProjectedScan


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole model: u = fx * x / z + cx, v = fy * y / z + cy."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError("focal lengths must be > 0")
        if self.width < 2 or self.height < 2:
            raise ValueError("image must be at least 2x2")


@dataclass(eq=False)
class ThermalImage:
    """Radiometric frame in degrees Celsius.

    Values must be finite and inside the plausible radiometric interval
    (-40, 300) degC; ingest rejects anything else.
    """

    stamp: Timestamp
    temperatures: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.temperatures, dtype=float)
        if t.ndim != 2 or t.shape[0] < 2 or t.shape[1] < 2:
            raise ValueError("thermal image must be 2D, at least 2x2")
        if not np.all(np.isfinite(t)):
            raise ValueError("thermal image has non-finite temperatures")
        if t.min() <= -40.0 or t.max() >= 300.0:
            raise ValueError("temperatures outside plausible range (-40, 300) degC")
        self.temperatures = t
        self.stamp = int(self.stamp)

    @property
    def height(self) -> int:
        return self.temperatures.shape[0]

    @property
    def width(self) -> int:
        return self.temperatures.shape[1]


@dataclass(frozen=True)
class ExtrusionConfig:
    """Vertical replication parameters.

    sensor_height is the scanner's height above the floor; floor_height is
    the wall (slab-to-slab) height; vertical_step the replication spacing.
    """

    sensor_height: float
    floor_height: float
    vertical_step: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 < self.sensor_height < self.floor_height:
            raise ValueError("need 0 < sensor_height < floor_height")
        if not 0.0 < self.vertical_step <= self.floor_height:
            raise ValueError("need 0 < vertical_step <= floor_height")

    def heights(self) -> np.ndarray:
        """Replication heights relative to the sensor plane (z = 0)."""
        levels = int(math.floor(self.floor_height / self.vertical_step + 1e-9)) + 1
        return -self.sensor_height + self.vertical_step * np.arange(levels)


@dataclass(eq=False)
class WallCloud:
    """Extruded wall points in the sensor frame of one scan.

    temperatures are NaN until a thermal frame sees the point;
    source_distance records the point-to-camera distance of the frame that
    set the current temperature (inf while unset).
    """

    positions: np.ndarray
    temperatures: np.ndarray
    source_distance: np.ndarray
    node_id: int = 0

    def __post_init__(self) -> None:
        p = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        n = p.shape[0]
        t = np.asarray(self.temperatures, dtype=float).reshape(n)
        d = np.asarray(self.source_distance, dtype=float).reshape(n)
        if not np.all(np.isfinite(p)):
            raise ValueError("wall cloud positions must be finite")
        self.positions, self.temperatures, self.source_distance = p, t, d

    def __len__(self) -> int:
        return self.positions.shape[0]

    def temperature_set(self) -> np.ndarray:
        return np.isfinite(self.temperatures)

    def copy(self) -> "WallCloud":
        return WallCloud(
            self.positions.copy(), self.temperatures.copy(), self.source_distance.copy(), self.node_id
        )


@dataclass(eq=False)
class ThermalPointCloud:
    """World-frame point cloud with per-point temperatures.

    session_stamp is the wall-clock capture time of the session that
    produced the map (0 when unknown). Unset temperatures are NaN and are
    dropped before any cross-session monitoring.
    """

    positions: np.ndarray
    temperatures: np.ndarray
    session_stamp: Timestamp = 0

    def __post_init__(self) -> None:
        p = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        t = np.asarray(self.temperatures, dtype=float).reshape(p.shape[0])
        if not np.all(np.isfinite(p)):
            raise ValueError("point cloud positions must be finite")
        self.positions, self.temperatures = p, t
        self.session_stamp = int(self.session_stamp)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def drop_unset(self) -> "ThermalPointCloud":
        keep = np.isfinite(self.temperatures)
        return ThermalPointCloud(self.positions[keep], self.temperatures[keep], self.session_stamp)


@dataclass(eq=False)
class Calibration:
    """Rig calibration shared by the simulator, loaders, and the pipeline."""

    intrinsics: CameraIntrinsics
    camera_extrinsic: RigidTransform3  # sensor frame -> camera frame
    sensor_height: float
    floor_height: float
    vertical_step: float
    thermal_scale: float = 0.01
    thermal_offset: float = -100.0

    def extrusion(self) -> ExtrusionConfig:
        return ExtrusionConfig(self.sensor_height, self.floor_height, self.vertical_step)


def extrude_walls(scan: ProjectedScan, config: ExtrusionConfig, node_id: int = 0) -> WallCloud:
    """Replicate each projected wall point across the configured heights.

    Heights run from floor level (-sensor_height below the sensor plane)
    up to floor_height - sensor_height, giving
    floor(floor_height / vertical_step) + 1 levels per point. The (x, y)
    of every source point is preserved exactly.
    """
    pts = scan.points_xy
    zs = config.heights()
    n, levels = pts.shape[0], zs.size
    positions = np.empty((n * levels, 3))
    positions[:, 0] = np.repeat(pts[:, 0], levels)
    positions[:, 1] = np.repeat(pts[:, 1], levels)
    positions[:, 2] = np.tile(zs, n)
    return WallCloud(
        positions,
        np.full(n * levels, np.nan),
        np.full(n * levels, np.inf),
        node_id=node_id,
    )


def _bilinear(image: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    h, w = image.shape
    x0 = np.clip(np.floor(u).astype(int), 0, w - 2)
    y0 = np.clip(np.floor(v).astype(int), 0, h - 2)
    wx = np.clip(u - x0, 0.0, 1.0)
    wy = np.clip(v - y0, 0.0, 1.0)
    top = image[y0, x0] * (1.0 - wx) + image[y0, x0 + 1] * wx
    bot = image[y0 + 1, x0] * (1.0 - wx) + image[y0 + 1, x0 + 1] * wx
    return top * (1.0 - wy) + bot * wy


def _nearest(image: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    h, w = image.shape
    x = np.clip(np.rint(u).astype(int), 0, w - 1)
    y = np.clip(np.rint(v).astype(int), 0, h - 1)
    return image[y, x]


def _cell_spread(image: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Max minus min over each sample's 2x2 interpolation cell."""
    h, w = image.shape
    x0 = np.clip(np.floor(u).astype(int), 0, w - 2)
    y0 = np.clip(np.floor(v).astype(int), 0, h - 2)
    cell = np.stack([image[y0, x0], image[y0, x0 + 1], image[y0 + 1, x0], image[y0 + 1, x0 + 1]])
    return cell.max(axis=0) - cell.min(axis=0)


def project_to_thermal(
    cloud: WallCloud,
    camera_pose: RigidTransform3,
    intrinsics: CameraIntrinsics,
    image: ThermalImage,
    bilinear: bool = True,
    max_cell_spread: float | None = None,
) -> WallCloud:
    """Color wall points that fall inside one thermal frame.

    camera_pose maps cloud coordinates into the camera frame. A point is
    eligible when its camera-frame depth is strictly positive and its pixel
    lands inside the image; it takes the sampled temperature only if this
    camera is closer than whichever frame set the point before. Returns an
    updated copy; the input cloud is untouched.

    max_cell_spread, when given, skips samples whose 2x2 interpolation
    cell spans more than that many degrees: such pixels straddle a depth
    edge, where interpolation would blend temperatures of unrelated
    surfaces. Skipped points keep whatever an earlier frame assigned.
    """
    if image.width != intrinsics.width or image.height != intrinsics.height:
        raise ValueError("image size does not match intrinsics")
    out = cloud.copy()
    cam = camera_pose.apply(cloud.positions)
    z = cam[:, 2]
    front = z > 1e-12
    if not np.any(front):
        return out
    u = np.full(len(cloud), -1.0)
    v = np.full(len(cloud), -1.0)
    u[front] = intrinsics.fx * cam[front, 0] / z[front] + intrinsics.cx
    v[front] = intrinsics.fy * cam[front, 1] / z[front] + intrinsics.cy
    visible = front & (u >= 0.0) & (u <= intrinsics.width - 1.0) & (v >= 0.0) & (v <= intrinsics.height - 1.0)
    distance = np.linalg.norm(cam, axis=1)
    take = visible & (distance < out.source_distance)
    if max_cell_spread is not None and np.any(take):
        clean = _cell_spread(image.temperatures, u[take], v[take]) <= max_cell_spread
        take[np.flatnonzero(take)[~clean]] = False
    if np.any(take):
        sampler = _bilinear if bilinear else _nearest
        out.temperatures[take] = sampler(image.temperatures, u[take], v[take])
        out.source_distance[take] = distance[take]
    return out


def voxel_thin(positions: np.ndarray, temperatures: np.ndarray, voxel_size: float) -> tuple[np.ndarray, np.ndarray]:
    """Average points into a voxel grid; deterministic (sorted voxel keys).

    Voxel position is the mean of its member positions; voxel temperature
    is the mean of member temperatures that are set, NaN if none are.
    """
    keys = np.floor(positions / voxel_size).astype(np.int64)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    k = uniq.shape[0]
    counts = np.bincount(inv, minlength=k).astype(float)
    pos = np.empty((k, 3))
    for axis in range(3):
        pos[:, axis] = np.bincount(inv, weights=positions[:, axis], minlength=k) / counts
    has_t = np.isfinite(temperatures)
    t_counts = np.bincount(inv[has_t], minlength=k).astype(float)
    t_sums = np.bincount(inv[has_t], weights=temperatures[has_t], minlength=k)
    with np.errstate(invalid="ignore"):
        temps = np.where(t_counts > 0, t_sums / np.maximum(t_counts, 1.0), np.nan)
    return pos, temps


def accumulate_map(
    clouds: list[WallCloud],
    poses: list[PlanarPose],
    config: ExtrusionConfig,
    voxel_size: float | None = 0.05,
    session_stamp: Timestamp = 0,
) -> ThermalPointCloud:
    """Merge per-node wall clouds into one world-frame thermal cloud.

    Each cloud is lifted by its node pose at the scanner height, so a node
    at the identity contributes its local cloud shifted up by
    sensor_height. Concatenation follows node order; optional voxel
    thinning averages positions and the set temperatures per voxel.
    """
    if len(clouds) != len(poses):
        raise ValueError("clouds and poses length mismatch")
    if not clouds:
        raise ValueError("nothing to accumulate")
    parts_p = []
    parts_t = []
    for cloud, pose in zip(clouds, poses):
        lift = planar_to_rigid3(pose, config.sensor_height)
        parts_p.append(lift.apply(cloud.positions))
        parts_t.append(cloud.temperatures)
    positions = np.vstack(parts_p)
    temperatures = np.concatenate(parts_t)
    if voxel_size is not None:
        if voxel_size <= 0.0:
            raise ValueError("voxel_size must be > 0")
        positions, temperatures = voxel_thin(positions, temperatures, voxel_size)
    return ThermalPointCloud(positions, temperatures, session_stamp)
