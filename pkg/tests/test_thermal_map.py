from __future__ import annotations

import math

import numpy as np
import pytest

from thermoslam import (
    Calibration,
    CameraIntrinsics,
    ExtrusionConfig,
    PlanarPose,
    RigidTransform3,
    ThermalImage,
    ThermalPointCloud,
    WallCloud,
    accumulate_map,
    extrude_walls,
    project_to_thermal,
    voxel_thin,
)
from thermoslam.scan_frontend import ProjectedScan

INTRINSICS = CameraIntrinsics(fx=10.0, fy=10.0, cx=5.0, cy=5.0, width=11, height=11)


def _grid_cloud(z: float = 2.0, n: int = 9, extent: float = 0.8) -> WallCloud:
    """Unset wall points on a plane facing a camera at the origin (+z)."""
    xs, ys = np.meshgrid(np.linspace(-extent, extent, n), np.linspace(-extent, extent, n))
    pts = np.column_stack([xs.ravel(), ys.ravel(), np.full(n * n, z)])
    return WallCloud(pts, np.full(n * n, np.nan), np.full(n * n, np.inf))


def _flat_image(value: float, stamp: int = 0) -> ThermalImage:
    return ThermalImage(stamp, np.full((11, 11), value))


# ---------------------------------------------------------------------------
# Extrusion.


def test_extrusion_heights_span_floor_to_ceiling():
    cfg = ExtrusionConfig(sensor_height=0.6, floor_height=3.0, vertical_step=0.1)
    zs = cfg.heights()
    assert zs.size == 31
    assert zs[0] == pytest.approx(-0.6)
    assert zs[-1] == pytest.approx(2.4)
    assert np.allclose(np.diff(zs), 0.1)


def test_extrusion_config_validation():
    with pytest.raises(ValueError):
        ExtrusionConfig(sensor_height=3.0, floor_height=3.0, vertical_step=0.1)
    with pytest.raises(ValueError):
        ExtrusionConfig(sensor_height=0.5, floor_height=3.0, vertical_step=0.0)


def test_extrude_walls_replicates_xy_exactly():
    scan = ProjectedScan(7, [[1.25, -0.5], [2.0, 3.0], [0.1, 0.2]])
    cfg = ExtrusionConfig(sensor_height=0.6, floor_height=3.0, vertical_step=0.5)
    cloud = extrude_walls(scan, cfg, node_id=4)
    levels = cfg.heights().size
    assert len(cloud) == 3 * levels
    assert cloud.node_id == 4
    # Column k holds the k-th source point at every height, xy untouched.
    assert np.array_equal(cloud.positions[:levels, 0], np.full(levels, 1.25))
    assert np.array_equal(cloud.positions[:levels, 1], np.full(levels, -0.5))
    assert np.array_equal(cloud.positions[:levels, 2], cfg.heights())
    assert np.isnan(cloud.temperatures).all()
    assert np.isposinf(cloud.source_distance).all()


# ---------------------------------------------------------------------------
# Thermal projection.


def test_project_to_thermal_colors_visible_points():
    cloud = _grid_cloud()
    out = project_to_thermal(cloud, RigidTransform3.identity(), INTRINSICS, _flat_image(25.0))
    assert np.allclose(out.temperatures, 25.0)
    assert np.all(np.isfinite(out.source_distance))
    # The input cloud is untouched.
    assert np.isnan(cloud.temperatures).all()


def test_project_to_thermal_skips_points_behind_camera():
    cloud = _grid_cloud(z=-2.0)
    out = project_to_thermal(cloud, RigidTransform3.identity(), INTRINSICS, _flat_image(25.0))
    assert np.isnan(out.temperatures).all()


def test_project_to_thermal_samples_expected_pixel():
    img = np.full((11, 11), 20.0)
    img[4, 7] = 33.0
    # x such that u = fx*x/z + cx lands exactly on pixel (u=7, v=4).
    pt = np.array([[(7.0 - 5.0) * 2.0 / 10.0, (4.0 - 5.0) * 2.0 / 10.0, 2.0]])
    cloud = WallCloud(pt, [np.nan], [np.inf])
    out = project_to_thermal(cloud, RigidTransform3.identity(), INTRINSICS, ThermalImage(0, img))
    assert out.temperatures[0] == pytest.approx(33.0)


def test_project_to_thermal_closer_camera_wins():
    # Narrow grid so every point stays in view from both camera depths.
    cloud = _grid_cloud(z=2.0, extent=0.35)
    far = project_to_thermal(cloud, RigidTransform3.identity(), INTRINSICS, _flat_image(25.0))
    closer = RigidTransform3(np.eye(3), np.array([0.0, 0.0, -1.0]))
    both = project_to_thermal(far, closer, INTRINSICS, _flat_image(30.0))
    assert np.allclose(both.temperatures, 30.0)
    # A camera farther than the recorded source cannot overwrite.
    farther = RigidTransform3(np.eye(3), np.array([0.0, 0.0, 1.0]))
    after = project_to_thermal(both, farther, INTRINSICS, _flat_image(35.0))
    assert np.allclose(after.temperatures, 30.0)


def test_project_to_thermal_bilinear_vs_nearest():
    img = np.full((11, 11), 20.0)
    img[:, 4:] = 30.0
    # u = 3.5: halfway between a 20-column and a 30-column.
    pt = np.array([[(3.5 - 5.0) * 2.0 / 10.0, 0.0, 2.0]])
    cloud = WallCloud(pt, [np.nan], [np.inf])
    image = ThermalImage(0, img)
    soft = project_to_thermal(cloud, RigidTransform3.identity(), INTRINSICS, image, bilinear=True)
    assert soft.temperatures[0] == pytest.approx(25.0)
    hard = project_to_thermal(cloud, RigidTransform3.identity(), INTRINSICS, image, bilinear=False)
    assert hard.temperatures[0] in (20.0, 30.0)


def test_project_to_thermal_cell_spread_gate():
    img = np.full((11, 11), 20.0)
    img[:, 6:] = 70.0
    image = ThermalImage(0, img)
    pts = np.array(
        [
            [(5.5 - 5.0) * 2.0 / 10.0, 0.0, 2.0],  # straddles the 50 degC edge
            [(2.0 - 5.0) * 2.0 / 10.0, 0.0, 2.0],  # clean interior pixel
        ]
    )
    cloud = WallCloud(pts, np.full(2, np.nan), np.full(2, np.inf))
    gated = project_to_thermal(cloud, RigidTransform3.identity(), INTRINSICS, image, max_cell_spread=10.0)
    assert np.isnan(gated.temperatures[0])
    assert gated.temperatures[1] == pytest.approx(20.0)
    ungated = project_to_thermal(cloud, RigidTransform3.identity(), INTRINSICS, image)
    assert np.isfinite(ungated.temperatures).all()


def test_project_to_thermal_rejects_size_mismatch():
    image = ThermalImage(0, np.full((5, 5), 20.0))
    with pytest.raises(ValueError):
        project_to_thermal(_grid_cloud(), RigidTransform3.identity(), INTRINSICS, image)


def test_thermal_image_validation():
    with pytest.raises(ValueError):
        ThermalImage(0, np.full((11, 11), 500.0))
    with pytest.raises(ValueError):
        ThermalImage(0, np.full((11, 11), np.nan))
    with pytest.raises(ValueError):
        ThermalImage(0, np.array([1.0, 2.0]))


def test_camera_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=0.0, fy=10.0, cx=5.0, cy=5.0, width=11, height=11)
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=10.0, fy=10.0, cx=5.0, cy=5.0, width=1, height=11)


# ---------------------------------------------------------------------------
# Cloud containers.


def test_wall_cloud_temperature_set_and_copy():
    cloud = WallCloud([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], [np.nan, 21.5], [np.inf, 2.0])
    assert np.array_equal(cloud.temperature_set(), [False, True])
    dup = cloud.copy()
    dup.temperatures[1] = 99.0
    assert cloud.temperatures[1] == 21.5


def test_thermal_point_cloud_drop_unset():
    cloud = ThermalPointCloud(
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], [np.nan, 20.0, np.nan], session_stamp=9
    )
    kept = cloud.drop_unset()
    assert len(kept) == 1
    assert kept.temperatures[0] == 20.0
    assert kept.session_stamp == 9
    with pytest.raises(ValueError):
        ThermalPointCloud([[np.nan, 0.0, 0.0]], [20.0])


# ---------------------------------------------------------------------------
# Thinning and accumulation.


def test_voxel_thin_averages_and_keeps_unset_nan():
    positions = np.array(
        [
            [0.01, 0.01, 0.01],
            [0.03, 0.01, 0.01],
            [5.0, 5.0, 5.0],
        ]
    )
    temps = np.array([20.0, np.nan, np.nan])
    pos, out = voxel_thin(positions, temps, voxel_size=0.1)
    assert pos.shape == (2, 3)
    near = np.argmin(np.abs(pos[:, 0] - 0.02))
    assert np.allclose(pos[near], [0.02, 0.01, 0.01])
    # One member had a temperature, so the voxel reads it; the other voxel stays unset.
    assert out[near] == pytest.approx(20.0)
    assert np.isnan(out[1 - near])


def test_voxel_thin_is_order_insensitive():
    rng = np.random.default_rng(6)
    positions = rng.uniform(0, 1, (200, 3))
    temps = np.where(rng.uniform(size=200) < 0.7, rng.uniform(10, 30, 200), np.nan)
    perm = rng.permutation(200)
    pos_a, t_a = voxel_thin(positions, temps, 0.25)
    pos_b, t_b = voxel_thin(positions[perm], temps[perm], 0.25)
    assert np.allclose(pos_a, pos_b, atol=1e-12)
    assert np.allclose(t_a, t_b, atol=1e-12, equal_nan=True)


def test_accumulate_map_lifts_by_sensor_height():
    cfg = ExtrusionConfig(sensor_height=0.6, floor_height=3.0, vertical_step=1.0)
    cloud = WallCloud([[1.0, 0.0, -0.6], [1.0, 0.0, 0.4]], [20.0, 21.0], [1.0, 1.0])
    out = accumulate_map([cloud], [PlanarPose()], cfg, voxel_size=None, session_stamp=5)
    assert out.session_stamp == 5
    # Identity node: floor-level points land at world z = 0.
    assert np.allclose(out.positions[:, 2], [0.0, 1.0])
    assert np.array_equal(out.temperatures, [20.0, 21.0])


def test_accumulate_map_applies_node_poses():
    cfg = ExtrusionConfig(sensor_height=0.6, floor_height=3.0, vertical_step=1.0)
    cloud = WallCloud([[1.0, 0.0, 0.0]], [20.0], [1.0])
    pose = PlanarPose(2.0, 1.0, math.pi / 2.0)
    out = accumulate_map([cloud], [pose], cfg, voxel_size=None)
    assert np.allclose(out.positions[0], [2.0, 2.0, 0.6], atol=1e-12)


def test_accumulate_map_validation():
    cfg = ExtrusionConfig(sensor_height=0.6, floor_height=3.0, vertical_step=1.0)
    cloud = WallCloud([[1.0, 0.0, 0.0]], [20.0], [1.0])
    with pytest.raises(ValueError):
        accumulate_map([cloud], [], cfg)
    with pytest.raises(ValueError):
        accumulate_map([], [], cfg)
    with pytest.raises(ValueError):
        accumulate_map([cloud], [PlanarPose()], cfg, voxel_size=0.0)


def test_calibration_extrusion_passthrough():
    calib = Calibration(
        intrinsics=INTRINSICS,
        camera_extrinsic=RigidTransform3.identity(),
        sensor_height=0.6,
        floor_height=3.0,
        vertical_step=0.1,
    )
    cfg = calib.extrusion()
    assert cfg.sensor_height == 0.6
    assert cfg.floor_height == 3.0
    assert cfg.vertical_step == 0.1
