from __future__ import annotations

import math

import numpy as np
import pytest

from thermoslam import (
    DeltaReport,
    MaturityRecord,
    PlanarPose,
    RigidTransform3,
    ThermalPointCloud,
    Vec3,
    accumulate_maturity,
    icp_align,
    planar_to_rigid3,
    rate_alert,
    temperature_delta,
    transform_cloud,
)
from thermoslam.monitor import AlignmentError


def _box_cloud(step: float = 0.05, temp: float = 20.0) -> ThermalPointCloud:
    """Temperature-set points on the walls of a 4 x 3 box, z in [0, 2].

    Positions carry a small seeded jitter, identical on every call. A
    perfectly regular lattice lets nearest-neighbor alignment lock in one
    grid cell off (the combs of both clouds interleave); scan-built
    clouds are never that regular.
    """
    edges = [
        ((0.0, 0.0), (4.0, 0.0)),
        ((4.0, 0.0), (4.0, 3.0)),
        ((4.0, 3.0), (0.0, 3.0)),
        ((0.0, 3.0), (0.0, 0.0)),
    ]
    pts = []
    for (x0, y0), (x1, y1) in edges:
        length = math.hypot(x1 - x0, y1 - y0)
        n = int(length / step)
        f = np.arange(n) / n
        for z in np.arange(0.0, 2.0 + 1e-9, 0.25):
            pts.append(np.column_stack([x0 + (x1 - x0) * f, y0 + (y1 - y0) * f, np.full(n, z)]))
    positions = np.vstack(pts)
    positions += np.random.default_rng(21).uniform(-0.015, 0.015, positions.shape)
    return ThermalPointCloud(positions, np.full(len(positions), temp))


def test_transform_cloud_roundtrip_and_copy():
    cloud = _box_cloud()
    t = planar_to_rigid3(PlanarPose(1.0, -0.5, 0.3), z=0.2)
    moved = transform_cloud(cloud, t)
    back = transform_cloud(moved, t.inverse())
    assert np.allclose(back.positions, cloud.positions, atol=1e-12)
    moved.temperatures[0] = 99.0
    assert cloud.temperatures[0] == 20.0


# ---------------------------------------------------------------------------
# Alignment.


def test_icp_align_recovers_known_displacement():
    reference = _box_cloud()
    displacement = planar_to_rigid3(PlanarPose(0.2, -0.1, math.radians(4.0)), z=0.05)
    moving = transform_cloud(reference, displacement)
    transform, rms = icp_align(reference, moving)
    error = transform.compose(displacement)
    assert np.linalg.norm(error.translation) < 1e-6
    assert abs(math.atan2(error.rotation[1, 0], error.rotation[0, 0])) < 1e-6
    assert rms < 1e-6


def test_icp_align_uses_initial_guess():
    reference = _box_cloud()
    displacement = planar_to_rigid3(PlanarPose(0.15, 0.1, math.radians(-3.0)))
    moving = transform_cloud(reference, displacement)
    transform, rms = icp_align(reference, moving, initial=displacement.inverse())
    assert np.linalg.norm(transform.compose(displacement).translation) < 1e-6
    assert rms < 1e-6


def test_icp_align_raises_when_residual_exceeds_limit():
    reference = _box_cloud()
    rng = np.random.default_rng(13)
    moving = ThermalPointCloud(
        reference.positions + rng.normal(0.0, 0.02, reference.positions.shape),
        reference.temperatures.copy(),
    )
    with pytest.raises(AlignmentError):
        icp_align(reference, moving, max_rms=1e-4)


def test_icp_align_needs_enough_points():
    small = ThermalPointCloud(np.random.default_rng(0).uniform(0, 1, (50, 3)), np.full(50, 20.0))
    with pytest.raises(ValueError):
        icp_align(small, small)


def test_icp_align_rejects_unset_temperatures():
    cloud = _box_cloud()
    cloud.temperatures[3] = np.nan
    with pytest.raises(ValueError):
        icp_align(cloud, _box_cloud())


# ---------------------------------------------------------------------------
# Temperature deltas.


def test_temperature_delta_exact_offset():
    reference = _box_cloud(temp=20.0)
    moving = ThermalPointCloud(reference.positions.copy(), reference.temperatures + 3.0)
    report = temperature_delta(reference, moving)
    assert isinstance(report, DeltaReport)
    assert not report.no_overlap
    assert report.matched_pairs == len(reference)
    assert np.allclose(report.deltas, 3.0)
    assert report.mean_dt == pytest.approx(3.0)
    assert report.rms_nn_distance == pytest.approx(0.0)


def test_temperature_delta_gates_by_match_radius():
    reference = ThermalPointCloud(
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], [20.0, 21.0]
    )
    moving = ThermalPointCloud(
        [[0.0, 0.0, 0.02], [1.0, 0.0, 0.5]], [22.0, 30.0]
    )
    report = temperature_delta(reference, moving, match_radius=0.05)
    assert report.matched_pairs == 1
    assert report.deltas[0] == pytest.approx(2.0)
    assert np.allclose(report.positions[0], [0.0, 0.0, 0.0])


def test_temperature_delta_no_overlap():
    reference = ThermalPointCloud([[0.0, 0.0, 0.0]], [20.0])
    moving = ThermalPointCloud([[9.0, 9.0, 9.0]], [21.0])
    report = temperature_delta(reference, moving)
    assert report.no_overlap
    assert report.matched_pairs == 0
    assert math.isnan(report.mean_dt)


# ---------------------------------------------------------------------------
# Maturity accumulation.


def test_accumulate_maturity_first_sample_only_initializes():
    record = MaturityRecord(position=Vec3(0.0, 0.0, 1.0))
    record = accumulate_maturity(record, (0.0, 18.0))
    assert record.samples == ((0.0, 18.0),)
    assert record.maturity == 0.0


def test_accumulate_maturity_trapezoid_value():
    record = MaturityRecord(position=Vec3(0, 0, 0), datum_temperature=5.0)
    record = accumulate_maturity(record, (0.0, 15.0))
    record = accumulate_maturity(record, (2.0, 25.0))
    # Average temperature 20 degC over 2 h, 15 degC above datum.
    assert record.maturity == pytest.approx(30.0)


def test_accumulate_maturity_clamps_below_datum():
    record = MaturityRecord(position=Vec3(0, 0, 0), datum_temperature=-10.0)
    record = accumulate_maturity(record, (0.0, -20.0))
    record = accumulate_maturity(record, (1.0, -20.0))
    assert record.maturity == 0.0


def test_accumulate_maturity_requires_advancing_finite_samples():
    record = accumulate_maturity(MaturityRecord(position=Vec3(0, 0, 0)), (1.0, 20.0))
    with pytest.raises(ValueError):
        accumulate_maturity(record, (1.0, 21.0))
    with pytest.raises(ValueError):
        accumulate_maturity(record, (2.0, math.nan))


# ---------------------------------------------------------------------------
# Rate alerts.


def test_rate_alert_flags_steep_intervals_only():
    record = MaturityRecord(
        position=Vec3(0, 0, 0),
        samples=((0.0, 20.0), (1.0, 25.0), (2.0, 45.0), (3.0, 30.0)),
    )
    violations = rate_alert(record, max_rate=10.0)
    assert len(violations) == 2
    assert violations[0].start_h == 1.0 and violations[0].end_h == 2.0
    assert violations[0].rate_c_per_h == pytest.approx(20.0)
    # Cooling too fast alerts as well.
    assert violations[1].rate_c_per_h == pytest.approx(-15.0)


def test_rate_alert_exact_limit_does_not_alert():
    record = MaturityRecord(position=Vec3(0, 0, 0), samples=((0.0, 20.0), (1.0, 30.0)))
    assert rate_alert(record, max_rate=10.0) == []


def test_rate_alert_validation():
    record = MaturityRecord(position=Vec3(0, 0, 0), samples=((0.0, 20.0),))
    with pytest.raises(ValueError):
        rate_alert(record, max_rate=10.0)
    two = MaturityRecord(position=Vec3(0, 0, 0), samples=((0.0, 20.0), (1.0, 21.0)))
    with pytest.raises(ValueError):
        rate_alert(two, max_rate=-1.0)
