from __future__ import annotations

import math
import time
from types import SimpleNamespace

import pytest

from thermoslam import NoiseSpec, TrajectorySpec, simulate_session, two_room_site
from thermoslam.cli_io import run_mapping

# Tour through both rooms of the bundled site; the middle leg passes the
# doorway at y ~ 2.1 so no leg crosses a wall.
SMOKE_WAYPOINTS = ((1.0, 0.8), (3.2, 2.1), (5.5, 2.1), (5.8, 1.0))


def _timed_session(noise: NoiseSpec, seed: int) -> SimpleNamespace:
    site = two_room_site()
    traj = TrajectorySpec(waypoints=SMOKE_WAYPOINTS)
    t0 = time.perf_counter()
    dataset = simulate_session(site, traj, noise, seed=seed)
    sim_seconds = time.perf_counter() - t0
    t0 = time.perf_counter()
    result = run_mapping(dataset)
    map_seconds = time.perf_counter() - t0
    return SimpleNamespace(
        site=site,
        traj=traj,
        dataset=dataset,
        result=result,
        sim_seconds=sim_seconds,
        map_seconds=map_seconds,
    )


@pytest.fixture(scope="session")
def noiseless_run() -> SimpleNamespace:
    """Noiseless end-to-end run on the bundled two-room site."""
    return _timed_session(NoiseSpec(), seed=7)


@pytest.fixture(scope="session")
def noisy_run() -> SimpleNamespace:
    noise = NoiseSpec(
        range_sigma=0.01,
        gravity_tilt_sigma=math.radians(1.0),
        thermal_noise_sigma=0.5,
    )
    return _timed_session(noise, seed=11)
