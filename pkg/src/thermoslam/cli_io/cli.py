"""Command-line surface: simulate, map, compare, maturity.

Every command exits 0 on success and 2 with a single-line diagnostic on
stderr for any input or processing error. All outputs are deterministic
given the inputs (and seed, for simulation).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from ..core import HuberLoss, Vec3
from ..monitor import (
    MaturityRecord,
    accumulate_maturity,
    icp_align,
    rate_alert,
    temperature_delta,
    transform_cloud,
)
from ..scan_frontend import MatcherConfig
from ..pose_graph import SolverWeights
from ..sim import (
    NoiseSpec,
    SITE_PRESETS,
    SiteModel,
    TrajectorySpec,
    WallSegment,
    field_from_config,
    simulate_session,
)
from ..thermal_map import voxel_thin
from . import formats
from .pipeline import PipelineConfig, run_mapping

MATURITY_MATCH_RADIUS = 0.05
MATURITY_THIN_VOXEL = 0.2


def _load_json(path: Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except OSError as exc:
        raise ValueError(f"{path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a JSON object")
    return data


def _reject_unknown(data: dict, allowed: set[str], path: Path) -> None:
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ValueError(f"{path}: unknown keys: {', '.join(unknown)}")


def _load_trajectory(path: Path) -> TrajectorySpec:
    data = _load_json(path)
    _reject_unknown(
        data, {"waypoints", "speed", "scan_rate", "imu_rate", "thermal_rate", "turn_rate_deg_s", "hold_s"}, path
    )
    if "waypoints" not in data:
        raise ValueError(f"{path}: trajectory file needs a waypoints list")
    try:
        waypoints = tuple((float(x), float(y)) for x, y in data["waypoints"])
    except (TypeError, ValueError):
        raise ValueError(f"{path}: waypoints must be [x, y] pairs") from None
    kwargs = {}
    for key in ("speed", "scan_rate", "imu_rate", "thermal_rate", "hold_s"):
        if key in data:
            kwargs[key] = float(data[key])
    if "turn_rate_deg_s" in data:
        kwargs["turn_rate"] = math.radians(float(data["turn_rate_deg_s"]))
    return TrajectorySpec(waypoints=waypoints, **kwargs)


def _load_noise(path: Path) -> NoiseSpec:
    data = _load_json(path)
    _reject_unknown(
        data,
        {
            "range_sigma",
            "range_dropout_prob",
            "gravity_tilt_sigma_deg",
            "accel_noise_sigma",
            "thermal_noise_sigma",
            "haze_attenuation",
        },
        path,
    )
    kwargs = {}
    for key in ("range_sigma", "range_dropout_prob", "accel_noise_sigma", "thermal_noise_sigma", "haze_attenuation"):
        if key in data:
            kwargs[key] = float(data[key])
    if "gravity_tilt_sigma_deg" in data:
        kwargs["gravity_tilt_sigma"] = math.radians(float(data["gravity_tilt_sigma_deg"]))
    return NoiseSpec(**kwargs)


def _load_site(spec: str) -> SiteModel:
    if spec in SITE_PRESETS:
        return SITE_PRESETS[spec]()
    path = Path(spec)
    if not path.exists():
        presets = ", ".join(sorted(SITE_PRESETS))
        raise ValueError(f"site {spec!r} is neither a preset ({presets}) nor an existing file")
    data = _load_json(path)
    _reject_unknown(data, {"walls", "floor_height", "ambient_c", "field"}, path)
    if "walls" not in data:
        raise ValueError(f"{path}: site file needs a walls list")
    floor_height = float(data.get("floor_height", 3.0))
    walls = []
    for k, raw in enumerate(data["walls"]):
        if not isinstance(raw, (list, tuple)) or len(raw) not in (4, 5):
            raise ValueError(f"{path}: wall {k} must be [x1, y1, x2, y2] or [x1, y1, x2, y2, height]")
        height = float(raw[4]) if len(raw) == 5 else floor_height
        walls.append(WallSegment(float(raw[0]), float(raw[1]), float(raw[2]), float(raw[3]), height))
    field_cfg = data.get("field", {"kind": "uniform", "value": 20.0})
    field = field_from_config(field_cfg, walls)
    return SiteModel(walls, field, floor_height=floor_height, ambient_c=float(data.get("ambient_c", 15.0)))


def _load_pipeline_config(path: Path) -> PipelineConfig:
    data = _load_json(path)
    matcher_data = data.pop("matcher", None)
    weights_data = data.pop("weights", None)
    field_names = {f.name for f in dataclasses.fields(PipelineConfig)}
    _reject_unknown(data, field_names - {"matcher", "weights"}, path)
    kwargs = dict(data)
    if matcher_data is not None:
        matcher_names = {f.name for f in dataclasses.fields(MatcherConfig)} - {"huber"}
        _reject_unknown(matcher_data, matcher_names | {"huber_delta"}, path)
        huber_delta = matcher_data.pop("huber_delta", None)
        if huber_delta is not None:
            matcher_data["huber"] = HuberLoss(float(huber_delta))
        kwargs["matcher"] = MatcherConfig(**matcher_data)
    if weights_data is not None:
        _reject_unknown(weights_data, {f.name for f in dataclasses.fields(SolverWeights)}, path)
        kwargs["weights"] = SolverWeights(**weights_data)
    return PipelineConfig(**kwargs)


def _cmd_simulate(args: argparse.Namespace) -> int:
    if args.seed < 0:
        raise ValueError("seed must be a non-negative integer")
    site = _load_site(args.site)
    traj = _load_trajectory(Path(args.traj))
    noise = _load_noise(Path(args.noise))
    dataset = simulate_session(site, traj, noise, seed=args.seed)
    formats.save_session(dataset, Path(args.out))
    print(
        f"simulated {len(dataset.scans)} scans, {len(dataset.imu)} imu samples, "
        f"{len(dataset.frames)} thermal frames -> {args.out}"
    )
    return 0


def _cmd_map(args: argparse.Namespace) -> int:
    dataset = formats.load_session(Path(args.session))
    config = _load_pipeline_config(Path(args.config)) if args.config else PipelineConfig()
    result = run_mapping(dataset, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    formats.export_ply(result.cloud, out / "map.ply")
    formats.export_colored_view(result.cloud, out / "colored.ply")
    formats.write_trajectory_csv(out / "trajectory.csv", result.trajectory)
    formats.write_report(out / "diagnostics.txt", result.diagnostics)
    print(
        f"mapped {result.diagnostics['keyframes']} keyframes, "
        f"{result.diagnostics['map_points']} map points -> {out}"
    )
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    reference = formats.read_ply(Path(args.reference)).drop_unset()
    moving = formats.read_ply(Path(args.moving)).drop_unset()
    transform, rms = icp_align(reference, moving)
    aligned = transform_cloud(moving, transform)
    report = temperature_delta(reference, aligned, alignment=transform)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    yaw = math.atan2(transform.rotation[1, 0], transform.rotation[0, 0])
    translation = np.asarray(transform.translation, dtype=float)
    formats.write_report(
        out / "report.txt",
        {
            "reference_points": len(reference),
            "moving_points": len(moving),
            "align_x_m": float(translation[0]),
            "align_y_m": float(translation[1]),
            "align_z_m": float(translation[2]),
            "align_yaw_rad": yaw,
            "align_rms_m": rms,
            "matched_pairs": report.matched_pairs,
            "mean_dt_c": report.mean_dt,
            "rms_nn_distance_m": report.rms_nn_distance,
            "no_overlap": report.no_overlap,
        },
    )
    formats.write_delta_csv(out / "deltas.csv", report.positions, report.deltas)
    print(f"compared maps: {report.matched_pairs} pairs, mean dT {report.mean_dt:.3f} C -> {out}")
    return 0


def _cmd_maturity(args: argparse.Namespace) -> int:
    series_dir = Path(args.series)
    entries = formats.read_series_csv(series_dir / "series.csv")
    sessions = []
    for time_h, name in entries:
        cloud = formats.read_ply(series_dir / name).drop_unset()
        if len(cloud) == 0:
            raise ValueError(f"{series_dir / name}: no temperature-set points")
        sessions.append((time_h, cloud))

    first_cloud = sessions[0][1]
    centers, _ = voxel_thin(first_cloud.positions, first_cloud.temperatures, MATURITY_THIN_VOXEL)
    # Snap the voxel centroids onto real map points: a centroid can sit
    # farther than the match radius from every point that produced it, so
    # monitoring the centroid itself would track nothing.
    _, nearest = cKDTree(first_cloud.positions).query(centers)
    first_positions = first_cloud.positions[np.unique(nearest)]
    records = [
        MaturityRecord(position=Vec3(*pos), datum_temperature=args.datum) for pos in first_positions
    ]
    for time_h, cloud in sessions:
        tree = cKDTree(cloud.positions)
        dist, idx = tree.query(first_positions)
        temps = cloud.temperatures[idx]
        for k in np.flatnonzero(dist <= MATURITY_MATCH_RADIUS):
            records[k] = accumulate_maturity(records[k], (time_h, float(temps[k])))

    tracked = [r for r in records if len(r.samples) >= 2]
    violations = {id(r): rate_alert(r, args.max_rate) for r in tracked}
    total_violations = sum(len(v) for v in violations.values())
    maturities = np.array([r.maturity for r in tracked]) if tracked else np.empty(0)

    out = Path(args.out)
    formats.write_report(
        out,
        {
            "sessions": len(sessions),
            "monitor_positions": len(records),
            "positions_with_history": len(tracked),
            "datum_c": float(args.datum),
            "max_rate_c_per_h": float(args.max_rate),
            "maturity_min_ch": float(maturities.min()) if maturities.size else math.nan,
            "maturity_mean_ch": float(maturities.mean()) if maturities.size else math.nan,
            "maturity_max_ch": float(maturities.max()) if maturities.size else math.nan,
            "rate_violations": total_violations,
        },
    )
    lines = ["x,y,z,samples,maturity_ch,violations"]
    for r in records:
        v = len(violations.get(id(r), []))
        lines.append(
            f"{r.position.x!r},{r.position.y!r},{r.position.z!r},{len(r.samples)},{r.maturity!r},{v}"
        )
    formats.atomic_write_bytes(out.parent / (out.stem + "_points.csv"), ("\n".join(lines) + "\n").encode("ascii"))
    print(f"maturity over {len(sessions)} sessions, {len(tracked)} tracked positions -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thermoslam",
        description="Thermal 2.5D mapping: simulate sessions, build maps, compare them over time.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic capture session")
    p.add_argument("--site", required=True, help="site preset name or site JSON file")
    p.add_argument("--traj", required=True, help="trajectory JSON file")
    p.add_argument("--noise", required=True, help="noise JSON file")
    p.add_argument("--seed", required=True, type=int, help="RNG seed (non-negative)")
    p.add_argument("--out", required=True, help="output session directory")

    p = sub.add_parser("map", help="reconstruct a thermal map from a session")
    p.add_argument("--session", required=True, help="session directory")
    p.add_argument("--config", default=None, help="pipeline config JSON file (optional)")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("compare", help="align two maps and report temperature deltas")
    p.add_argument("--reference", required=True, help="reference map.ply")
    p.add_argument("--moving", required=True, help="moving map.ply")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("maturity", help="accumulate curing maturity over a map series")
    p.add_argument("--series", required=True, help="directory with series.csv and the session maps")
    p.add_argument("--datum", type=float, default=-10.0, help="datum temperature, degC (default -10)")
    p.add_argument("--max-rate", type=float, default=10.0, help="alert threshold, degC/h (default 10)")
    p.add_argument("--out", required=True, help="output report file")
    return parser


_COMMANDS = {
    "simulate": _cmd_simulate,
    "map": _cmd_map,
    "compare": _cmd_compare,
    "maturity": _cmd_maturity,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, RuntimeError, OSError) as exc:
        message = " ".join(str(exc).split()) or exc.__class__.__name__
        print(f"error: {message}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
