"""On-disk session and result formats.

A session directory holds scans.csv, imu.csv, thermal/index.csv plus one
16-bit PGM per thermal frame, calib.txt, and optionally groundtruth.csv.
Maps are binary little-endian PLY with temperature in the intensity
channel. Every writer here has a matching reader; write -> read -> write
is byte-identical. All floats are serialized with repr() so values
round-trip exactly; all writes go through a temp file and an atomic
rename.
"""

from __future__ import annotations

import math
import os
import tempfile
from pathlib import Path

import numpy as np

from ..core import ImuSample, PlanarPose, RigidTransform3, Scan2D, Timestamp, Vec3
from ..sim import SessionDataset
from ..thermal_map import Calibration, CameraIntrinsics, ThermalImage, ThermalPointCloud

SCANS_FILE = "scans.csv"
IMU_FILE = "imu.csv"
THERMAL_DIR = "thermal"
THERMAL_INDEX = "index.csv"
CALIB_FILE = "calib.txt"
GROUND_TRUTH_FILE = "groundtruth.csv"

CALIB_KEYS = (
    "fx",
    "fy",
    "cx",
    "cy",
    "width",
    "height",
    "cam_extrinsic",
    "sensor_height",
    "floor_height",
    "vertical_step",
    "thermal_scale",
    "thermal_offset",
)


class DatasetFormatError(ValueError):
    """A dataset file violates its format contract."""


def _fail(path: Path, line: int | None, reason: str) -> "DatasetFormatError":
    where = f"{path}:{line}" if line is not None else str(path)
    return DatasetFormatError(f"{where}: {reason}")


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write via a sibling temp file and rename, so readers never see partials."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _fmt(value: float) -> str:
    return repr(float(value))


def _parse_float(token: str, path: Path, line: int, what: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise _fail(path, line, f"bad {what}: {token!r}") from None
    if math.isnan(value) or math.isinf(value):
        raise _fail(path, line, f"{what} must be finite, got {token!r}")
    return value


def _parse_int(token: str, path: Path, line: int, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise _fail(path, line, f"bad {what}: {token!r}") from None


def _check_monotonic(stamps: list[int], path: Path, lines: list[int]) -> None:
    for k in range(1, len(stamps)):
        if stamps[k] < stamps[k - 1]:
            raise _fail(path, lines[k], f"timestamp {stamps[k]} goes backwards (previous {stamps[k - 1]})")


# ---------------------------------------------------------------------------
# Range scans.

SCANS_HEADER = "stamp_ns,angle_min,angle_increment,ranges"


def write_scans_csv(path: Path, scans: list[Scan2D]) -> None:
    lines = [SCANS_HEADER]
    for scan in scans:
        ranges = ";".join("nan" if math.isnan(r) else _fmt(r) for r in scan.ranges)
        lines.append(f"{scan.stamp},{_fmt(scan.angle_min)},{_fmt(scan.angle_increment)},{ranges}")
    atomic_write_bytes(Path(path), ("\n".join(lines) + "\n").encode("ascii"))


def read_scans_csv(path: Path) -> list[Scan2D]:
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except OSError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None
    except UnicodeDecodeError:
        raise _fail(path, None, "not an ASCII text file") from None
    rows = text.splitlines()
    if not rows or rows[0] != SCANS_HEADER:
        raise _fail(path, 1, f"expected header {SCANS_HEADER!r}")
    scans: list[Scan2D] = []
    stamps: list[int] = []
    line_numbers: list[int] = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            raise _fail(path, lineno, "blank line")
        parts = row.split(",")
        if len(parts) != 4:
            raise _fail(path, lineno, f"expected 4 columns, got {len(parts)}")
        stamp = _parse_int(parts[0], path, lineno, "stamp_ns")
        angle_min = _parse_float(parts[1], path, lineno, "angle_min")
        angle_increment = _parse_float(parts[2], path, lineno, "angle_increment")
        tokens = parts[3].split(";")
        ranges = np.empty(len(tokens))
        for k, token in enumerate(tokens):
            if token == "nan":
                ranges[k] = math.nan
            else:
                ranges[k] = _parse_float(token, path, lineno, "range")
        try:
            scans.append(Scan2D(stamp, angle_min, angle_increment, ranges))
        except ValueError as exc:
            raise _fail(path, lineno, str(exc)) from None
        stamps.append(stamp)
        line_numbers.append(lineno)
    _check_monotonic(stamps, path, line_numbers)
    return scans


# ---------------------------------------------------------------------------
# IMU samples.

IMU_HEADER = "stamp_ns,ax,ay,az"


def write_imu_csv(path: Path, samples: list[ImuSample]) -> None:
    lines = [IMU_HEADER]
    for s in samples:
        lines.append(f"{s.stamp},{_fmt(s.accel.x)},{_fmt(s.accel.y)},{_fmt(s.accel.z)}")
    atomic_write_bytes(Path(path), ("\n".join(lines) + "\n").encode("ascii"))


def read_imu_csv(path: Path) -> list[ImuSample]:
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except OSError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None
    except UnicodeDecodeError:
        raise _fail(path, None, "not an ASCII text file") from None
    rows = text.splitlines()
    if not rows or rows[0] != IMU_HEADER:
        raise _fail(path, 1, f"expected header {IMU_HEADER!r}")
    samples: list[ImuSample] = []
    stamps: list[int] = []
    line_numbers: list[int] = []
    for lineno, row in enumerate(rows[1:], start=2):
        parts = row.split(",")
        if len(parts) != 4:
            raise _fail(path, lineno, f"expected 4 columns, got {len(parts)}")
        stamp = _parse_int(parts[0], path, lineno, "stamp_ns")
        ax = _parse_float(parts[1], path, lineno, "ax")
        ay = _parse_float(parts[2], path, lineno, "ay")
        az = _parse_float(parts[3], path, lineno, "az")
        try:
            samples.append(ImuSample(stamp, Vec3(ax, ay, az)))
        except ValueError as exc:
            raise _fail(path, lineno, str(exc)) from None
        stamps.append(stamp)
        line_numbers.append(lineno)
    _check_monotonic(stamps, path, line_numbers)
    return samples


# ---------------------------------------------------------------------------
# Thermal frames: 16-bit binary PGM per frame plus an index CSV.

THERMAL_HEADER = "stamp_ns,file"
PGM_MAXVAL = 65535


def write_pgm16(path: Path, raw: np.ndarray) -> None:
    """Binary PGM, 16-bit big-endian samples (the PGM byte order)."""
    raw = np.asarray(raw)
    if raw.ndim != 2:
        raise ValueError("PGM image must be 2D")
    if raw.dtype.kind not in "ui" or raw.min() < 0 or raw.max() > PGM_MAXVAL:
        raise ValueError("PGM samples must be integers in [0, 65535]")
    h, w = raw.shape
    header = f"P5\n{w} {h}\n{PGM_MAXVAL}\n".encode("ascii")
    atomic_write_bytes(Path(path), header + raw.astype(">u2").tobytes())


def read_pgm16(path: Path) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None
    # Header: magic, width, height, maxval as ASCII tokens, one trailing
    # whitespace byte, then big-endian samples.
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise _fail(path, None, "truncated PGM header")
        tokens.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise _fail(path, None, f"not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise _fail(path, None, "non-numeric PGM dimensions") from None
    if w < 1 or h < 1:
        raise _fail(path, None, f"bad PGM dimensions {w}x{h}")
    if maxval != PGM_MAXVAL:
        raise _fail(path, None, f"expected maxval {PGM_MAXVAL}, got {maxval}")
    payload = blob[pos:]
    if len(payload) != 2 * w * h:
        raise _fail(path, None, f"PGM payload is {len(payload)} bytes, expected {2 * w * h}")
    return np.frombuffer(payload, dtype=">u2").reshape(h, w).astype(np.uint16)


def temperatures_to_raw(temperatures: np.ndarray, scale: float, offset: float) -> np.ndarray:
    raw = np.round((np.asarray(temperatures, dtype=float) - offset) / scale)
    if raw.min() < 0 or raw.max() > PGM_MAXVAL:
        raise ValueError("temperatures outside the encodable raw range")
    return raw.astype(np.uint16)


def raw_to_temperatures(raw: np.ndarray, scale: float, offset: float) -> np.ndarray:
    return np.asarray(raw, dtype=float) * scale + offset


def write_thermal_frames(session_dir: Path, frames: list[ThermalImage], calib: Calibration) -> None:
    thermal_dir = Path(session_dir) / THERMAL_DIR
    lines = [THERMAL_HEADER]
    for k, frame in enumerate(frames):
        name = f"frame_{k:06d}.pgm"
        raw = temperatures_to_raw(frame.temperatures, calib.thermal_scale, calib.thermal_offset)
        write_pgm16(thermal_dir / name, raw)
        lines.append(f"{frame.stamp},{name}")
    atomic_write_bytes(thermal_dir / THERMAL_INDEX, ("\n".join(lines) + "\n").encode("ascii"))


def read_thermal_frames(session_dir: Path, calib: Calibration) -> list[ThermalImage]:
    thermal_dir = Path(session_dir) / THERMAL_DIR
    index = thermal_dir / THERMAL_INDEX
    try:
        text = index.read_text(encoding="ascii")
    except OSError as exc:
        raise DatasetFormatError(f"{index}: {exc}") from None
    except UnicodeDecodeError:
        raise _fail(index, None, "not an ASCII text file") from None
    rows = text.splitlines()
    if not rows or rows[0] != THERMAL_HEADER:
        raise _fail(index, 1, f"expected header {THERMAL_HEADER!r}")
    frames: list[ThermalImage] = []
    stamps: list[int] = []
    line_numbers: list[int] = []
    for lineno, row in enumerate(rows[1:], start=2):
        parts = row.split(",")
        if len(parts) != 2:
            raise _fail(index, lineno, f"expected 2 columns, got {len(parts)}")
        stamp = _parse_int(parts[0], index, lineno, "stamp_ns")
        name = parts[1]
        if not name or "/" in name or "\\" in name or name.startswith("."):
            raise _fail(index, lineno, f"bad frame file name {name!r}")
        raw = read_pgm16(thermal_dir / name)
        temps = raw_to_temperatures(raw, calib.thermal_scale, calib.thermal_offset)
        try:
            frames.append(ThermalImage(stamp, temps))
        except ValueError as exc:
            raise _fail(thermal_dir / name, None, str(exc)) from None
        stamps.append(stamp)
        line_numbers.append(lineno)
    _check_monotonic(stamps, index, line_numbers)
    return frames


# ---------------------------------------------------------------------------
# Calibration.


def write_calib(path: Path, calib: Calibration) -> None:
    intr = calib.intrinsics
    ext = np.hstack([calib.camera_extrinsic.rotation, np.asarray(calib.camera_extrinsic.translation, dtype=float).reshape(3, 1)])
    lines = [
        f"fx={_fmt(intr.fx)}",
        f"fy={_fmt(intr.fy)}",
        f"cx={_fmt(intr.cx)}",
        f"cy={_fmt(intr.cy)}",
        f"width={intr.width}",
        f"height={intr.height}",
        "cam_extrinsic=" + " ".join(_fmt(v) for v in ext.reshape(-1)),
        f"sensor_height={_fmt(calib.sensor_height)}",
        f"floor_height={_fmt(calib.floor_height)}",
        f"vertical_step={_fmt(calib.vertical_step)}",
        f"thermal_scale={_fmt(calib.thermal_scale)}",
        f"thermal_offset={_fmt(calib.thermal_offset)}",
    ]
    atomic_write_bytes(Path(path), ("\n".join(lines) + "\n").encode("ascii"))


def read_calib(path: Path) -> Calibration:
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except OSError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None
    except UnicodeDecodeError:
        raise _fail(path, None, "not an ASCII text file") from None
    values: dict[str, str] = {}
    for lineno, row in enumerate(text.splitlines(), start=1):
        if not row.strip():
            continue
        if "=" not in row:
            raise _fail(path, lineno, f"expected key=value, got {row!r}")
        key, _, value = row.partition("=")
        key = key.strip()
        if key not in CALIB_KEYS:
            raise _fail(path, lineno, f"unknown calibration key {key!r}")
        if key in values:
            raise _fail(path, lineno, f"duplicate calibration key {key!r}")
        values[key] = value.strip()
    missing = [k for k in CALIB_KEYS if k not in values]
    if missing:
        raise _fail(path, None, f"missing calibration keys: {', '.join(missing)}")

    def floatval(key: str) -> float:
        return _parse_float(values[key], path, None, key)

    def intval(key: str) -> int:
        return _parse_int(values[key], path, None, key)

    ext_tokens = values["cam_extrinsic"].split()
    if len(ext_tokens) != 12:
        raise _fail(path, None, f"cam_extrinsic needs 12 values, got {len(ext_tokens)}")
    ext = np.array([_parse_float(t, path, None, "cam_extrinsic") for t in ext_tokens]).reshape(3, 4)
    try:
        extrinsic = RigidTransform3(ext[:, :3], ext[:, 3])
        intrinsics = CameraIntrinsics(
            fx=floatval("fx"),
            fy=floatval("fy"),
            cx=floatval("cx"),
            cy=floatval("cy"),
            width=intval("width"),
            height=intval("height"),
        )
        return Calibration(
            intrinsics=intrinsics,
            camera_extrinsic=extrinsic,
            sensor_height=floatval("sensor_height"),
            floor_height=floatval("floor_height"),
            vertical_step=floatval("vertical_step"),
            thermal_scale=floatval("thermal_scale"),
            thermal_offset=floatval("thermal_offset"),
        )
    except ValueError as exc:
        raise _fail(path, None, str(exc)) from None


# ---------------------------------------------------------------------------
# Ground-truth / trajectory CSV (same shape, different file names).

TRAJECTORY_HEADER = "stamp_ns,x,y,theta_z"


def write_trajectory_csv(path: Path, trajectory: list[tuple[Timestamp, PlanarPose]]) -> None:
    lines = [TRAJECTORY_HEADER]
    for stamp, pose in trajectory:
        lines.append(f"{int(stamp)},{_fmt(pose.x)},{_fmt(pose.y)},{_fmt(pose.theta)}")
    atomic_write_bytes(Path(path), ("\n".join(lines) + "\n").encode("ascii"))


def read_trajectory_csv(path: Path) -> list[tuple[Timestamp, PlanarPose]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except OSError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None
    except UnicodeDecodeError:
        raise _fail(path, None, "not an ASCII text file") from None
    rows = text.splitlines()
    if not rows or rows[0] != TRAJECTORY_HEADER:
        raise _fail(path, 1, f"expected header {TRAJECTORY_HEADER!r}")
    out: list[tuple[Timestamp, PlanarPose]] = []
    stamps: list[int] = []
    line_numbers: list[int] = []
    for lineno, row in enumerate(rows[1:], start=2):
        parts = row.split(",")
        if len(parts) != 4:
            raise _fail(path, lineno, f"expected 4 columns, got {len(parts)}")
        stamp = _parse_int(parts[0], path, lineno, "stamp_ns")
        x = _parse_float(parts[1], path, lineno, "x")
        y = _parse_float(parts[2], path, lineno, "y")
        theta = _parse_float(parts[3], path, lineno, "theta_z")
        out.append((stamp, PlanarPose(x, y, theta)))
        stamps.append(stamp)
        line_numbers.append(lineno)
    _check_monotonic(stamps, path, line_numbers)
    return out


# ---------------------------------------------------------------------------
# Whole sessions.


def save_session(dataset: SessionDataset, session_dir: Path) -> None:
    """Write a session directory; deterministic bytes for identical data."""
    session_dir = Path(session_dir)
    session_dir.mkdir(parents=True, exist_ok=True)
    write_scans_csv(session_dir / SCANS_FILE, dataset.scans)
    write_imu_csv(session_dir / IMU_FILE, dataset.imu)
    write_thermal_frames(session_dir, dataset.frames, dataset.calib)
    write_calib(session_dir / CALIB_FILE, dataset.calib)
    if dataset.ground_truth is not None:
        write_trajectory_csv(session_dir / GROUND_TRUTH_FILE, dataset.ground_truth)


def load_session(session_dir: Path) -> SessionDataset:
    """Parse and validate a session directory.

    The groundtruth.csv sidecar is optional; everything else is required.
    """
    session_dir = Path(session_dir)
    if not session_dir.is_dir():
        raise DatasetFormatError(f"{session_dir}: not a directory")
    calib = read_calib(session_dir / CALIB_FILE)
    scans = read_scans_csv(session_dir / SCANS_FILE)
    imu = read_imu_csv(session_dir / IMU_FILE)
    frames = read_thermal_frames(session_dir, calib)
    ground_truth = None
    if (session_dir / GROUND_TRUTH_FILE).exists():
        ground_truth = read_trajectory_csv(session_dir / GROUND_TRUTH_FILE)
    return SessionDataset(scans, imu, frames, calib, ground_truth, site=None)


# ---------------------------------------------------------------------------
# PLY maps.


def _ply_header(count: int, session_stamp: int, colored: bool) -> bytes:
    lines = [
        "ply",
        "format binary_little_endian 1.0",
        f"comment session_unix_ns {int(session_stamp)}",
        f"element vertex {count}",
        "property float x",
        "property float y",
        "property float z",
        "property float intensity",
    ]
    if colored:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def export_ply(cloud: ThermalPointCloud, path: Path) -> None:
    """Temperature-annotated map as binary little-endian PLY.

    Temperature rides the intensity property. Unset temperatures are
    written as NaN intensity.
    """
    n = len(cloud)
    if n == 0:
        raise ValueError("refusing to export an empty cloud")
    data = np.empty((n, 4), dtype="<f4")
    data[:, :3] = cloud.positions
    data[:, 3] = cloud.temperatures
    atomic_write_bytes(Path(path), _ply_header(n, cloud.session_stamp, colored=False) + data.tobytes())


RAINBOW_ANCHORS = np.array(
    [
        [0, 0, 255],
        [0, 255, 255],
        [0, 255, 0],
        [255, 255, 0],
        [255, 0, 0],
    ],
    dtype=float,
)
UNSET_RGB = np.array([128, 128, 128], dtype=np.uint8)


def rainbow_rgb(temperatures: np.ndarray, t_min: float = 10.0, t_max: float = 40.0) -> np.ndarray:
    """Map temperatures onto the blue-to-red rainbow scale.

    Linear interpolation between five anchor colors over four equal bands
    of the clamped normalized temperature; NaN maps to neutral gray.
    """
    if not t_min < t_max:
        raise ValueError("need t_min < t_max")
    temps = np.asarray(temperatures, dtype=float)
    t = np.clip((temps - t_min) / (t_max - t_min), 0.0, 1.0)
    t = np.where(np.isfinite(t), t, 0.0)
    band = np.minimum((t * 4).astype(int), 3)
    frac = t * 4 - band
    lo = RAINBOW_ANCHORS[band]
    hi = RAINBOW_ANCHORS[band + 1]
    rgb = np.round(lo + (hi - lo) * frac[:, None]).astype(np.uint8)
    rgb[~np.isfinite(temps)] = UNSET_RGB
    return rgb


def export_colored_view(cloud: ThermalPointCloud, path: Path, t_min: float = 10.0, t_max: float = 40.0) -> None:
    """PLY with rainbow red/green/blue channels appended to each vertex."""
    n = len(cloud)
    if n == 0:
        raise ValueError("refusing to export an empty cloud")
    rgb = rainbow_rgb(cloud.temperatures, t_min, t_max)
    vertex = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("intensity", "<f4"),
                       ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    data = np.empty(n, dtype=vertex)
    data["x"], data["y"], data["z"] = cloud.positions.T.astype("<f4")
    data["intensity"] = cloud.temperatures.astype("<f4")
    data["red"], data["green"], data["blue"] = rgb.T
    atomic_write_bytes(Path(path), _ply_header(n, cloud.session_stamp, colored=True) + data.tobytes())


PLAIN_PLY_PROPS = [("float", "x"), ("float", "y"), ("float", "z"), ("float", "intensity")]
COLORED_PLY_PROPS = PLAIN_PLY_PROPS + [("uchar", "red"), ("uchar", "green"), ("uchar", "blue")]


def read_ply(path: Path) -> ThermalPointCloud:
    """Load a map written by export_ply or export_colored_view.

    Color channels, when present, are validation-checked and dropped; the
    cloud carries positions and temperatures.
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None
    end_marker = b"end_header\n"
    end = blob.find(end_marker)
    if not blob.startswith(b"ply\n") or end < 0:
        raise _fail(path, None, "not a PLY file")
    try:
        header_lines = blob[:end].decode("ascii").splitlines()
    except UnicodeDecodeError:
        raise _fail(path, None, "non-ASCII PLY header") from None
    if len(header_lines) < 2 or header_lines[1] != "format binary_little_endian 1.0":
        raise _fail(path, 2, "expected format binary_little_endian 1.0")
    session_stamp = 0
    count = None
    props: list[tuple[str, str]] = []
    for lineno, line in enumerate(header_lines[2:], start=3):
        parts = line.split()
        if not parts:
            raise _fail(path, lineno, "blank header line")
        if parts[0] == "comment":
            if len(parts) == 3 and parts[1] == "session_unix_ns":
                session_stamp = _parse_int(parts[2], path, lineno, "session_unix_ns")
            continue
        if parts[0] == "element":
            if len(parts) != 3 or parts[1] != "vertex" or count is not None:
                raise _fail(path, lineno, f"unsupported element line {line!r}")
            count = _parse_int(parts[2], path, lineno, "vertex count")
            if count < 0:
                raise _fail(path, lineno, f"negative vertex count {count}")
        elif parts[0] == "property":
            if len(parts) != 3:
                raise _fail(path, lineno, f"bad property line {line!r}")
            props.append((parts[1], parts[2]))
        else:
            raise _fail(path, lineno, f"unsupported header line {line!r}")
    if count is None:
        raise _fail(path, None, "missing vertex element")
    if props == PLAIN_PLY_PROPS:
        vertex = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("intensity", "<f4")])
    elif props == COLORED_PLY_PROPS:
        vertex = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("intensity", "<f4"),
                           ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    else:
        raise _fail(path, None, f"unsupported property layout {props}")
    payload = blob[end + len(end_marker):]
    if len(payload) != count * vertex.itemsize:
        raise _fail(path, None, f"payload is {len(payload)} bytes, expected {count * vertex.itemsize}")
    data = np.frombuffer(payload, dtype=vertex)
    positions = np.column_stack([data["x"], data["y"], data["z"]]).astype(float)
    if not np.all(np.isfinite(positions)):
        raise _fail(path, None, "non-finite vertex positions")
    return ThermalPointCloud(positions, data["intensity"].astype(float), session_stamp)


# ---------------------------------------------------------------------------
# Plain-text reports: `key = value` lines, deterministic key order.


def write_report(path: Path, entries: dict[str, object]) -> None:
    lines = []
    for key, value in entries.items():
        if isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, float):
            rendered = _fmt(value)
        else:
            rendered = str(value)
        lines.append(f"{key} = {rendered}")
    atomic_write_bytes(Path(path), ("\n".join(lines) + "\n").encode("ascii"))


def read_report(path: Path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except OSError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None
    except UnicodeDecodeError:
        raise _fail(path, None, "not an ASCII text file") from None
    out: dict[str, str] = {}
    for lineno, row in enumerate(text.splitlines(), start=1):
        if not row.strip():
            continue
        if " = " not in row:
            raise _fail(path, lineno, f"expected 'key = value', got {row!r}")
        key, _, value = row.partition(" = ")
        out[key] = value
    return out


def write_delta_csv(path: Path, positions: np.ndarray, deltas: np.ndarray) -> None:
    lines = ["x,y,z,dt"]
    for (x, y, z), dt in zip(positions, deltas):
        lines.append(f"{_fmt(x)},{_fmt(y)},{_fmt(z)},{_fmt(dt)}")
    atomic_write_bytes(Path(path), ("\n".join(lines) + "\n").encode("ascii"))


# ---------------------------------------------------------------------------
# Map series for maturity monitoring: capture times plus per-session maps.

SERIES_HEADER = "time_h,file"


def write_series_csv(path: Path, entries: list[tuple[float, str]]) -> None:
    lines = [SERIES_HEADER]
    for time_h, name in entries:
        lines.append(f"{_fmt(time_h)},{name}")
    atomic_write_bytes(Path(path), ("\n".join(lines) + "\n").encode("ascii"))


def read_series_csv(path: Path) -> list[tuple[float, str]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except OSError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None
    except UnicodeDecodeError:
        raise _fail(path, None, "not an ASCII text file") from None
    rows = text.splitlines()
    if not rows or rows[0] != SERIES_HEADER:
        raise _fail(path, 1, f"expected header {SERIES_HEADER!r}")
    out: list[tuple[float, str]] = []
    for lineno, row in enumerate(rows[1:], start=2):
        parts = row.split(",")
        if len(parts) != 2:
            raise _fail(path, lineno, f"expected 2 columns, got {len(parts)}")
        time_h = _parse_float(parts[0], path, lineno, "time_h")
        name = parts[1]
        if not name or "/" in name or "\\" in name or name.startswith("."):
            raise _fail(path, lineno, f"bad map file name {name!r}")
        if out and time_h <= out[-1][0]:
            raise _fail(path, lineno, f"time {time_h} h does not advance past {out[-1][0]} h")
        out.append((time_h, name))
    if not out:
        raise _fail(path, None, "series has no sessions")
    return out
