"""Dataset formats, the mapping pipeline, and the command-line surface."""

from .formats import (
    DatasetFormatError,
    export_colored_view,
    export_ply,
    load_session,
    rainbow_rgb,
    read_calib,
    read_imu_csv,
    read_ply,
    read_scans_csv,
    read_series_csv,
    read_thermal_frames,
    read_trajectory_csv,
    save_session,
    write_calib,
    write_imu_csv,
    write_scans_csv,
    write_series_csv,
    write_thermal_frames,
    write_trajectory_csv,
)
from .pipeline import MappingResult, PipelineConfig, run_mapping

__all__ = [
    "DatasetFormatError",
    "MappingResult",
    "PipelineConfig",
    "export_colored_view",
    "export_ply",
    "load_session",
    "rainbow_rgb",
    "read_calib",
    "read_imu_csv",
    "read_ply",
    "read_scans_csv",
    "read_series_csv",
    "read_thermal_frames",
    "read_trajectory_csv",
    "run_mapping",
    "save_session",
    "write_calib",
    "write_imu_csv",
    "write_scans_csv",
    "write_series_csv",
    "write_thermal_frames",
    "write_trajectory_csv",
]
