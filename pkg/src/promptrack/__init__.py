"""Video object tracking and segmentation by box-prompt propagation."""

from .backend import Backend, ReplayBackend, RecordingBackend, SegmentationResult, replay_load
from .config import RunConfig, load_config
from .prompts import Perturbation, jitter_grid, perturb_box
from .raster import Box, Point, bbox, iou
from .synthetic import OracleParams, SceneObject, SceneScript, SyntheticBackend, make_benchmark_scripts
from .tracker import TrackerConfig, run_sequence, track_step

__all__ = [
    "Backend",
    "Box",
    "OracleParams",
    "Perturbation",
    "Point",
    "RecordingBackend",
    "ReplayBackend",
    "RunConfig",
    "SceneObject",
    "SceneScript",
    "SegmentationResult",
    "SyntheticBackend",
    "TrackerConfig",
    "bbox",
    "iou",
    "jitter_grid",
    "load_config",
    "make_benchmark_scripts",
    "perturb_box",
    "replay_load",
    "run_sequence",
    "track_step",
]
