"""Camera pose refinement against a Gaussian splat scene by best-first search."""

from .errors import ConfigError, ContractError, PlyDataError, PlyFormatError, SplatlocError
from .metrics import heuristic, psnr, ssim, sum_abs_diff
from .pose import (
    DEFAULT_SCHEDULE,
    Pose,
    PoseError,
    StepLevel,
    StepSchedule,
    inject_noise,
    look_at,
    median_errors,
    neighbors,
    pose_error,
)
from .renderer import Camera, render, render_with_stats
from .scene import GaussianPrimitive, Scene, SyntheticSpec, generate_synthetic, load_scene
from .search import RefinementResult, SearchOptions, best_first_search, refine

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "ConfigError",
    "ContractError",
    "DEFAULT_SCHEDULE",
    "GaussianPrimitive",
    "PlyDataError",
    "PlyFormatError",
    "Pose",
    "PoseError",
    "RefinementResult",
    "Scene",
    "SearchOptions",
    "SplatlocError",
    "StepLevel",
    "StepSchedule",
    "SyntheticSpec",
    "best_first_search",
    "generate_synthetic",
    "heuristic",
    "inject_noise",
    "load_scene",
    "look_at",
    "median_errors",
    "neighbors",
    "pose_error",
    "psnr",
    "refine",
    "render",
    "render_with_stats",
    "ssim",
    "sum_abs_diff",
]
