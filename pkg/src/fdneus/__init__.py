"""Desk-scale neural implicit surface reconstruction with multi-level importance sampling."""

from .config import ABLATIONS, ConfigError, ExperimentConfig, load_config, parse_config
from .core import CameraView, ImagePlane, Ray, seeded_rng
from .field import FieldConfig, NeuralSdfField
from .meshing import TriangleMesh, extract_mesh, marching_cubes
from .metrics import MetricReport, eval_2d, eval_3d, evaluate_meshes, sample_mesh
from .scene import PrimitiveScene, ViewBundle, sphere_room, table_lamp_room
from .trainer import LossWeights, NumericalError, StageSchedule, Trainer

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS", "CameraView", "ConfigError", "ExperimentConfig", "FieldConfig", "ImagePlane",
    "LossWeights", "MetricReport", "NeuralSdfField", "NumericalError", "PrimitiveScene", "Ray",
    "StageSchedule", "Trainer", "TriangleMesh", "ViewBundle", "eval_2d", "eval_3d",
    "evaluate_meshes", "extract_mesh", "load_config", "marching_cubes", "parse_config",
    "sample_mesh", "seeded_rng", "sphere_room", "table_lamp_room",
]
