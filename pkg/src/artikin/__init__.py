"""Two-part articulated object recovery from 3D point tracks."""

from .joints import estimate_joint
from .kinematics import JointModel
from .metrics import evaluate
from .pipeline import run_pipeline
from .refine import RefineConfig, refine
from .segmentation import segment
from .synth import generate_scene, preset
from .tracks import TrackSet, filter_tracks, load_bundle, save_bundle

__version__ = "0.1.0"

__all__ = [
    "JointModel",
    "RefineConfig",
    "TrackSet",
    "estimate_joint",
    "evaluate",
    "filter_tracks",
    "generate_scene",
    "load_bundle",
    "preset",
    "refine",
    "run_pipeline",
    "save_bundle",
    "segment",
]
