#==============================================================================
# SegCrowd - Crowd Counting with Segmentation Attention
#==============================================================================
# File: __init__.py
# Description: Package initialization for SegCrowd
#==============================================================================

"""
SegCrowd: desk-scale multi-task crowd counting

Ground-truth generation from dot annotations, a multi-receptive-field
network with classification, segmentation and density heads, the
four-term training objective, and MAE/MSE evaluation.

Primary entry point: segcrowd (segcrowd.cli:main) or scripts/segcrowd.py
Configuration: configs/segcrowd.yaml
"""

__version__ = "0.1.0"

from .config import SegCrowdConfig, load_or_create_config
from .errors import SegCrowdError
from .groundtruth import AnnotatedImage, CountBins, density_map, make_bins, segmentation_map
from .model import ModelParams, build, forward, load_model, save_model
from .losses import total_loss
from .data import SceneSynthesizer, load_manifest, synth_scene, write_dataset
from .trainer import Trainer, TrainingResult
from .evaluation import EvalReport, cross_validate, evaluate
from .ablation import ablation_run, preset_variants
from .logging_utils import PipelineLogger, RunLogger
from .validation import AnnotationValidator

__all__ = [
    # Core
    "SegCrowdConfig",
    "load_or_create_config",
    "SegCrowdError",
    "RunLogger",
    "PipelineLogger",
    # Ground truth
    "AnnotatedImage",
    "CountBins",
    "density_map",
    "segmentation_map",
    "make_bins",
    # Network
    "ModelParams",
    "build",
    "forward",
    "save_model",
    "load_model",
    "total_loss",
    # Data
    "AnnotationValidator",
    "SceneSynthesizer",
    "synth_scene",
    "load_manifest",
    "write_dataset",
    # Training and evaluation
    "Trainer",
    "TrainingResult",
    "EvalReport",
    "evaluate",
    "cross_validate",
    "ablation_run",
    "preset_variants",
]
