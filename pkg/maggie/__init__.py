"""
Mask-guided instance matting for images and short videos.
"""

__version__ = "0.1.0"

from .config import RunConfig, load_config
from .decoder import CoarseMatteBundle, InstanceMatteDecoder
from .encoder import FeaturePyramid, PyramidEncoder
from .errors import (
    CapacityError,
    CompatibilityError,
    ConfigError,
    GenerationError,
    InputValidationError,
    MaggieError,
    TrainingError,
)
from .guidance import IdentityEmbedding, build_input, embed_masks
from .model import MaggieNet, MattingOutput
from .sparse_refine import SparseRefiner, extract_uncertainty, progressive_refine
from .temporal import BiConvGRU, DeltaNet, delta_ground_truth, fuse_mattes, temporal_aggregate

__all__ = [
    "RunConfig",
    "load_config",
    "CoarseMatteBundle",
    "InstanceMatteDecoder",
    "FeaturePyramid",
    "PyramidEncoder",
    "MaggieError",
    "InputValidationError",
    "CapacityError",
    "ConfigError",
    "CompatibilityError",
    "GenerationError",
    "TrainingError",
    "IdentityEmbedding",
    "build_input",
    "embed_masks",
    "MaggieNet",
    "MattingOutput",
    "SparseRefiner",
    "extract_uncertainty",
    "progressive_refine",
    "BiConvGRU",
    "DeltaNet",
    "delta_ground_truth",
    "fuse_mattes",
    "temporal_aggregate",
]
