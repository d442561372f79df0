"""Prompt-guided, granularity-aware image preprocessing.

The pipeline classifies a query's task granularity, locates the
query-relevant image region from a gradient-weighted attention heatmap,
composes a multi-fidelity image that keeps that region sharp while
compressing the rest, and (for pixel-level tasks) decodes and fuses
multi-scale segmentation masks. Also included: referring-segmentation
metrics and a deterministic synthetic-scene oracle for model-free
testing.
"""

from .adjust import CompositePlan, adjust, compress, crop_image, sharp_area_ratio, stitch, token_count
from .crop import CellBox, CropBox, GridSpec, generate_candidates, pool_to_grid, score_candidate, select_box
from .errors import InputError, MagCropError
from .fusion import (
    FeaturePyramid,
    FusedMask,
    ProjectionWeights,
    SegTokenSet,
    decode_reference,
    fuse_masks,
    fuse_tokens,
    project_token,
)
from .granularity import (
    ClassifierWeights,
    GranularityLabel,
    QueryEmbedding,
    classify_embedding,
    classify_keywords,
)
from .heatmap import AttentionSlab, Heatmap, compute_heatmap
from .io_formats import (
    ImagePlane,
    PipelineConfig,
    Tensor,
    load_config,
    read_image,
    read_tensor,
    write_image,
    write_tensor,
)
from .metrics import MetricReport, evaluate, iou, siou
from .pipeline import PipelineInputs, PipelineRun, run_pipeline
from .synth import SceneSpec, Target, attention_for, features_for, planted_query, render_scene

__version__ = "0.1.0"

__all__ = [
    "AttentionSlab",
    "CellBox",
    "ClassifierWeights",
    "CompositePlan",
    "CropBox",
    "FeaturePyramid",
    "FusedMask",
    "GranularityLabel",
    "GridSpec",
    "Heatmap",
    "ImagePlane",
    "InputError",
    "MagCropError",
    "MetricReport",
    "PipelineConfig",
    "PipelineInputs",
    "PipelineRun",
    "ProjectionWeights",
    "QueryEmbedding",
    "SceneSpec",
    "SegTokenSet",
    "Target",
    "Tensor",
    "adjust",
    "attention_for",
    "classify_embedding",
    "classify_keywords",
    "compress",
    "compute_heatmap",
    "crop_image",
    "decode_reference",
    "evaluate",
    "features_for",
    "fuse_masks",
    "fuse_tokens",
    "generate_candidates",
    "iou",
    "load_config",
    "planted_query",
    "pool_to_grid",
    "project_token",
    "read_image",
    "read_tensor",
    "render_scene",
    "run_pipeline",
    "score_candidate",
    "select_box",
    "sharp_area_ratio",
    "siou",
    "stitch",
    "token_count",
    "write_image",
    "write_tensor",
]
