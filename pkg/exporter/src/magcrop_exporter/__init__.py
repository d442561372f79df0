"""Checkpoint-to-wire-format exporter for the magcrop pipeline."""

from .export import (
    ExportError,
    ExportManifest,
    ModelUnsupported,
    NoImageTokens,
    WidthMismatch,
    export_attention,
    export_embedding,
    load_model,
    read_manifest,
    reference_heatmap,
)
from .magt import write_magt
from .toy import ToyTextEncoder, ToyVLM, hash_tokenize

__all__ = [
    "ExportError",
    "ExportManifest",
    "ModelUnsupported",
    "NoImageTokens",
    "ToyTextEncoder",
    "ToyVLM",
    "WidthMismatch",
    "export_attention",
    "export_embedding",
    "hash_tokenize",
    "load_model",
    "read_manifest",
    "reference_heatmap",
    "write_magt",
]
