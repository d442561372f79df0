"""Task granularity classification.

A query maps to one of three granularities: whole-image, region, or
pixel. The primary route runs a 768->256->128->3 feedforward head over a
query embedding; a deterministic keyword table covers CLI use when no
embedding or weights are available.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptyQuery, IoFailure, NonFiniteWeight, ShapeMismatch
from .io_formats import read_tensor

EMBEDDING_WIDTH = 768
_HIDDEN1 = 256
_HIDDEN2 = 128
_CLASSES = 3


class GranularityLabel(enum.IntEnum):
    """Task coarseness. The Image < Region < Pixel order is used only to
    break argmax ties."""

    IMAGE = 0
    REGION = 1
    PIXEL = 2

    @classmethod
    def parse(cls, text: str) -> "GranularityLabel":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ConfigError(f"unknown granularity {text!r}") from None

    def __str__(self) -> str:
        return self.name.lower()


def _check_vector(values, width: int, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.shape != (width,):
        raise ShapeMismatch(f"{what} must have width {width}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteWeight(f"{what} contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class QueryEmbedding:
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _check_vector(self.values, EMBEDDING_WIDTH, "query embedding"))


_WEIGHT_SHAPES = {
    "W1": (_HIDDEN1, EMBEDDING_WIDTH),
    "b1": (_HIDDEN1,),
    "W2": (_HIDDEN2, _HIDDEN1),
    "b2": (_HIDDEN2,),
    "W3": (_CLASSES, _HIDDEN2),
    "b3": (_CLASSES,),
}


@dataclass(frozen=True)
class ClassifierWeights:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    def __post_init__(self):
        for name, want in _WEIGHT_SHAPES.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != want:
                raise ShapeMismatch(f"classifier {name} must have shape {want}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise NonFiniteWeight(f"classifier {name} contains NaN or Inf")
            object.__setattr__(self, name, arr)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def classify_embedding(e: QueryEmbedding, w: ClassifierWeights) -> tuple[GranularityLabel, np.ndarray]:
    """Run the feedforward head; returns (label, softmax probabilities).

    Hidden activations are ReLU. Ties in the logits resolve to the lowest
    label in Image < Region < Pixel order.
    """
    h1 = np.maximum(w.W1 @ e.values + w.b1, 0.0)
    h2 = np.maximum(w.W2 @ h1 + w.b2, 0.0)
    logits = w.W3 @ h2 + w.b3
    probs = softmax(logits)
    return GranularityLabel(int(np.argmax(logits))), probs


_PIXEL_KEYWORDS = ("segment", "mask", "outline", "delineate")
_REGION_KEYWORDS = (
    "where",
    "locate",
    "count",
    "bounding box",
    "which object",
    "is there",
    "classify the object",
)


def classify_keywords(query: str) -> GranularityLabel:
    """Deterministic keyword fallback; first matching rule wins."""
    if not query or not query.strip():
        raise EmptyQuery("query text is empty")
    text = query.lower()
    if any(k in text for k in _PIXEL_KEYWORDS):
        return GranularityLabel.PIXEL
    if any(k in text for k in _REGION_KEYWORDS):
        return GranularityLabel.REGION
    return GranularityLabel.IMAGE


MANIFEST_NAME = "manifest.txt"


def save_classifier_weights(w: ClassifierWeights, out_dir) -> None:
    """One MAGT tensor per parameter plus a manifest of names and shapes."""
    from .io_formats import Tensor, write_tensor

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for name in _WEIGHT_SHAPES:
        arr = getattr(w, name)
        fname = f"{name}.magt"
        write_tensor(Tensor.from_array(arr), out / fname)
        lines.append(f"{name}\t{fname}\t{'x'.join(str(d) for d in arr.shape)}")
    (out / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_classifier_weights(weights_dir) -> ClassifierWeights:
    """Load the six parameters named by the manifest, checking shapes."""
    root = Path(weights_dir)
    manifest = root / MANIFEST_NAME
    try:
        lines = manifest.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read {manifest}: {exc}") from exc
    entries = {}
    for line in lines:
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ConfigError(f"bad manifest line: {line!r}")
        name, fname, dims = parts
        shape = tuple(int(d) for d in dims.split("x"))
        entries[name] = (fname, shape)
    missing = set(_WEIGHT_SHAPES) - set(entries)
    if missing:
        raise ConfigError(f"manifest missing parameters: {sorted(missing)}")
    params = {}
    for name, want in _WEIGHT_SHAPES.items():
        fname, declared = entries[name]
        t = read_tensor(root / fname)
        if t.shape != declared:
            raise ShapeMismatch(f"{fname}: manifest declares {declared}, file has {t.shape}")
        if t.shape != want:
            raise ShapeMismatch(f"{name} must have shape {want}, got {t.shape}")
        params[name] = t.data
    return ClassifierWeights(**params)
