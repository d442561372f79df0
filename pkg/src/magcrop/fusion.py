"""Segmentation-token projection, fusion, and multi-scale mask decoding.

Context vectors of width 4096 are projected to the 256-wide decoder
space by a two-layer GELU MLP, blended into one query by token weights,
decoded against each pyramid level by a normalized inner product, and
the per-level masks are blended by level weights into the final
probability mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    NonFiniteWeight,
    ShapeMismatch,
    SizeMismatch,
    WeightCountMismatch,
    WeightsNotNormalized,
)
from .resample import resize_bilinear

TOKEN_WIDTH = 4096
QUERY_WIDTH = 256
DEFAULT_HIDDEN = 1024

_WEIGHT_SUM_TOL = 1e-6


def _finite(arr: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteWeight(f"{what} contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class SegTokenSet:
    """N context vectors of width 4096, one per segmentation token."""

    tokens: np.ndarray

    def __post_init__(self):
        t = _finite(self.tokens, "segmentation tokens")
        if t.ndim == 1:
            t = t[None, :]
        if t.ndim != 2 or t.shape[1] != TOKEN_WIDTH or t.shape[0] < 1:
            raise ShapeMismatch(f"tokens must be N x {TOKEN_WIDTH}, got {t.shape}")
        object.__setattr__(self, "tokens", t)

    @property
    def count(self) -> int:
        return self.tokens.shape[0]


@dataclass(frozen=True)
class ProjectionWeights:
    """Two-layer MLP mapping 4096 -> hidden -> 256."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        W1 = _finite(self.W1, "projection W1")
        b1 = _finite(self.b1, "projection b1")
        W2 = _finite(self.W2, "projection W2")
        b2 = _finite(self.b2, "projection b2")
        hidden = W1.shape[0] if W1.ndim == 2 else 0
        if W1.ndim != 2 or W1.shape[1] != TOKEN_WIDTH:
            raise ShapeMismatch(f"W1 must be hidden x {TOKEN_WIDTH}, got {W1.shape}")
        if b1.shape != (hidden,):
            raise ShapeMismatch(f"b1 must have shape ({hidden},), got {b1.shape}")
        if W2.shape != (QUERY_WIDTH, hidden):
            raise ShapeMismatch(f"W2 must be {QUERY_WIDTH} x {hidden}, got {W2.shape}")
        if b2.shape != (QUERY_WIDTH,):
            raise ShapeMismatch(f"b2 must have shape ({QUERY_WIDTH},), got {b2.shape}")
        for name, arr in (("W1", W1), ("b1", b1), ("W2", W2), ("b2", b2)):
            object.__setattr__(self, name, arr)

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]


@dataclass(frozen=True)
class FeaturePyramid:
    """Per-scale feature maps, channels x h x w, strictly growing in size."""

    levels: tuple[np.ndarray, ...]

    def __post_init__(self):
        if not self.levels:
            raise ShapeMismatch("pyramid needs at least one level")
        checked = []
        prev = None
        for i, level in enumerate(self.levels):
            arr = _finite(level, f"pyramid level {i}")
            if arr.ndim != 3 or arr.shape[0] != QUERY_WIDTH:
                raise ShapeMismatch(f"level {i} must be {QUERY_WIDTH} x h x w, got {arr.shape}")
            hw = arr.shape[1:]
            if prev is not None and not (hw[0] > prev[0] and hw[1] > prev[1]):
                raise ShapeMismatch("pyramid levels must strictly increase in size")
            prev = hw
            checked.append(arr)
        object.__setattr__(self, "levels", tuple(checked))


@dataclass(frozen=True)
class FusedMask:
    """Probability mask in [0, 1] with its binarization threshold."""

    values: np.ndarray
    threshold: float = 0.5

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeMismatch("mask values must be 2D")
        if not np.all(np.isfinite(v)):
            raise NonFiniteWeight("mask contains NaN or Inf")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ShapeMismatch("mask values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    def binarize(self) -> np.ndarray:
        """Strictly-above-threshold foreground; idempotent at 0.5."""
        return self.values > self.threshold


_erf = np.vectorize(math.erf, otypes=[np.float64])


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (erf-based) GELU."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + _erf(x / math.sqrt(2.0)))


def project_token(t: np.ndarray, w: ProjectionWeights) -> np.ndarray:
    """Map one 4096-wide context vector into the 256-wide decoder space."""
    t = _finite(t, "token")
    if t.shape != (TOKEN_WIDTH,):
        raise ShapeMismatch(f"token must have width {TOKEN_WIDTH}, got {t.shape}")
    return w.W2 @ gelu(w.W1 @ t + w.b1) + w.b2


def _check_weights(weights, count: int, what: str, nonnegative: bool = False) -> np.ndarray:
    arr = np.asarray(weights, dtype=np.float64).reshape(-1)
    if arr.shape[0] != count:
        raise WeightCountMismatch(f"{what}: {arr.shape[0]} weights for {count} items")
    if abs(float(arr.sum()) - 1.0) > _WEIGHT_SUM_TOL:
        raise WeightsNotNormalized(f"{what} must sum to 1 within {_WEIGHT_SUM_TOL}")
    if nonnegative and np.any(arr < 0):
        raise WeightsNotNormalized(f"{what} must be non-negative")
    return arr


def fuse_tokens(projected: np.ndarray, weights) -> np.ndarray:
    """Blend N projected tokens (N x 256) into one query vector."""
    projected = _finite(projected, "projected tokens")
    if projected.ndim == 1:
        projected = projected[None, :]
    if projected.ndim != 2 or projected.shape[1] != QUERY_WIDTH:
        raise ShapeMismatch(f"projected tokens must be N x {QUERY_WIDTH}, got {projected.shape}")
    w = _check_weights(weights, projected.shape[0], "token weights")
    out = np.zeros(QUERY_WIDTH, dtype=np.float64)
    for wi, tok in zip(w, projected):  # fixed order: fusion is sequential by contract
        out += wi * tok
    return out


def decode_reference(q: np.ndarray, f_l: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Reference decoder: sigmoid of the scaled inner product between the
    query and each spatial feature column, bilinearly upsampled.

    Output is clipped into [0, 1] to absorb interpolation roundoff.
    """
    q = _finite(q, "query")
    if q.shape != (QUERY_WIDTH,):
        raise ShapeMismatch(f"query must have width {QUERY_WIDTH}, got {q.shape}")
    f = _finite(f_l, "feature level")
    if f.ndim != 3 or f.shape[0] != QUERY_WIDTH:
        raise ShapeMismatch(f"feature level must be {QUERY_WIDTH} x h x w, got {f.shape}")
    logits = np.einsum("c,chw->hw", q, f) / math.sqrt(QUERY_WIDTH)
    level = 1.0 / (1.0 + np.exp(-logits))
    if level.shape != (out_h, out_w):
        level = resize_bilinear(level, out_h, out_w)
    return np.clip(level, 0.0, 1.0)


PROJECTION_MANIFEST = "manifest.txt"
_PROJECTION_PARAMS = ("W1", "b1", "W2", "b2")


def save_projection_weights(w: ProjectionWeights, out_dir) -> None:
    """One MAGT tensor per parameter plus a manifest of names and shapes."""
    from pathlib import Path

    from .io_formats import Tensor, write_tensor

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for name in _PROJECTION_PARAMS:
        arr = getattr(w, name)
        fname = f"{name}.magt"
        write_tensor(Tensor.from_array(arr), out / fname)
        lines.append(f"{name}\t{fname}\t{'x'.join(str(d) for d in arr.shape)}")
    (out / PROJECTION_MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_projection_weights(weights_dir) -> ProjectionWeights:
    from pathlib import Path

    from .errors import ConfigError, IoFailure
    from .io_formats import read_tensor

    root = Path(weights_dir)
    manifest = root / PROJECTION_MANIFEST
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
        entries[name] = (fname, tuple(int(d) for d in dims.split("x")))
    missing = set(_PROJECTION_PARAMS) - set(entries)
    if missing:
        raise ConfigError(f"projection manifest missing parameters: {sorted(missing)}")
    params = {}
    for name in _PROJECTION_PARAMS:
        fname, declared = entries[name]
        t = read_tensor(root / fname)
        if t.shape != declared:
            raise ShapeMismatch(f"{fname}: manifest declares {declared}, file has {t.shape}")
        params[name] = t.data
    return ProjectionWeights(**params)


def fuse_masks(levels, weights, threshold: float = 0.5) -> FusedMask:
    """Blend per-scale masks (all in [0,1], same shape) by convex weights."""
    arrays = [np.asarray(m, dtype=np.float64) for m in levels]
    if not arrays:
        raise WeightCountMismatch("no mask levels given")
    shape = arrays[0].shape
    for i, m in enumerate(arrays):
        if m.shape != shape:
            raise SizeMismatch(f"mask level {i} has shape {m.shape}, expected {shape}")
        if not np.all(np.isfinite(m)):
            raise NonFiniteWeight(f"mask level {i} contains NaN or Inf")
        if m.min() < 0.0 or m.max() > 1.0:
            raise ShapeMismatch(f"mask level {i} values must lie in [0, 1]")
    w = _check_weights(weights, len(arrays), "level weights", nonnegative=True)
    out = np.zeros(shape, dtype=np.float64)
    for wi, m in zip(w, arrays):
        out += wi * m
    return FusedMask(values=np.clip(out, 0.0, 1.0), threshold=threshold)
