"""Gradient-weighted attention heatmaps.

A slab carries, for every image token, its attention row over the text
tokens and the loss gradient of that row. The heatmap score of an image
token is the mean over text tokens of ReLU(grad) * attn, so only
attention that positively influences the loss contributes, and the
scores land on the token lattice as a 2D grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteElement, NotAGrid, ShapeMismatch

_ROW_SUM_TOL = 1e-4


@dataclass(frozen=True)
class AttentionSlab:
    """Per-image-token attention and gradient rows, image tokens x text tokens.

    Attention rows may be sub-normalized: extraction keeps only the text
    columns of a distribution over all keys, so each row sums to <= 1.
    """

    attn: np.ndarray
    grad: np.ndarray
    grid: tuple[int, int] | None = None

    def __post_init__(self):
        attn = np.asarray(self.attn, dtype=np.float64)
        grad = np.asarray(self.grad, dtype=np.float64)
        if attn.ndim != 2 or grad.ndim != 2:
            raise ShapeMismatch("attn and grad must be 2D (image tokens x text tokens)")
        if attn.shape != grad.shape:
            raise ShapeMismatch(f"attn shape {attn.shape} != grad shape {grad.shape}")
        if not (np.all(np.isfinite(attn)) and np.all(np.isfinite(grad))):
            raise NonFiniteElement("attention slab contains NaN or Inf")
        if np.any(attn < 0) or np.any(attn > 1):
            raise ShapeMismatch("attention entries must lie in [0, 1]")
        if np.any(attn.sum(axis=1) > 1 + _ROW_SUM_TOL):
            raise ShapeMismatch("attention rows must sum to <= 1")
        if self.grid is not None:
            rows, cols = self.grid
            if rows < 1 or cols < 1 or rows * cols != attn.shape[0]:
                raise ShapeMismatch(
                    f"grid {self.grid} does not cover {attn.shape[0]} image tokens"
                )
            object.__setattr__(self, "grid", (int(rows), int(cols)))
        object.__setattr__(self, "attn", attn)
        object.__setattr__(self, "grad", grad)

    @property
    def image_tokens(self) -> int:
        return self.attn.shape[0]

    @property
    def text_tokens(self) -> int:
        return self.attn.shape[1]


@dataclass(frozen=True)
class Heatmap:
    """Non-negative saliency scores on the token grid."""

    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 2:
            raise ShapeMismatch("heatmap scores must be 2D")
        if not np.all(np.isfinite(scores)):
            raise NonFiniteElement("heatmap contains NaN or Inf")
        if np.any(scores < 0):
            raise ShapeMismatch("heatmap scores must be non-negative")
        object.__setattr__(self, "scores", scores)

    @property
    def rows(self) -> int:
        return self.scores.shape[0]

    @property
    def cols(self) -> int:
        return self.scores.shape[1]


def _resolve_grid(n: int, grid: tuple[int, int] | None) -> tuple[int, int]:
    if grid is not None:
        rows, cols = int(grid[0]), int(grid[1])
        if rows * cols != n:
            raise ShapeMismatch(f"grid {rows}x{cols} does not cover {n} image tokens")
        return rows, cols
    side = int(np.sqrt(n))
    if side * side != n:
        raise NotAGrid(f"{n} image tokens is not a perfect square and no grid was given")
    return side, side


def compute_heatmap(slab: AttentionSlab, grid: tuple[int, int] | None = None) -> Heatmap:
    """Score each image token by mean_t(ReLU(grad) * attn), reshaped
    row-major onto the token grid.

    Non-positive gradients contribute nothing; scaling the gradients by
    c > 0 scales the heatmap by c.
    """
    scores = (np.maximum(slab.grad, 0.0) * slab.attn).mean(axis=1)
    rows, cols = _resolve_grid(slab.image_tokens, grid if grid is not None else slab.grid)
    return Heatmap(scores=scores.reshape(rows, cols))


def render_heatmap_u8(h: Heatmap) -> np.ndarray:
    """Min-max normalize to 0..255 for PNG rendering; a constant heatmap
    renders as all zeros."""
    scores = h.scores
    lo, hi = float(scores.min()), float(scores.max())
    if hi <= lo:
        return np.zeros(scores.shape, dtype=np.uint8)
    return np.clip(np.round((scores - lo) / (hi - lo) * 255.0), 0, 255).astype(np.uint8)
