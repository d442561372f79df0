"""Heatmap-driven box selection.

The heatmap is average-pooled onto a coarse cell grid; square candidate
boxes are enumerated at a few scales; each candidate is scored by how
much its attention mass stands out against same-size boxes shifted one
box width/height away in the 8 compass directions; the argmax (with a
pinned tie-break) becomes the crop box, mapped back to pixels with
edges rounded outward so the attended region is never truncated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, HeatmapTooSmall, ParentTooSmall
from .heatmap import Heatmap

_DIRECTIONS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


@dataclass(frozen=True)
class GridSpec:
    """Candidate grid geometry: cells per axis and square box scales."""

    cells_per_axis: int = 8
    scales: tuple[int, ...] = (1, 2, 3)

    def __post_init__(self):
        if self.cells_per_axis < 2:
            raise ConfigError("cells_per_axis must be >= 2")
        scales = tuple(sorted(set(int(s) for s in self.scales)))
        if not scales:
            raise ConfigError("at least one candidate scale is required")
        if scales[0] < 1:
            raise ConfigError("candidate scales must be >= 1")
        if scales[-1] > self.cells_per_axis:
            raise ConfigError(
                f"scale {scales[-1]} exceeds the {self.cells_per_axis}-cell grid"
            )
        object.__setattr__(self, "scales", scales)


@dataclass(frozen=True)
class CellBox:
    """Square candidate in cell coordinates; top-left anchored."""

    row: int
    col: int
    scale: int


@dataclass(frozen=True)
class CropBox:
    """Half-open pixel rectangle with crop-stage provenance."""

    x0: int
    y0: int
    x1: int
    y1: int
    stage: int = 1
    score: float = 0.0

    def __post_init__(self):
        if not (0 <= self.x0 < self.x1 and 0 <= self.y0 < self.y1):
            raise ConfigError(f"degenerate box ({self.x0},{self.y0},{self.x1},{self.y1})")
        if self.stage not in (1, 2):
            raise ConfigError(f"stage must be 1 or 2, got {self.stage}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    def contains(self, other: "CropBox") -> bool:
        return (
            self.x0 <= other.x0
            and self.y0 <= other.y0
            and other.x1 <= self.x1
            and other.y1 <= self.y1
        )


def pool_to_grid(h: Heatmap, cells: int) -> np.ndarray:
    """Average-pool the heatmap onto a cells x cells grid.

    Chunk boundaries are floor(i * extent / cells), so every cell averages
    at least one source element; the heatmap must be at least cells wide
    and tall.
    """
    scores = h.scores
    rows, cols = scores.shape
    if rows < cells or cols < cells:
        raise HeatmapTooSmall(f"heatmap {rows}x{cols} cannot be pooled onto {cells} cells")
    if rows == cells and cols == cells:
        return scores.astype(np.float64, copy=True)
    if rows % cells == 0 and cols % cells == 0:
        br, bc = rows // cells, cols // cells
        return scores.reshape(cells, br, cells, bc).mean(axis=(1, 3))
    out = np.empty((cells, cells), dtype=np.float64)
    rb = [i * rows // cells for i in range(cells + 1)]
    cb = [j * cols // cells for j in range(cells + 1)]
    for i in range(cells):
        for j in range(cells):
            out[i, j] = scores[rb[i] : rb[i + 1], cb[j] : cb[j + 1]].mean()
    return out


def generate_candidates(h: Heatmap, g: GridSpec) -> list[CellBox]:
    """Enumerate every in-grid candidate, ordered scale asc, row asc, col asc."""
    pool_to_grid(h, g.cells_per_axis)  # validates size
    return enumerate_cells(g)


def enumerate_cells(g: GridSpec) -> list[CellBox]:
    n = g.cells_per_axis
    return [
        CellBox(row=r, col=c, scale=s)
        for s in g.scales
        for r in range(n - s + 1)
        for c in range(n - s + 1)
    ]


def score_candidate(h_cells: np.ndarray, box: CellBox) -> float:
    """Attention mass inside the box minus the mean mass of the (up to 8)
    same-size boxes one box extent away; off-grid translations are skipped.

    Evaluated as -mean(neighbor - box) so that a grid of identical values
    scores exactly 0.0 regardless of the value.
    """
    n_rows, n_cols = h_cells.shape
    r, c, s = box.row, box.col, box.scale
    box_sum = float(np.sum(h_cells[r : r + s, c : c + s]))
    diffs = []
    for dr, dc in _DIRECTIONS:
        nr, nc = r + dr * s, c + dc * s
        if 0 <= nr and nr + s <= n_rows and 0 <= nc and nc + s <= n_cols:
            diffs.append(float(np.sum(h_cells[nr : nr + s, nc : nc + s])) - box_sum)
    if not diffs:
        return box_sum
    acc = 0.0
    for d in diffs:
        acc += d
    return -(acc / len(diffs)) + 0.0


def _argmax_candidate(h_cells: np.ndarray, candidates) -> tuple[CellBox, float]:
    # enumeration order (scale asc, row asc, col asc) + first strict max
    # implements the (smaller area, top-most, left-most) tie-break
    best, best_score = None, -np.inf
    for box in candidates:
        score = score_candidate(h_cells, box)
        if score > best_score:
            best, best_score = box, score
    return best, best_score


def _cells_to_pixels(box: CellBox, cells: int, width: int, height: int) -> tuple[int, int, int, int]:
    # integer arithmetic, edges rounded outward
    x0 = box.col * width // cells
    y0 = box.row * height // cells
    x1 = -((box.col + box.scale) * -width // cells)
    y1 = -((box.row + box.scale) * -height // cells)
    return x0, y0, x1, y1


def select_box(
    h: Heatmap,
    g: GridSpec,
    image_w: int,
    image_h: int,
    parent: CropBox | None = None,
) -> CropBox:
    """Pick the stand-out candidate and map it to pixel space.

    Without a parent the heatmap covers the full image. With a parent it
    covers the parent crop; scales are capped strictly below the grid
    extent so the child is strictly smaller, and coordinates come back
    absolute in the original image.
    """
    if parent is None:
        grid = g
        region_w, region_h, off_x, off_y = image_w, image_h, 0, 0
    else:
        if not (0 <= parent.x0 and parent.x1 <= image_w and 0 <= parent.y0 and parent.y1 <= image_h):
            raise ParentTooSmall(f"parent box exceeds the {image_w}x{image_h} image")
        admissible = tuple(s for s in g.scales if s < g.cells_per_axis)
        if not admissible:
            raise ParentTooSmall("no candidate scale is smaller than the parent extent")
        grid = GridSpec(cells_per_axis=g.cells_per_axis, scales=admissible)
        region_w, region_h = parent.width, parent.height
        off_x, off_y = parent.x0, parent.y0

    h_cells = pool_to_grid(h, grid.cells_per_axis)
    best, best_score = _argmax_candidate(h_cells, enumerate_cells(grid))
    x0, y0, x1, y1 = _cells_to_pixels(best, grid.cells_per_axis, region_w, region_h)
    box = CropBox(
        x0=off_x + x0,
        y0=off_y + y0,
        x1=off_x + x1,
        y1=off_y + y1,
        stage=1 if parent is None else 2,
        score=best_score,
    )
    if parent is not None:
        if box.area >= parent.area:
            raise ParentTooSmall(
                f"child box area {box.area} is not below parent area {parent.area}"
            )
    return box
