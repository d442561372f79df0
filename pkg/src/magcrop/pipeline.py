"""End-to-end orchestration: classify, locate, compose, decode.

A run resolves the task granularity first, then walks the stages that
granularity needs: saliency heatmap and box selection (once for region
tasks, twice with a strictly smaller second box for pixel tasks), the
multi-fidelity composite, and finally mask fusion when decoding inputs
are available. Every intermediate lands in the output directory next to
a content-hash manifest so reruns can be compared byte for byte.
"""

from __future__ import annotations

import contextlib
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adjust import CompositePlan, adjust, sharp_area_ratio, token_count
from .crop import CropBox, GridSpec, select_box
from .errors import InputError, MagCropError, MissingInput
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
from .io_formats import ImagePlane, PipelineConfig, Tensor, write_image, write_tensor
from .synth import SceneSpec, attention_for, features_for, planted_query, render_scene

# Synthetic-mode token lattice: grid_cells * this per axis, patches tiling
# the region fractionally so any scene size works.
_SYNTH_TOKEN_FACTOR = 4
_SYNTH_TEXT_TOKENS = 4

# Pyramid level sizes as fractions of the scene, coarse to fine.
PYRAMID_FRACTIONS = (32, 16, 8)


@dataclass
class PipelineInputs:
    """Everything a run may consume; unused fields stay None."""

    image: ImagePlane | None = None
    query: str | None = None
    embedding: np.ndarray | None = None
    weights: ClassifierWeights | None = None
    slab1: AttentionSlab | None = None
    slab2: AttentionSlab | None = None
    tokens: SegTokenSet | None = None
    projection: ProjectionWeights | None = None
    features: FeaturePyramid | None = None
    scene: SceneSpec | None = None


@dataclass
class PipelineRun:
    granularity: GranularityLabel
    probabilities: np.ndarray | None
    boxes: tuple[CropBox, ...]
    adjusted: ImagePlane
    mask: FusedMask | None
    report: dict
    files: list[tuple[str, str, int]] = field(default_factory=list)


def _sha256(path: Path) -> tuple[str, int]:
    data = path.read_bytes()
    return hashlib.sha256(data).hexdigest(), len(data)


class _OutputTree:
    def __init__(self, out_dir):
        self.root = Path(out_dir) if out_dir is not None else None
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
        self.entries: list[tuple[str, str, int]] = []

    def _register(self, name: str) -> None:
        digest, size = _sha256(self.root / name)
        self.entries.append((name, digest, size))

    def text(self, name: str, content: str) -> None:
        if self.root is None:
            return
        (self.root / name).write_text(content, encoding="utf-8")
        self._register(name)

    def tensor(self, name: str, arr: np.ndarray) -> None:
        if self.root is None:
            return
        write_tensor(Tensor.from_array(arr), self.root / name)
        self._register(name)

    def image(self, name: str, img: ImagePlane) -> None:
        if self.root is None:
            return
        write_image(img, self.root / name)
        self._register(name)

    def finish(self) -> None:
        if self.root is None:
            return
        self.entries.sort()
        lines = [f"{name}\t{digest}\t{size}" for name, digest, size in self.entries]
        (self.root / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


@contextlib.contextmanager
def _stage(name: str):
    """Surface module errors with the pipeline stage that hit them."""
    try:
        yield
    except MissingInput:
        raise
    except MagCropError as exc:
        exc.args = (f"stage '{name}': {exc}",)
        raise


def _classify(inputs: PipelineInputs) -> tuple[GranularityLabel, np.ndarray | None]:
    if inputs.embedding is not None:
        if inputs.weights is None:
            raise MissingInput("granularity", "embedding given but classifier weights missing")
        label, probs = classify_embedding(QueryEmbedding(values=inputs.embedding), inputs.weights)
        return label, probs
    if inputs.query:
        return classify_keywords(inputs.query), None
    raise MissingInput("granularity", "need a query or an embedding")


def _synthetic_slab(scene: SceneSpec, cfg: PipelineConfig, region: CropBox) -> AttentionSlab:
    # token lattice capped by the region so small crops stay legal
    rows = min(_SYNTH_TOKEN_FACTOR * cfg.grid_cells, region.height)
    cols = min(_SYNTH_TOKEN_FACTOR * cfg.grid_cells, region.width)
    return attention_for(scene, 0, (rows, cols), _SYNTH_TEXT_TOKENS, region=region)


def _slice_heatmap(h: Heatmap, box: CropBox, width: int, height: int) -> Heatmap:
    """Restrict a full-image heatmap to the token rows/cols that intersect
    the box; fallback when no fresh slab exists for the second stage."""
    rows, cols = h.rows, h.cols
    r0 = max(0, box.y0 * rows // height)
    r1 = min(rows, -((-box.y1 * rows) // height))
    c0 = max(0, box.x0 * cols // width)
    c1 = min(cols, -((-box.x1 * cols) // width))
    return Heatmap(scores=h.scores[r0:r1, c0:c1].copy())


def _pyramid_shapes(width: int, height: int) -> list[tuple[int, int]]:
    shapes = []
    for frac in PYRAMID_FRACTIONS:
        shapes.append((max(1, height // frac), max(1, width // frac)))
    for (h0, w0), (h1, w1) in zip(shapes, shapes[1:]):
        if not (h1 > h0 and w1 > w0):
            raise InputError(
                f"scene {width}x{height} too small for a {len(shapes)}-level pyramid"
            )
    return shapes


def _fuse(inputs: PipelineInputs, cfg: PipelineConfig, width: int, height: int) -> FusedMask | None:
    if inputs.scene is not None:
        q = planted_query(inputs.scene)
        levels = features_for(inputs.scene, 0, q, _pyramid_shapes(width, height))
        pyramid = FeaturePyramid(levels=tuple(levels))
    elif inputs.tokens is not None or inputs.features is not None:
        if inputs.tokens is None or inputs.projection is None or inputs.features is None:
            raise MissingInput("fusion", "need tokens, projection weights, and features")
        projected = np.stack([project_token(t, inputs.projection) for t in inputs.tokens.tokens])
        q = fuse_tokens(projected, cfg.token_weights)
        pyramid = inputs.features
    else:
        return None
    masks = [decode_reference(q, level, width, height) for level in pyramid.levels]
    return fuse_masks(masks, cfg.fusion_weights)


def run_pipeline(cfg: PipelineConfig, inputs: PipelineInputs, out_dir=None) -> PipelineRun:
    """Execute the staged pipeline and write intermediates + manifest."""
    out = _OutputTree(out_dir)

    if inputs.scene is not None and inputs.image is None:
        image, scene_masks = render_scene(inputs.scene)
        out.image("scene.png", image)
        for i, m in enumerate(scene_masks):
            out.image(f"scene_mask_{i}.png", ImagePlane(pixels=(m.astype(np.uint8) * 255)[:, :, None]))
    else:
        image = inputs.image
    if image is None:
        raise MissingInput("input", "no image and no synthetic scene")

    with _stage("granularity"):
        label, probs = _classify(inputs)
    glines = [str(label)]
    if probs is not None:
        glines.append(" ".join(f"{p:.9f}" for p in probs))
    out.text("granularity.txt", "\n".join(glines) + "\n")

    width, height = image.width, image.height
    grid = GridSpec(cells_per_axis=cfg.grid_cells, scales=cfg.candidate_scales)
    boxes: tuple[CropBox, ...] = ()
    mask: FusedMask | None = None

    if label == GranularityLabel.IMAGE:
        plan = CompositePlan(granularity=label, target_size=cfg.image_level_size)
    else:
        if inputs.slab1 is not None:
            slab1 = inputs.slab1
        elif inputs.scene is not None:
            with _stage("heatmap"):
                slab1 = _synthetic_slab(inputs.scene, cfg, CropBox(x0=0, y0=0, x1=width, y1=height))
        else:
            raise MissingInput("heatmap", "need attention tensors or synthetic mode")
        with _stage("heatmap"):
            h1 = compute_heatmap(slab1)
        out.tensor("heatmap_stage1.magt", h1.scores)
        with _stage("box-selection"):
            box1 = select_box(h1, grid, width, height)
        boxes = (box1,)

        if label == GranularityLabel.REGION:
            plan = CompositePlan(granularity=label, boxes=boxes, target_size=cfg.image_level_size)
        else:
            with _stage("heatmap-refine"):
                if inputs.slab2 is not None:
                    h2 = compute_heatmap(inputs.slab2)
                elif inputs.scene is not None:
                    h2 = compute_heatmap(_synthetic_slab(inputs.scene, cfg, box1))
                else:
                    h2 = _slice_heatmap(h1, box1, width, height)
            out.tensor("heatmap_stage2.magt", h2.scores)
            with _stage("box-refine"):
                box2 = select_box(h2, grid, width, height, parent=box1)
            boxes = (box1, box2)
            plan = CompositePlan(granularity=label, boxes=boxes, target_size=cfg.image_level_size)

    with _stage("adjust"):
        adjusted = adjust(image, plan, cfg)
    out.image("adjusted.png", adjusted)
    if boxes:
        out.text(
            "boxes.txt",
            "".join(
                f"{b.stage} {b.x0} {b.y0} {b.x1} {b.y1} {b.score:.9g}\n" for b in boxes
            ),
        )

    if label == GranularityLabel.PIXEL:
        with _stage("fusion"):
            mask = _fuse(inputs, cfg, width, height)
        if mask is not None:
            bits = mask.binarize()
            out.image("mask.png", ImagePlane(pixels=(bits.astype(np.uint8) * 255)[:, :, None]))
            out.tensor("mask_prob.magt", mask.values)

    report = {
        "granularity": str(label),
        "tokens_before": token_count(width, height, cfg.patch_size),
        "tokens_after": token_count(adjusted.width, adjusted.height, cfg.patch_size),
        "sharp_area_ratio": sharp_area_ratio(plan, width, height),
    }
    out.text(
        "report.txt",
        "".join(f"{k} = {v}\n" for k, v in sorted(report.items())),
    )
    out.finish()

    return PipelineRun(
        granularity=label,
        probabilities=probs,
        boxes=boxes,
        adjusted=adjusted,
        mask=mask,
        report=report,
        files=list(out.entries),
    )
