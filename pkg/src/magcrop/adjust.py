"""Granularity-conditioned image composition.

The compression operator blurs by resampling down by an integer factor
(area averaging) and back up (bilinear), keeping dimensions. Stitching
pastes a sharp crop back at its source coordinates over such a blurred
base. The composite per granularity:

    image level:  plain resize to a small square
    region level: one sharp box over a compressed background
    pixel level:  sharp innermost box, once-compressed ring from the
                  outer box, twice-compressed background

Token accounting quantifies why the small square is cheaper for a
patch-tokenizing encoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .crop import CropBox
from .errors import BoxOutOfBounds, ImageTooSmall, PlanMismatch, SizeMismatch
from .granularity import GranularityLabel
from .io_formats import ImagePlane, PipelineConfig
from .resample import quantize_u8, resize_area, resize_bilinear


@dataclass(frozen=True)
class CompositePlan:
    """What to compose: the granularity plus its crop boxes.

    Image takes no boxes, Region exactly one, Pixel two with the second
    contained in the first and strictly smaller.
    """

    granularity: GranularityLabel
    boxes: tuple[CropBox, ...] = ()
    target_size: int = 100

    def __post_init__(self):
        n = len(self.boxes)
        g = self.granularity
        if g == GranularityLabel.IMAGE and n != 0:
            raise PlanMismatch("image-level plan takes no boxes")
        if g == GranularityLabel.REGION and n != 1:
            raise PlanMismatch("region-level plan takes exactly one box")
        if g == GranularityLabel.PIXEL:
            if n != 2:
                raise PlanMismatch("pixel-level plan takes exactly two boxes")
            outer, inner = self.boxes
            if not outer.contains(inner):
                raise PlanMismatch("second box must lie inside the first")
            if inner.area >= outer.area:
                raise PlanMismatch("second box must be strictly smaller than the first")
        if self.target_size < 1:
            raise PlanMismatch("target_size must be positive")


def _check_box(img: ImagePlane, box: CropBox) -> None:
    if box.x1 > img.width or box.y1 > img.height:
        raise BoxOutOfBounds(
            f"box ({box.x0},{box.y0},{box.x1},{box.y1}) exceeds {img.width}x{img.height}"
        )


def crop_image(img: ImagePlane, box: CropBox) -> ImagePlane:
    """Extract the half-open box region, bit-exact."""
    _check_box(img, box)
    return ImagePlane(pixels=img.pixels[box.y0 : box.y1, box.x0 : box.x1].copy())


def compress(img: ImagePlane, factor: int) -> ImagePlane:
    """Drop high-frequency detail: area-average down by the factor
    (floored, minimum 1 per axis) then bilinear back up to the original
    size. Dimensions are unchanged; constants pass through untouched."""
    if factor < 2:
        raise ImageTooSmall(f"compression factor must be >= 2, got {factor}")
    h, w = img.height, img.width
    if h < factor or w < factor:
        raise ImageTooSmall(f"{w}x{h} image is smaller than the {factor}x{factor} factor")
    small_h = max(1, h // factor)
    small_w = max(1, w // factor)
    small = resize_area(img.pixels.astype(float), small_h, small_w)
    back = resize_bilinear(small, h, w)
    return ImagePlane(pixels=quantize_u8(back))


def stitch(base: ImagePlane, patch: ImagePlane, at: CropBox) -> ImagePlane:
    """Paste the patch over the box region of base, bit-exact; every pixel
    outside the box is untouched."""
    if base.channels != patch.channels:
        raise SizeMismatch(f"channel mismatch: base {base.channels}, patch {patch.channels}")
    _check_box(base, at)
    if (patch.height, patch.width) != (at.height, at.width):
        raise SizeMismatch(
            f"patch {patch.width}x{patch.height} does not fill box {at.width}x{at.height}"
        )
    out = base.pixels.copy()
    out[at.y0 : at.y1, at.x0 : at.x1] = patch.pixels
    return ImagePlane(pixels=out)


def adjust(img: ImagePlane, plan: CompositePlan, cfg: PipelineConfig) -> ImagePlane:
    """Build the granularity-conditioned composite.

    Region and Pixel keep the input dimensions; Image resizes to the
    target square (aspect ratio intentionally dropped). Inside the
    innermost box the output is bit-exact with the input.
    """
    g = plan.granularity
    if g == GranularityLabel.IMAGE:
        resized = resize_bilinear(img.pixels.astype(float), plan.target_size, plan.target_size)
        return ImagePlane(pixels=quantize_u8(resized))
    factor = cfg.compression_factor
    if g == GranularityLabel.REGION:
        (box,) = plan.boxes
        _check_box(img, box)
        return stitch(compress(img, factor), crop_image(img, box), box)
    outer, inner = plan.boxes
    _check_box(img, outer)
    base = compress(compress(img, factor), factor)
    mid = stitch(base, compress(crop_image(img, outer), factor), outer)
    return stitch(mid, crop_image(img, inner), inner)


def token_count(width: int, height: int, patch: int) -> int:
    """Visual tokens a patch-tokenizing encoder spends on width x height."""
    if patch < 1:
        raise SizeMismatch("patch size must be >= 1")
    return math.ceil(height / patch) * math.ceil(width / patch)


def sharp_area_ratio(plan: CompositePlan, width: int, height: int) -> float:
    """Fraction of the output carrying full-fidelity content."""
    total = width * height
    g = plan.granularity
    if g == GranularityLabel.IMAGE:
        return min(1.0, plan.target_size * plan.target_size / total)
    if g == GranularityLabel.REGION:
        return plan.boxes[0].area / total
    return plan.boxes[1].area / total
