"""Deterministic synthetic scenes with known answers.

Scenes plant rectangles or elliptical blobs into a textured background
and expose exactly what the pipeline needs to be tested end to end
without any model: per-target ground-truth masks, attention slabs whose
heatmap peaks on the target, and feature pyramids from which the
reference decoder recovers the planted mask.

Everything is a pure function of (spec, arguments); randomness comes
only from Philox streams keyed by the spec seed, so two calls with the
same spec are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .crop import CropBox
from .errors import BadGrid, ConfigError, ShapeMismatch, TargetOutOfBounds
from .heatmap import AttentionSlab
from .io_formats import ImagePlane
from .resample import quantize_u8, resize_area

# Planted features are scaled so the decoder logit is +/- this on/off target.
_SIGNAL_LOGIT = 8.0

_BG_LEVEL = 96.0
_BG_AMPLITUDE = 16.0

# Philox substreams per purpose, derived from the scene seed.
_STREAM_BACKGROUND = 0
_STREAM_FEATURES = 1
_STREAM_QUERY = 2


@dataclass(frozen=True)
class Target:
    """A planted rectangle or elliptical blob, centered at (cx, cy)."""

    cx: int
    cy: int
    width: int
    height: int
    intensity: float = 0.9
    kind: str = "rect"

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise TargetOutOfBounds("target size must be positive")
        if not 0 < self.intensity <= 1:
            raise TargetOutOfBounds("target intensity must lie in (0, 1]")
        if self.kind not in ("rect", "blob"):
            raise TargetOutOfBounds(f"unknown target kind {self.kind!r}")

    @property
    def x0(self) -> int:
        return self.cx - self.width // 2

    @property
    def y0(self) -> int:
        return self.cy - self.height // 2

    @property
    def x1(self) -> int:
        return self.x0 + self.width

    @property
    def y1(self) -> int:
        return self.y0 + self.height


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    targets: tuple[Target, ...] = ()
    noise_floor: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise TargetOutOfBounds("scene dimensions must be positive")
        if not 0.0 <= self.noise_floor <= 0.1:
            raise TargetOutOfBounds("noise_floor must lie in [0, 0.1]")
        targets = tuple(self.targets)
        for t in targets:
            if t.x0 < 0 or t.y0 < 0 or t.x1 > self.width or t.y1 > self.height:
                raise TargetOutOfBounds(
                    f"target at ({t.cx},{t.cy}) size {t.width}x{t.height} "
                    f"exceeds the {self.width}x{self.height} scene"
                )
        object.__setattr__(self, "targets", targets)


def _rng(spec: SceneSpec, stream: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=spec.seed, spawn_key=(stream,))
    return np.random.Generator(np.random.Philox(seq))


def target_mask(spec: SceneSpec, index: int) -> np.ndarray:
    """Boolean H x W mask of exactly the planted pixels of one target."""
    t = spec.targets[index]
    mask = np.zeros((spec.height, spec.width), dtype=bool)
    if t.kind == "rect":
        mask[t.y0 : t.y1, t.x0 : t.x1] = True
        return mask
    ys = np.arange(spec.height)[:, None]
    xs = np.arange(spec.width)[None, :]
    rx, ry = t.width / 2.0, t.height / 2.0
    d2 = ((xs - t.cx) / rx) ** 2 + ((ys - t.cy) / ry) ** 2
    return d2 <= 1.0


def _target_field(spec: SceneSpec, t: Target) -> np.ndarray:
    """Additive brightness contribution of one target, in [0, intensity]."""
    out = np.zeros((spec.height, spec.width), dtype=np.float64)
    if t.kind == "rect":
        out[t.y0 : t.y1, t.x0 : t.x1] = t.intensity
        return out
    ys = np.arange(spec.height)[:, None]
    xs = np.arange(spec.width)[None, :]
    rx, ry = t.width / 2.0, t.height / 2.0
    d2 = ((xs - t.cx) / rx) ** 2 + ((ys - t.cy) / ry) ** 2
    out[:] = t.intensity * np.exp(-2.0 * d2)
    return out


def render_scene(spec: SceneSpec) -> tuple[ImagePlane, list[np.ndarray]]:
    """Render the grayscale scene and the per-target ground-truth masks."""
    rng = _rng(spec, _STREAM_BACKGROUND)
    bg = _BG_LEVEL + _BG_AMPLITUDE * (2.0 * rng.random((spec.height, spec.width)) - 1.0)
    out = bg.copy()
    for t in spec.targets:
        out += 255.0 * _target_field(spec, t)
    img = ImagePlane(pixels=quantize_u8(out)[:, :, None])
    masks = [target_mask(spec, i) for i in range(len(spec.targets))]
    return img, masks


def _patch_coverage(mask: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Fraction of each token patch covered by the mask."""
    return resize_area(mask.astype(np.float64), rows, cols)


def attention_for(
    spec: SceneSpec,
    target_index: int,
    token_grid: tuple[int, int],
    text_tokens: int,
    region: CropBox | None = None,
) -> AttentionSlab:
    """Attention slab standing in for a model: each image token attends in
    proportion to its overlap with the target plus the noise floor.

    Rows are normalized so the hottest token's row sums to exactly 1 and
    gradients are all ones, so the heatmap reduces to overlap / (T * max).
    With a region, patches tile that crop instead of the full scene.
    """
    rows, cols = int(token_grid[0]), int(token_grid[1])
    if rows < 1 or cols < 1 or text_tokens < 1:
        raise BadGrid("token grid and text token count must be positive")
    if region is None:
        if spec.height % rows or spec.width % cols:
            raise BadGrid(
                f"{rows}x{cols} token grid does not divide the {spec.width}x{spec.height} scene"
            )
        window = (slice(0, spec.height), slice(0, spec.width))
    else:
        if region.x1 > spec.width or region.y1 > spec.height:
            raise BadGrid("region exceeds the scene")
        if region.height < rows or region.width < cols:
            raise BadGrid(f"region {region.width}x{region.height} smaller than the token grid")
        window = (slice(region.y0, region.y1), slice(region.x0, region.x1))

    if spec.targets:
        mask = target_mask(spec, target_index)[window]
        coverage = _patch_coverage(mask, rows, cols).reshape(-1)
    else:
        coverage = np.zeros(rows * cols, dtype=np.float64)
    v = coverage + spec.noise_floor
    vmax = float(v.max())
    n = rows * cols
    if vmax <= 0.0:
        attn = np.zeros((n, text_tokens), dtype=np.float64)
    else:
        attn = np.repeat((v / (text_tokens * vmax))[:, None], text_tokens, axis=1)
    grad = np.ones((n, text_tokens), dtype=np.float64)
    return AttentionSlab(attn=attn, grad=grad, grid=(rows, cols))


def planted_query(spec: SceneSpec, width: int = 256) -> np.ndarray:
    """Deterministic unit query vector associated with the scene."""
    rng = _rng(spec, _STREAM_QUERY)
    q = rng.standard_normal(width)
    return q / np.linalg.norm(q)


def features_for(spec: SceneSpec, target_index: int, q: np.ndarray, pyramid_shapes) -> list[np.ndarray]:
    """Feature maps from which the reference decoder recovers the target.

    Each level carries +/- (scaled q) on cells whose target coverage is at
    least one half, plus zero-mean noise orthogonal to q sized at
    noise_floor times the signal. Decoding with q saturates the sigmoid
    on-target; any query orthogonal to q sees only the noise.
    """
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    norm2 = float(q @ q)
    if norm2 <= 0.0 or not np.all(np.isfinite(q)):
        raise ShapeMismatch("query must be a finite nonzero vector")
    channels = q.shape[0]
    scale = _SIGNAL_LOGIT * np.sqrt(channels) / norm2
    signal = scale * q
    mask = target_mask(spec, target_index)
    rng = _rng(spec, _STREAM_FEATURES)
    levels = []
    for h_l, w_l in pyramid_shapes:
        h_l, w_l = int(h_l), int(w_l)
        if h_l < 1 or w_l < 1:
            raise ShapeMismatch("pyramid level shapes must be positive")
        coverage = resize_area(mask.astype(np.float64), h_l, w_l)
        sign = np.where(coverage >= 0.5, 1.0, -1.0)
        level = sign[None, :, :] * signal[:, None, None]
        if spec.noise_floor > 0.0:
            noise = rng.standard_normal((channels, h_l, w_l))
            qhat = q / np.sqrt(norm2)
            noise -= np.einsum("c,chw->hw", qhat, noise)[None, :, :] * qhat[:, None, None]
            norms = np.sqrt(np.einsum("chw,chw->hw", noise, noise))
            norms = np.where(norms > 0, norms, 1.0)
            target_norm = spec.noise_floor * scale * np.sqrt(norm2)
            level = level + noise * (target_norm / norms)[None, :, :]
        levels.append(level)
    return levels


def parse_scene_config(lines) -> SceneSpec:
    """Parse a scene from key=value lines; 'target =' lines repeat."""
    values = {"width": None, "height": None, "seed": 0, "noise_floor": 0.0}
    targets = []
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, _, value = text.partition("=")
        key, value = key.strip(), value.strip()
        try:
            if key in ("width", "height", "seed"):
                values[key] = int(value)
            elif key == "noise_floor":
                values[key] = float(value)
            elif key == "target":
                parts = [p.strip() for p in value.split(",")]
                if len(parts) != 6:
                    raise ValueError("need cx,cy,width,height,intensity,kind")
                targets.append(
                    Target(
                        cx=int(parts[0]),
                        cy=int(parts[1]),
                        width=int(parts[2]),
                        height=int(parts[3]),
                        intensity=float(parts[4]),
                        kind=parts[5],
                    )
                )
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from exc
    if values["width"] is None or values["height"] is None:
        raise ConfigError("scene config must set width and height")
    return SceneSpec(
        width=values["width"],
        height=values["height"],
        targets=tuple(targets),
        noise_floor=values["noise_floor"],
        seed=values["seed"],
    )
