"""Dense-tensor and raster I/O plus run configuration.

The tensor wire format ("MAGT") is the bridge between any external model
and this pipeline: little-endian, float32-only, header + payload.

Layout:
    bytes 0..3   magic b"MAGT"
    byte  4      format version (currently 1)
    byte  5      dtype code (1 = float32)
    bytes 6..13  rank, u64 LE
    then         rank dims, u64 LE each
    then         row-major payload, f32 LE

Images are 8-bit grayscale or RGB PNG only; the codec is lossless so
crop/stitch bit-exactness stays testable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    BadMagic,
    ConfigError,
    CorruptFile,
    IoFailure,
    NonFiniteElement,
    ShapeOverflow,
    UnsupportedDtype,
    UnsupportedFormat,
)

MAGIC = b"MAGT"
VERSION = 1
DTYPE_F32 = 1

_MAX_RANK = 32
_MAX_ELEMENTS = 1 << 48


@dataclass(frozen=True)
class Tensor:
    """A shaped float32 buffer. Scalars have shape ()."""

    shape: tuple[int, ...]
    data: np.ndarray
    dtype: str = "f32"

    def __post_init__(self):
        shape = tuple(int(d) for d in self.shape)
        object.__setattr__(self, "shape", shape)
        if self.dtype != "f32":
            raise UnsupportedDtype(f"dtype {self.dtype!r} not supported")
        if len(shape) > _MAX_RANK:
            raise ShapeOverflow(f"rank {len(shape)} exceeds {_MAX_RANK}")
        if any(d <= 0 for d in shape):
            raise ShapeOverflow(f"non-positive dimension in shape {shape}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if count > _MAX_ELEMENTS:
            raise ShapeOverflow(f"{count} elements exceed the format limit")
        data = np.asarray(self.data, dtype=np.float32).reshape(shape)
        if not np.all(np.isfinite(data)):
            raise NonFiniteElement("tensor contains NaN or Inf")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, arr) -> "Tensor":
        arr = np.asarray(arr, dtype=np.float32)
        return cls(shape=tuple(arr.shape), data=arr)


def write_tensor(t: Tensor, path) -> None:
    """Serialize a tensor; bit-exact round-trip with read_tensor."""
    header = MAGIC + struct.pack("<BBQ", VERSION, DTYPE_F32, len(t.shape))
    header += b"".join(struct.pack("<Q", d) for d in t.shape)
    payload = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
    try:
        Path(path).write_bytes(header + payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_tensor(path) -> Tensor:
    """Load a tensor, validating magic, dtype, shape, and finiteness."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(raw) < 14 or raw[:4] != MAGIC:
        raise BadMagic(f"{path}: not a MAGT tensor file")
    version, dtype_code, rank = struct.unpack("<BBQ", raw[4:14])
    if version != VERSION:
        raise BadMagic(f"{path}: unsupported format version {version}")
    if dtype_code != DTYPE_F32:
        raise UnsupportedDtype(f"{path}: dtype code {dtype_code}")
    if rank > _MAX_RANK:
        raise ShapeOverflow(f"{path}: rank {rank} exceeds {_MAX_RANK}")
    dims_end = 14 + 8 * rank
    if len(raw) < dims_end:
        raise ShapeOverflow(f"{path}: truncated header")
    shape = struct.unpack(f"<{rank}Q", raw[14:dims_end]) if rank else ()
    if any(d == 0 for d in shape):
        raise ShapeOverflow(f"{path}: zero dimension in shape {shape}")
    count = 1
    for d in shape:
        count *= d
        if count > _MAX_ELEMENTS:
            raise ShapeOverflow(f"{path}: shape {shape} overflows the format limit")
    if len(raw) - dims_end != 4 * count:
        raise ShapeOverflow(
            f"{path}: shape {shape} implies {4 * count} payload bytes, " f"found {len(raw) - dims_end}"
        )
    data = np.frombuffer(raw[dims_end:], dtype="<f4").reshape(shape)
    if not np.all(np.isfinite(data)):
        raise NonFiniteElement(f"{path}: payload contains NaN or Inf")
    return Tensor(shape=tuple(int(d) for d in shape), data=data.copy())


@dataclass(frozen=True)
class ImagePlane:
    """8-bit raster, row-major, 1 (gray) or 3 (RGB) channels.

    pixels has shape (height, width, channels), dtype uint8.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.dtype != np.uint8:
            raise UnsupportedFormat(f"pixel dtype {px.dtype} is not uint8")
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise UnsupportedFormat(f"pixel buffer shape {px.shape} is not HxWx{{1,3}}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise UnsupportedFormat("image dimensions must be positive")
        object.__setattr__(self, "pixels", np.ascontiguousarray(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


def read_image(path) -> ImagePlane:
    """Load an 8-bit gray or RGB PNG losslessly."""
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise UnsupportedFormat(f"{path}: only PNG input is supported, got {im.format}")
            if im.mode not in ("L", "RGB"):
                raise UnsupportedFormat(f"{path}: mode {im.mode} is not 8-bit gray or RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise CorruptFile(f"{path}: cannot decode image") from exc
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return ImagePlane(pixels=arr)


def write_image(img: ImagePlane, path) -> None:
    px = img.pixels
    mode = "L" if img.channels == 1 else "RGB"
    pil = Image.fromarray(px[:, :, 0] if mode == "L" else px, mode=mode)
    try:
        pil.save(path, format="PNG")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


_WEIGHT_SUM_TOL = 1e-6


@dataclass(frozen=True)
class PipelineConfig:
    """Run configuration shared across the pipeline stages.

    fusion_weights weigh the per-scale masks, token_weights the
    segmentation tokens; both must sum to 1.
    """

    patch_size: int = 14
    grid_cells: int = 8
    candidate_scales: tuple[int, ...] = (1, 2, 3)
    compression_factor: int = 4
    image_level_size: int = 100
    fusion_weights: tuple[float, ...] = (1 / 3, 1 / 3, 1 / 3)
    token_weights: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if self.patch_size < 1:
            raise ConfigError("patch_size must be >= 1")
        if self.grid_cells < 2:
            raise ConfigError("grid_cells must be >= 2")
        if self.compression_factor < 2:
            raise ConfigError("compression_factor must be >= 2")
        if self.image_level_size < 1:
            raise ConfigError("image_level_size must be >= 1")
        if not self.candidate_scales:
            raise ConfigError("candidate_scales must not be empty")
        if any(s < 1 for s in self.candidate_scales):
            raise ConfigError("candidate scales must be >= 1")
        if any(s > self.grid_cells for s in self.candidate_scales):
            raise ConfigError("candidate scales must not exceed grid_cells")
        for name, weights in (("fusion_weights", self.fusion_weights), ("token_weights", self.token_weights)):
            if not weights:
                raise ConfigError(f"{name} must not be empty")
            if abs(sum(weights) - 1.0) > _WEIGHT_SUM_TOL:
                raise ConfigError(f"{name} must sum to 1 within {_WEIGHT_SUM_TOL}")


_INT_KEYS = {"patch_size", "grid_cells", "compression_factor", "image_level_size"}
_INT_TUPLE_KEYS = {"candidate_scales"}
_FLOAT_TUPLE_KEYS = {"fusion_weights", "token_weights"}


def parse_config_lines(lines, base: PipelineConfig | None = None) -> PipelineConfig:
    """Parse UTF-8 key=value lines with '#' comments into a config."""
    values = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"line {lineno}: expected key=value, got {line.strip()!r}")
        key, _, value = text.partition("=")
        key, value = key.strip(), value.strip()
        try:
            if key in _INT_KEYS:
                values[key] = int(value)
            elif key in _INT_TUPLE_KEYS:
                values[key] = tuple(int(v.strip()) for v in value.split(",") if v.strip())
            elif key in _FLOAT_TUPLE_KEYS:
                values[key] = tuple(float(v.strip()) for v in value.split(",") if v.strip())
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    merged = {**(base.__dict__ if base else {}), **values}
    return PipelineConfig(**merged)


def load_config(path, base: PipelineConfig | None = None) -> PipelineConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return parse_config_lines(text.splitlines(), base=base)
