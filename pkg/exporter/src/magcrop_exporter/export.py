"""Attention, gradient, and embedding extraction into MAGT files.

The exporter owns every model-specific choice and records each one in
the manifest: which layer was read, how heads were pooled, and which
loss the gradient was taken against. Consumers only ever see N x T
float tensors whose rows are image-token queries restricted to the
text-token keys (so each row sums to at most 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .magt import ExportError, read_magt_shape, write_magt
from .toy import ToyTextEncoder, ToyVLM, hash_tokenize

LOSS_DEFINITION = "next-token cross-entropy against the model's own greedy continuation"
HEAD_POOL = "mean"

MANIFEST_NAME = "manifest.txt"


class ModelUnsupported(ExportError):
    pass


class NoImageTokens(ExportError):
    pass


class WidthMismatch(ExportError):
    pass


@dataclass
class ExportManifest:
    model_id: str
    layer_index: int
    loss: str
    head_pool: str = HEAD_POOL
    tensors: list[tuple[str, str, tuple[int, ...]]] = field(default_factory=list)

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        lines = [
            f"model = {self.model_id}",
            f"layer = {self.layer_index}",
            f"loss = {self.loss}",
            f"head_pool = {self.head_pool}",
        ]
        for name, fname, shape in self.tensors:
            lines.append(f"tensor\t{name}\t{fname}\t{'x'.join(str(d) for d in shape)}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path


def read_manifest(out_dir) -> ExportManifest:
    """Parse and validate a manifest: declared shapes must match the files."""
    root = Path(out_dir)
    meta = {}
    tensors = []
    for line in (root / MANIFEST_NAME).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        if line.startswith("tensor\t"):
            _, name, fname, dims = line.split("\t")
            shape = tuple(int(d) for d in dims.split("x")) if dims else ()
            actual = read_magt_shape(root / fname)
            if tuple(actual) != shape:
                raise ExportError(
                    f"{fname}: manifest declares shape {shape}, file holds {tuple(actual)}"
                )
            tensors.append((name, fname, shape))
        else:
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    return ExportManifest(
        model_id=meta.get("model", "?"),
        layer_index=int(meta.get("layer", "-1")),
        loss=meta.get("loss", "?"),
        head_pool=meta.get("head_pool", HEAD_POOL),
        tensors=tensors,
    )


def load_model(model_id: str):
    """Resolve a model identifier; only the bundled toy family ships here.

    Anything else would need a wrapper exposing per-layer attention
    probabilities with gradients, which is the ToyVLM forward contract.
    """
    if model_id == "toy":
        return ToyVLM(seed=0)
    if model_id.startswith("toy:"):
        return ToyVLM(seed=int(model_id.split(":", 1)[1]))
    raise ModelUnsupported(
        f"unknown model {model_id!r}; bundled models are 'toy' or 'toy:<seed>'"
    )


def _extract(model, image: torch.Tensor, query: str, layer: int):
    token_ids = hash_tokenize(query)
    logits, attentions, n_image = model(image, token_ids)
    if not attentions:
        raise ModelUnsupported(f"{model.model_id} exposes no attention tensors")
    if n_image < 1:
        raise NoImageTokens(f"{model.model_id} produced no image tokens")
    n_layers = len(attentions)
    index = layer if layer >= 0 else n_layers + layer
    if not 0 <= index < n_layers:
        raise ModelUnsupported(f"layer {layer} out of range for {n_layers} layers")

    next_token = int(torch.argmax(logits[-1]).item())
    loss = torch.nn.functional.cross_entropy(
        logits[-1:], torch.tensor([next_token], dtype=torch.long)
    )
    loss.backward()

    probs = attentions[index]
    if probs.grad is None:
        raise ModelUnsupported(f"{model.model_id} does not permit attention gradients")
    # image-token query rows, text-token key columns, heads mean-pooled
    attn = probs.detach()[:, :n_image, n_image:].mean(dim=0)
    grad = probs.grad[:, :n_image, n_image:].mean(dim=0)
    return attn.numpy().astype(np.float64), grad.numpy().astype(np.float64), index


def reference_heatmap(attn: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """In-process reference for the gradient-weighted token scores: the
    mean over text tokens of relu(grad) * attn, on the exported tensors."""
    return (np.maximum(grad, 0.0) * attn).mean(axis=1)


def export_attention(model, image: torch.Tensor, query: str, out_dir, layer: int = -1) -> ExportManifest:
    """Write attn.magt and grad.magt (both N x T) plus the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    attn, grad, index = _extract(model, image, query, layer)
    manifest = ExportManifest(model_id=model.model_id, layer_index=index, loss=LOSS_DEFINITION)
    for name, arr in (("attn", attn), ("grad", grad)):
        shape = write_magt(arr, out / f"{name}.magt")
        manifest.tensors.append((name, f"{name}.magt", shape))
    manifest.write(out)
    return manifest


def export_embedding(text_encoder, query: str, out_path) -> None:
    """Write one pooled query embedding of width 768."""
    with torch.no_grad():
        vec = text_encoder.encode(query)
    arr = np.asarray(vec, dtype=np.float64).reshape(-1)
    if arr.shape[0] != 768:
        raise WidthMismatch(f"encoder produced width {arr.shape[0]}, need 768")
    write_magt(arr, out_path)


def load_image_gray(path) -> torch.Tensor:
    """Read a PNG as a float [H, W] tensor in [0, 1]; RGB is averaged."""
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr.mean(axis=2))
