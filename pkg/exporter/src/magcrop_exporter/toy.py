"""A small deterministic vision-language model used as the test fixture.

Two pre-norm transformer layers over a sequence of [image tokens; text
tokens], with every attention-probability tensor kept so gradients can
be taken with respect to it. All weights are drawn from a seeded
generator; tokenization hashes words with crc32, so the same inputs
always produce the same outputs on any platform.
"""

from __future__ import annotations

import math
import zlib

import torch
import torch.nn.functional as F
from torch import nn

PATCH_GRID = 8
D_MODEL = 64
N_HEADS = 4
N_LAYERS = 2
VOCAB = 257
MAX_TEXT = 32


def hash_tokenize(text: str, vocab: int = VOCAB, max_len: int = MAX_TEXT) -> list[int]:
    """Stable word-level hashing; id 0 is reserved for begin-of-text."""
    words = text.lower().split()[: max_len - 1]
    return [0] + [zlib.crc32(w.encode("utf-8")) % (vocab - 1) + 1 for w in words]


class _Attention(nn.Module):
    def __init__(self, d_model, n_heads):
        super().__init__()
        self.n_heads = n_heads
        self.dk = d_model // n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)

    def forward(self, x):
        s, d = x.shape
        q, k, v = self.qkv(x).split(d, dim=1)
        q = q.view(s, self.n_heads, self.dk).transpose(0, 1)
        k = k.view(s, self.n_heads, self.dk).transpose(0, 1)
        v = v.view(s, self.n_heads, self.dk).transpose(0, 1)
        probs = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(self.dk), dim=-1)
        probs.retain_grad()
        mixed = (probs @ v).transpose(0, 1).reshape(s, d)
        return self.out(mixed), probs


class _Block(nn.Module):
    def __init__(self, d_model, n_heads):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.attn = _Attention(d_model, n_heads)
        self.ln2 = nn.LayerNorm(d_model)
        self.mlp = nn.Sequential(
            nn.Linear(d_model, 2 * d_model), nn.GELU(), nn.Linear(2 * d_model, d_model)
        )

    def forward(self, x):
        attended, probs = self.attn(self.ln1(x))
        x = x + attended
        x = x + self.mlp(self.ln2(x))
        return x, probs


class ToyVLM(nn.Module):
    """Image cells + hashed text tokens -> next-token logits, with
    per-layer attention probabilities exposed for gradient extraction."""

    def __init__(self, seed: int = 0):
        super().__init__()
        self.seed = seed
        self.patch_grid = PATCH_GRID
        self.pixel_proj = nn.Linear(1, D_MODEL)
        self.image_pos = nn.Parameter(torch.empty(PATCH_GRID * PATCH_GRID, D_MODEL))
        self.token_emb = nn.Embedding(VOCAB, D_MODEL)
        self.text_pos = nn.Parameter(torch.empty(MAX_TEXT, D_MODEL))
        self.blocks = nn.ModuleList(_Block(D_MODEL, N_HEADS) for _ in range(N_LAYERS))
        self.ln_f = nn.LayerNorm(D_MODEL)
        self.head = nn.Linear(D_MODEL, VOCAB)
        self._init_weights(seed)
        self.eval()

    def _init_weights(self, seed):
        g = torch.Generator().manual_seed(seed)
        for p in self.parameters():
            with torch.no_grad():
                if p.dim() >= 2:
                    p.normal_(0.0, 1.0 / math.sqrt(p.shape[-1]), generator=g)
                else:
                    p.normal_(0.0, 0.02, generator=g)

    @property
    def model_id(self) -> str:
        return f"toy:{self.seed}"

    @property
    def n_layers(self) -> int:
        return N_LAYERS

    def image_tokens(self, image: torch.Tensor) -> torch.Tensor:
        """Pool the grayscale image onto the patch grid and embed each cell."""
        cells = F.adaptive_avg_pool2d(image[None, None], (self.patch_grid, self.patch_grid))
        cells = cells.reshape(-1, 1)
        return self.pixel_proj(cells) + self.image_pos

    def forward(self, image: torch.Tensor, token_ids: list[int]):
        """Returns (logits, per-layer attention probs, image token count)."""
        tokens = torch.tensor(token_ids, dtype=torch.long)
        text = self.token_emb(tokens) + self.text_pos[: len(token_ids)]
        x = torch.cat([self.image_tokens(image), text], dim=0)
        attentions = []
        for block in self.blocks:
            x, probs = block(x)
            attentions.append(probs)
        logits = self.head(self.ln_f(x))
        return logits, attentions, self.patch_grid * self.patch_grid


class ToyTextEncoder:
    """Deterministic pooled word-hash embeddings standing in for a real
    text encoder; always eval-mode, so repeated queries match exactly."""

    def __init__(self, width: int = 768, seed: int = 0):
        self.width = width
        g = torch.Generator().manual_seed(seed + 7)
        self.table = torch.randn(VOCAB, width, generator=g) / math.sqrt(width)

    def encode(self, query: str) -> torch.Tensor:
        ids = hash_tokenize(query)
        return self.table[torch.tensor(ids, dtype=torch.long)].mean(dim=0)
