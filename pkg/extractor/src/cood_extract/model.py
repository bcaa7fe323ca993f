"""A small deterministic vision-language encoder with gradient
activation maps.

The vision tower is a ViT-style transformer: patch embedding, a class
token, learned position embeddings, pre-norm attention/MLP blocks, and a
projection to the shared embedding space. The text tower hashes
character trigrams into a seeded embedding table and projects their mean.
Weights are initialized from a fixed seed derived from the model
identifier, so identical inputs always produce identical embeddings on
CPU; no checkpoint download is involved. Any torch module exposing the
same call surface can stand in for it.

Component-conditioned encoding prepends a mask-pooled token (and a
mask-pooled position embedding) ahead of the patch sequence, biasing
attention toward the masked region; the projected class token is the
returned embedding.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

IMAGE_SIZE = 64
PATCH_SIZE = 8
GRID = IMAGE_SIZE // PATCH_SIZE  # 8 -> 64 patches
N_PATCHES = GRID * GRID


@dataclass(frozen=True)
class EncodedImage:
    """Outputs of a full vision forward."""

    global_embedding: np.ndarray  # (D,), unit norm
    token_grid: np.ndarray  # (N, D), unit rows
    positions: np.ndarray  # (N, 2) normalized patch centers


def _seed_from_identifier(identifier: str) -> int:
    digest = hashlib.sha256(identifier.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class _Block(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.ln2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, width * 2), nn.GELU(), nn.Linear(width * 2, width)
        )

    def forward(self, x):
        normed = self.ln1(x)
        attended, _ = self.attn(normed, normed, normed, need_weights=False)
        x = x + attended
        return x + self.mlp(self.ln2(x))


class TinyVisionLanguageModel(nn.Module):
    """Deterministic encoder pair sharing one embedding space."""

    def __init__(self, identifier: str = "tiny-vl-64", width: int = 64, embed_dim: int = 64,
                 heads: int = 4, depth: int = 2):
        super().__init__()
        self.identifier = identifier
        torch.manual_seed(_seed_from_identifier(identifier))
        self.width = width
        self.embed_dim = embed_dim
        self.patch_embed = nn.Linear(3 * PATCH_SIZE * PATCH_SIZE, width)
        self.class_token = nn.Parameter(torch.randn(1, 1, width) * 0.02)
        self.pos_embed = nn.Parameter(torch.randn(1, N_PATCHES + 1, width) * 0.02)
        self.blocks = nn.ModuleList(_Block(width, heads) for _ in range(depth))
        self.ln_out = nn.LayerNorm(width)
        self.vision_proj = nn.Linear(width, embed_dim, bias=False)
        self.text_table = nn.Parameter(torch.randn(4096, width) * 0.05)
        self.text_mlp = nn.Sequential(
            nn.Linear(width, width * 2), nn.GELU(), nn.Linear(width * 2, embed_dim)
        )
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)

    # --- shared pieces -----------------------------------------------------

    @staticmethod
    def patch_positions() -> np.ndarray:
        rows = np.arange(N_PATCHES) // GRID
        cols = np.arange(N_PATCHES) % GRID
        return np.stack([(rows + 0.5) / GRID, (cols + 0.5) / GRID], axis=1)

    @staticmethod
    def _patchify(image: np.ndarray) -> torch.Tensor:
        """(H, W, 3) float image in [0, 1] -> (N, 3 * P * P) patch rows."""
        if image.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
            raise ValueError(f"expected {(IMAGE_SIZE, IMAGE_SIZE, 3)}, got {image.shape}")
        t = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))
        # (H, W, 3) -> (GRID, GRID, 3, P, P) -> (N, 3*P*P)
        t = t.unfold(0, PATCH_SIZE, PATCH_SIZE).unfold(1, PATCH_SIZE, PATCH_SIZE)
        return t.contiguous().reshape(N_PATCHES, -1)

    def _trunk(self, sequence: torch.Tensor, pos: torch.Tensor, keep_grad: bool = False):
        x = sequence + pos
        activations = None
        for i, block in enumerate(self.blocks):
            x = block(x)
            if i == len(self.blocks) - 1:
                activations = x
                if keep_grad:
                    activations.retain_grad()
        return self.ln_out(x), activations

    # --- vision ------------------------------------------------------------

    def encode_image(self, image: np.ndarray) -> EncodedImage:
        """Global embedding plus projected, normalized patch tokens."""
        with torch.no_grad():
            tokens = self.patch_embed(self._patchify(image)).unsqueeze(0)
            seq = torch.cat([self.class_token, tokens], dim=1)
            out, _ = self._trunk(seq, self.pos_embed)
            projected = self.vision_proj(out)[0]
            embedded = torch.nn.functional.normalize(projected, dim=-1)
        return EncodedImage(
            global_embedding=embedded[0].numpy().astype(np.float32),
            token_grid=embedded[1:].numpy().astype(np.float32),
            positions=self.patch_positions().astype(np.float32),
        )

    def encode_component(self, image: np.ndarray, token_mask: np.ndarray) -> np.ndarray:
        """Mask-conditioned embedding: a mask-pooled patch token and a
        mask-pooled position embedding are prepended after the class
        token; returns the projected class token, unit norm."""
        mask = torch.from_numpy(np.ascontiguousarray(token_mask, dtype=np.float32)).reshape(-1)
        if mask.numel() != N_PATCHES:
            raise ValueError(f"token mask must have {N_PATCHES} entries")
        mass = float(mask.sum())
        if mass <= 1e-12:
            raise ValueError("token mask has no mass")
        with torch.no_grad():
            tokens = self.patch_embed(self._patchify(image))
            prefix_token = (mask @ tokens / mass).reshape(1, 1, -1)
            patch_pos = self.pos_embed[:, 1:, :]
            prefix_pos = (mask @ patch_pos[0] / mass).reshape(1, 1, -1)
            seq = torch.cat([self.class_token, prefix_token, tokens.unsqueeze(0)], dim=1)
            pos = torch.cat([self.pos_embed[:, :1, :], prefix_pos, patch_pos], dim=1)
            out, _ = self._trunk(seq, pos)
            projected = self.vision_proj(out[0, 0])
            return torch.nn.functional.normalize(projected, dim=-1).numpy().astype(np.float32)

    def activation_map(self, image: np.ndarray, text_embedding: np.ndarray) -> np.ndarray:
        """Gradient activation map of the cosine to a text embedding,
        over the final block's patch activations; (GRID, GRID) in [0, 1]."""
        tokens = self.patch_embed(self._patchify(image)).unsqueeze(0)
        seq = torch.cat([self.class_token, tokens], dim=1).requires_grad_(True)
        out, activations = self._trunk(seq, self.pos_embed, keep_grad=True)
        projected = torch.nn.functional.normalize(self.vision_proj(out[0, 0]), dim=-1)
        text = torch.from_numpy(np.asarray(text_embedding, dtype=np.float32))
        score = projected @ text
        score.backward()
        grads = activations.grad[0, 1:, :]  # patch rows only
        weights = grads.mean(dim=0, keepdim=True)
        cam = torch.relu((activations.detach()[0, 1:, :] * weights).sum(dim=1))
        cam = cam.numpy().astype(np.float64).reshape(GRID, GRID)
        peak = cam.max()
        return cam / peak if peak > 0 else cam

    # --- text --------------------------------------------------------------

    @staticmethod
    def _trigram_ids(text: str) -> list[int]:
        padded = f"  {text.lower()} "
        ids = []
        for i in range(len(padded) - 2):
            tri = padded[i : i + 3].encode("utf-8")
            ids.append(int.from_bytes(hashlib.blake2s(tri, digest_size=4).digest(), "little") % 4096)
        return ids

    def encode_text(self, text: str) -> np.ndarray:
        ids = self._trigram_ids(text)
        if not ids:
            raise ValueError("cannot encode empty text")
        with torch.no_grad():
            bag = self.text_table[torch.tensor(ids, dtype=torch.long)].mean(dim=0)
            projected = self.text_mlp(bag)
            return torch.nn.functional.normalize(projected, dim=-1).numpy().astype(np.float32)


def load_model(identifier: str = "tiny-vl-64") -> TinyVisionLanguageModel:
    """Instantiate the deterministic encoder for a model identifier. The
    identifier seeds the weights; the same string always yields the same
    model."""
    return TinyVisionLanguageModel(identifier=identifier)
