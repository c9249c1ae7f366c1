"""Vision and text encoders (desk-scale), shared by the alignment
pretraining stage and the segmenter.

Vision trunks expose multi-stage feature maps so the segmentation decoders
can tap intermediate resolutions; the pretraining wrapper pools the last
stage and projects to the joint embedding dimension.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import DataError
from .recipes import Recipe

VISION_KINDS = ("convolutional", "transformer")
TEXT_KINDS = ("recurrent", "transformer")


def seed_all(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % (2**32))


def param_checksum(module: nn.Module) -> str:
    """SHA-256 over the raw bytes of all parameters, in name order."""
    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def state_to_numpy(module: nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    return {
        prefix + k: v.detach().cpu().contiguous().numpy()
        for k, v in module.state_dict().items()
    }


def load_numpy_state(module: nn.Module, tensors: dict[str, np.ndarray], prefix: str = "") -> None:
    state = {}
    for k, v in module.state_dict().items():
        key = prefix + k
        if key not in tensors:
            raise DataError(f"archive missing tensor {key!r}")
        arr = tensors[key]
        if tuple(arr.shape) != tuple(v.shape):
            raise DataError(f"tensor {key!r} shape {arr.shape} != expected {tuple(v.shape)}")
        state[k] = torch.from_numpy(arr.copy()).to(v.dtype)
    module.load_state_dict(state)


class ConvEncoder(nn.Module):
    """Small 4-stage convolutional trunk; stage s outputs at 1/2^(s+1) scale."""

    kind = "convolutional"

    def __init__(self, in_channels: int = 3, widths: tuple[int, ...] = (16, 32, 64, 96)):
        super().__init__()
        self.widths = tuple(widths)
        stages = []
        prev = in_channels
        for w in self.widths:
            stages.append(
                nn.Sequential(
                    nn.Conv2d(prev, w, 3, stride=2, padding=1),
                    nn.ReLU(inplace=True),
                    nn.Conv2d(w, w, 3, padding=1),
                    nn.ReLU(inplace=True),
                )
            )
            prev = w
        self.stages = nn.ModuleList(stages)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
                nn.init.zeros_(m.bias)

    @property
    def out_channels(self) -> int:
        return self.widths[-1]

    def descriptor(self) -> dict:
        return {"kind": self.kind, "widths": list(self.widths)}

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class ViTEncoder(nn.Module):
    """Tiny vision transformer: patch embedding, learned positions, and a
    2-layer / 4-head encoder. Emits a single token-grid feature map."""

    kind = "transformer"

    def __init__(
        self,
        image_size: int = 32,
        patch_size: int = 4,
        dim: int = 64,
        num_layers: int = 2,
        num_heads: int = 4,
    ):
        super().__init__()
        if image_size % patch_size != 0:
            raise DataError(f"image size {image_size} not divisible by patch size {patch_size}")
        self.image_size = image_size
        self.patch_size = patch_size
        self.dim = dim
        self.grid = image_size // patch_size
        self.patch_embed = nn.Conv2d(3, dim, kernel_size=patch_size, stride=patch_size)
        self.pos_embed = nn.Parameter(torch.zeros(1, self.grid * self.grid, dim))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        layer = nn.TransformerEncoderLayer(
            d_model=dim,
            nhead=num_heads,
            dim_feedforward=2 * dim,
            dropout=0.0,
            batch_first=True,
        )
        self.blocks = nn.TransformerEncoder(layer, num_layers=num_layers)

    @property
    def out_channels(self) -> int:
        return self.dim

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "image_size": self.image_size,
            "patch_size": self.patch_size,
            "dim": self.dim,
        }

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        if x.shape[-2:] != (self.image_size, self.image_size):
            raise DataError(
                f"expected {self.image_size}x{self.image_size} input, got {tuple(x.shape[-2:])}"
            )
        tok = self.patch_embed(x)  # B, dim, g, g
        b, d, g, _ = tok.shape
        tok = tok.flatten(2).transpose(1, 2) + self.pos_embed
        tok = self.blocks(tok)
        grid = tok.transpose(1, 2).reshape(b, d, g, g)
        return [grid]


def build_vision_trunk(kind: str, image_size: int = 32, **kwargs) -> nn.Module:
    if kind == "convolutional":
        return ConvEncoder(**kwargs)
    if kind == "transformer":
        return ViTEncoder(image_size=image_size, **kwargs)
    raise DataError(f"unknown vision encoder kind {kind!r}")


class VisionEmbedder(nn.Module):
    """Trunk + global average pool + linear projection to the joint space."""

    def __init__(self, trunk: nn.Module, embed_dim: int = 64):
        super().__init__()
        self.trunk = trunk
        self.embed_dim = embed_dim
        self.norm = nn.LayerNorm(trunk.out_channels)
        self.proj = nn.Linear(trunk.out_channels, embed_dim)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.ndim != 4 or images.shape[1] != 3:
            raise DataError(f"expected B x 3 x H x W images, got {tuple(images.shape)}")
        feat = self.trunk(images)[-1]
        pooled = self.norm(feat.mean(dim=(2, 3)))
        return F.normalize(self.proj(pooled), dim=-1, eps=1e-12)


class IngredientEncoder(nn.Module):
    """Bidirectional recurrent encoder over learned ingredient-token embeddings."""

    def __init__(self, vocab_size: int, token_dim: int = 32, hidden: int = 32):
        super().__init__()
        self.vocab_size = vocab_size
        self.embed = nn.Embedding(vocab_size, token_dim)
        self.rnn = nn.LSTM(token_dim, hidden, bidirectional=True, batch_first=True)
        self.out_dim = 2 * hidden

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.numel() == 0:
            raise DataError("ingredient token sequence is empty")
        if int(tokens.max()) >= self.vocab_size or int(tokens.min()) < 0:
            raise DataError(f"ingredient token id out of range [0, {self.vocab_size})")
        emb = self.embed(tokens)
        _, (h, _) = self.rnn(emb)
        return torch.cat([h[0], h[1]], dim=-1)


class InstructionEncoder(nn.Module):
    """Sentence vectors (mean of token embeddings) fed to a sequence encoder:
    an LSTM, or a 2-layer / 4-head transformer, depending on kind."""

    def __init__(
        self,
        vocab_size: int,
        token_dim: int = 32,
        hidden: int = 64,
        kind: str = "recurrent",
        num_layers: int = 2,
        num_heads: int = 4,
    ):
        super().__init__()
        if kind not in TEXT_KINDS:
            raise DataError(f"unknown text encoder kind {kind!r}")
        self.kind = kind
        self.vocab_size = vocab_size
        self.embed = nn.Embedding(vocab_size, token_dim)
        if kind == "recurrent":
            self.rnn = nn.LSTM(token_dim, hidden, batch_first=True)
            self.out_dim = hidden
        else:
            self.sent_proj = nn.Linear(token_dim, hidden)
            layer = nn.TransformerEncoderLayer(
                d_model=hidden,
                nhead=num_heads,
                dim_feedforward=2 * hidden,
                dropout=0.0,
                batch_first=True,
            )
            self.blocks = nn.TransformerEncoder(layer, num_layers=num_layers)
            self.out_dim = hidden

    def sentence_vectors(self, sentences: list[torch.Tensor]) -> torch.Tensor:
        if not sentences:
            raise DataError("instruction sentence list is empty")
        vecs = []
        for s in sentences:
            if s.numel() == 0:
                raise DataError("instruction sentence has no tokens")
            if int(s.max()) >= self.vocab_size or int(s.min()) < 0:
                raise DataError(f"instruction token id out of range [0, {self.vocab_size})")
            vecs.append(self.embed(s).mean(dim=0))
        return torch.stack(vecs).unsqueeze(0)  # 1, S, token_dim

    def forward(self, sentences: list[torch.Tensor]) -> torch.Tensor:
        sv = self.sentence_vectors(sentences)
        if self.kind == "recurrent":
            _, (h, _) = self.rnn(sv)
            return h[-1].squeeze(0)
        x = self.sent_proj(sv)
        return self.blocks(x).mean(dim=1).squeeze(0)


class TextEncoder(nn.Module):
    """Recipe -> unit-norm joint embedding: ingredient and instruction
    encodings concatenated and projected to the shared dimension."""

    def __init__(
        self,
        vocab_size: int,
        embed_dim: int = 64,
        kind: str = "recurrent",
        token_dim: int = 32,
        hidden: int = 32,
    ):
        super().__init__()
        if kind not in TEXT_KINDS:
            raise DataError(f"unknown text encoder kind {kind!r}")
        self.kind = kind
        self.embed_dim = embed_dim
        self.ingredients = IngredientEncoder(vocab_size, token_dim=token_dim, hidden=hidden)
        self.instructions = InstructionEncoder(
            vocab_size, token_dim=token_dim, hidden=2 * hidden, kind=kind
        )
        self.proj = nn.Linear(self.ingredients.out_dim + self.instructions.out_dim, embed_dim)

    def forward(self, recipe: Recipe) -> torch.Tensor:
        device = self.proj.weight.device
        tok = torch.as_tensor(recipe.ingredient_tokens, dtype=torch.long, device=device)
        ing = self.ingredients(tok.unsqueeze(0)).squeeze(0)
        sents = [
            torch.as_tensor(s, dtype=torch.long, device=device)
            for s in recipe.instruction_sentences
        ]
        ins = self.instructions(sents)
        joint = self.proj(torch.cat([ing, ins], dim=-1))
        return F.normalize(joint, dim=-1, eps=1e-12)
