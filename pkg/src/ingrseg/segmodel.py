"""Toy-scale encoder-decoder segmenters: three decoder families over the
shared vision trunks, plus archive-based encoder initialization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import DataError
from .archive import load_archive
from .encoders import build_vision_trunk, load_numpy_state
from .masks import LabelMap

DECODER_KINDS = ("dilation_head", "fpn_head", "transformer_naive_head")

# which decoder can sit on which encoder: the pyramid head needs the
# multi-stage conv trunk, the naive head needs the token-grid trunk
_COMPAT = {
    "dilation_head": ("convolutional", "transformer"),
    "fpn_head": ("convolutional",),
    "transformer_naive_head": ("transformer",),
}


@dataclass
class SegmenterConfig:
    encoder_kind: str = "convolutional"
    decoder_kind: str = "fpn_head"
    num_classes: int = 5
    crop_size: int = 32
    base_lr: float = 1e-3
    max_iters: int = 200
    batch_size: int = 8
    momentum: float = 0.9
    weight_decay: float = 5e-4
    poly_power: float = 0.9
    init_source: str = "random"  # "random" or a path to an encoder archive
    seed: int = 0
    scale_range: tuple[float, float] = (0.5, 2.0)
    hflip: bool = True
    color_jitter: float = 0.1
    trunk_kwargs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.decoder_kind not in DECODER_KINDS:
            raise DataError(f"unknown decoder kind {self.decoder_kind!r}")
        if self.encoder_kind not in _COMPAT[self.decoder_kind]:
            raise DataError(
                f"decoder {self.decoder_kind!r} is incompatible with "
                f"encoder {self.encoder_kind!r}"
            )


class DilationHead(nn.Module):
    """Predicts from the last-stage features only, through dilated convs."""

    def __init__(self, in_channels: int, num_classes: int, mid: int = 64):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(in_channels, mid, 3, padding=2, dilation=2),
            nn.ReLU(inplace=True),
            nn.Conv2d(mid, mid, 3, padding=4, dilation=4),
            nn.ReLU(inplace=True),
        )
        self.classify = nn.Conv2d(mid, num_classes, 1)

    def forward(self, feats: list[torch.Tensor], out_size) -> torch.Tensor:
        x = self.block(feats[-1])
        x = self.classify(x)
        return F.interpolate(x, size=out_size, mode="bilinear", align_corners=False)


class FPNHead(nn.Module):
    """Lateral 1x1 projections merged top-down, summed at the finest level."""

    def __init__(self, in_channels: list[int], num_classes: int, mid: int = 64):
        super().__init__()
        self.laterals = nn.ModuleList(nn.Conv2d(c, mid, 1) for c in in_channels)
        self.smooth = nn.ModuleList(
            nn.Conv2d(mid, mid, 3, padding=1) for _ in in_channels
        )
        self.classify = nn.Conv2d(mid, num_classes, 1)

    def forward(self, feats: list[torch.Tensor], out_size) -> torch.Tensor:
        lat = [conv(f) for conv, f in zip(self.laterals, feats)]
        for i in range(len(lat) - 2, -1, -1):
            lat[i] = lat[i] + F.interpolate(
                lat[i + 1], size=lat[i].shape[-2:], mode="bilinear", align_corners=False
            )
        fused = None
        top_size = lat[0].shape[-2:]
        for conv, level in zip(self.smooth, lat):
            x = conv(level)
            x = F.interpolate(x, size=top_size, mode="bilinear", align_corners=False)
            fused = x if fused is None else fused + x
        out = self.classify(F.relu(fused))
        return F.interpolate(out, size=out_size, mode="bilinear", align_corners=False)


class TransformerNaiveHead(nn.Module):
    """Two convolution blocks over the final token-grid features."""

    def __init__(self, in_channels: int, num_classes: int, mid: int = 64):
        super().__init__()
        self.block1 = nn.Sequential(
            nn.Conv2d(in_channels, mid, 3, padding=1), nn.ReLU(inplace=True)
        )
        self.block2 = nn.Sequential(nn.Conv2d(mid, mid, 3, padding=1), nn.ReLU(inplace=True))
        self.classify = nn.Conv2d(mid, num_classes, 1)

    def forward(self, feats: list[torch.Tensor], out_size) -> torch.Tensor:
        x = self.block2(self.block1(feats[-1]))
        x = self.classify(x)
        return F.interpolate(x, size=out_size, mode="bilinear", align_corners=False)


class Segmenter(nn.Module):
    def __init__(self, config: SegmenterConfig):
        super().__init__()
        self.config = config
        self.encoder = build_vision_trunk(
            config.encoder_kind, image_size=config.crop_size, **config.trunk_kwargs
        )
        if config.decoder_kind == "dilation_head":
            self.decoder = DilationHead(self.encoder.out_channels, config.num_classes)
        elif config.decoder_kind == "fpn_head":
            self.decoder = FPNHead(list(self.encoder.widths), config.num_classes)
        else:
            self.decoder = TransformerNaiveHead(self.encoder.out_channels, config.num_classes)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.ndim != 4 or images.shape[1] != 3:
            raise DataError(f"expected B x 3 x H x W images, got {tuple(images.shape)}")
        feats = self.encoder(images)
        return self.decoder(feats, images.shape[-2:])


def build_segmenter(config: SegmenterConfig) -> Segmenter:
    return Segmenter(config)


def init_encoder_from_archive(model: Segmenter, archive_path) -> Segmenter:
    """Copy pretrained encoder weights into the segmenter encoder.

    The decoder keeps its random initialization. Raises on architecture
    mismatch between the archive descriptor and the configured encoder.
    """
    tensors, descriptor = load_archive(archive_path)
    if descriptor.get("archive_kind") != "alignment-encoders":
        raise DataError(f"{archive_path} is not an alignment-encoder archive")
    if descriptor["vision"] != model.encoder.descriptor():
        raise DataError(
            f"archive encoder {descriptor['vision']} does not match "
            f"segmenter encoder {model.encoder.descriptor()}"
        )
    load_numpy_state(model.encoder, tensors, "vision_trunk/")
    return model


def predict(model: Segmenter, image: torch.Tensor) -> LabelMap:
    """Per-pixel argmax over class logits; ties go to the lower class id."""
    if image.ndim == 3:
        image = image.unsqueeze(0)
    with torch.no_grad():
        logits = model(image)[0].cpu().numpy()
    # np.argmax picks the first maximum, which is the lower class id
    return LabelMap(np.argmax(logits, axis=0).astype(np.uint8))


def logits_to_labelmap(logits: np.ndarray) -> LabelMap:
    if logits.ndim != 3:
        raise DataError(f"expected C x H x W logits, got shape {logits.shape}")
    return LabelMap(np.argmax(logits, axis=0).astype(np.uint8))


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
