"""Recipe-aligned vision-encoder pretraining.

A vision embedder and a text encoder are trained into a joint unit-norm
space with a cosine-margin loss plus a semantic dish-label loss, in two
stages: first the text encoder learns against a frozen vision encoder,
then the roles swap. The trained vision trunk is exported as a tensor
archive to initialize the segmenter encoder.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from . import DataError
from .archive import load_archive, save_archive
from .encoders import (
    TEXT_KINDS,
    VISION_KINDS,
    TextEncoder,
    VisionEmbedder,
    build_vision_trunk,
    param_checksum,
    seed_all,
    state_to_numpy,
    load_numpy_state,
)
from .losses import cosine_margin_loss, semantic_loss
from .recipes import Recipe


@dataclass
class AlignConfig:
    alpha: float = 0.1
    embed_dim: int = 64
    num_semantic_labels: int = 2000
    lambda_semantic: float = 1.0
    text_encoder_kind: str = "recurrent"
    vision_encoder_kind: str = "convolutional"
    negative_pair_probability: float = 0.5
    stage1_steps: int = 100
    stage2_steps: int = 100
    batch_size: int = 16
    lr: float = 1e-4
    image_size: int = 32
    vocab_size: int = 256
    seed: int = 0
    trunk_kwargs: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise DataError(f"margin alpha must be in (0,1), got {self.alpha}")
        if self.lambda_semantic < 0:
            raise DataError("lambda_semantic must be >= 0")
        if self.text_encoder_kind not in TEXT_KINDS:
            raise DataError(f"unknown text encoder kind {self.text_encoder_kind!r}")
        if self.vision_encoder_kind not in VISION_KINDS:
            raise DataError(f"unknown vision encoder kind {self.vision_encoder_kind!r}")


class AlignmentModel(nn.Module):
    """Vision embedder + text encoder + the two semantic classifier heads."""

    def __init__(self, config: AlignConfig):
        super().__init__()
        self.config = config
        trunk = build_vision_trunk(
            config.vision_encoder_kind, image_size=config.image_size, **config.trunk_kwargs
        )
        self.vision = VisionEmbedder(trunk, embed_dim=config.embed_dim)
        self.text = TextEncoder(
            config.vocab_size, embed_dim=config.embed_dim, kind=config.text_encoder_kind
        )
        self.head_v = nn.Linear(config.embed_dim, config.num_semantic_labels)
        self.head_t = nn.Linear(config.embed_dim, config.num_semantic_labels)

    def embed_images(self, images: torch.Tensor) -> torch.Tensor:
        return self.vision(images)

    def embed_recipe(self, recipe: Recipe) -> torch.Tensor:
        return self.text(recipe)


def _to_tensor(image: np.ndarray) -> torch.Tensor:
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(f"expected HxWx3 image, got shape {arr.shape}")
    if arr.max() > 1.5:
        arr = arr / 255.0
    return torch.from_numpy(arr.transpose(2, 0, 1))


def pretrain(
    dataset: list[tuple[np.ndarray, Recipe]],
    config: AlignConfig,
) -> tuple[AlignmentModel, list[dict]]:
    """Two-stage alignment pretraining over (image, recipe) pairs.

    Stage 1 freezes the vision encoder and trains the text encoder; stage 2
    freezes the text encoder and trains the vision encoder. Classifier
    heads train in both stages. Deterministic given config.seed and data
    order.
    """
    if not dataset:
        raise DataError("pretraining dataset is empty")
    if len(dataset) < 2 and config.negative_pair_probability > 0:
        raise DataError("negative sampling needs at least two distinct recipes")
    torch.set_num_threads(1)
    seed_all(config.seed)
    model = AlignmentModel(config)
    rng = random.Random(config.seed)
    images = [_to_tensor(img) for img, _ in dataset]
    recipes = [r for _, r in dataset]
    log: list[dict] = []

    def run_stage(stage: int, steps: int, params):
        opt = torch.optim.Adam(params, lr=config.lr)
        for step in range(steps):
            idx = [rng.randrange(len(dataset)) for _ in range(config.batch_size)]
            batch_imgs = torch.stack([images[i] for i in idx])
            v = model.embed_images(batch_imgs)
            loss = torch.zeros((), dtype=v.dtype)
            for row, i in enumerate(idx):
                if config.negative_pair_probability > 0 and (
                    rng.random() < config.negative_pair_probability
                ):
                    j = rng.randrange(len(dataset) - 1)
                    if j >= i:
                        j += 1
                    recipe, y = recipes[j], -1
                else:
                    recipe, y = recipes[i], 1
                t = model.embed_recipe(recipe)
                pair_loss = cosine_margin_loss(v[row], t, y, config.alpha)
                if config.lambda_semantic > 0:
                    label_v = recipes[i].semantic_label  # image keeps its own dish label
                    pair_loss = pair_loss + config.lambda_semantic * semantic_loss(
                        v[row], t, label_v, recipe.semantic_label, model.head_v, model.head_t
                    )
                loss = loss + pair_loss
            loss = loss / len(idx)
            opt.zero_grad()
            loss.backward()
            opt.step()
            log.append({"stage": stage, "step": step, "loss": float(loss.detach())})

    # stage 1: text learns, vision frozen
    for p in model.vision.parameters():
        p.requires_grad_(False)
    stage1_params = list(model.text.parameters()) + list(model.head_v.parameters()) + list(
        model.head_t.parameters()
    )
    run_stage(1, config.stage1_steps, stage1_params)

    # stage 2: vision learns, text frozen
    for p in model.vision.parameters():
        p.requires_grad_(True)
    for p in model.text.parameters():
        p.requires_grad_(False)
    stage2_params = list(model.vision.parameters()) + list(model.head_v.parameters()) + list(
        model.head_t.parameters()
    )
    run_stage(2, config.stage2_steps, stage2_params)
    for p in model.text.parameters():
        p.requires_grad_(True)
    return model, log


def export_encoder(model: AlignmentModel, path) -> None:
    """Write the trained encoders as a versioned tensor archive."""
    tensors = {}
    tensors.update(state_to_numpy(model.vision.trunk, "vision_trunk/"))
    tensors.update(state_to_numpy(model.vision.norm, "vision_norm/"))
    tensors.update(state_to_numpy(model.vision.proj, "vision_proj/"))
    tensors.update(state_to_numpy(model.text, "text/"))
    descriptor = {
        "archive_kind": "alignment-encoders",
        "vision": model.vision.trunk.descriptor(),
        "embed_dim": model.config.embed_dim,
        "text_encoder_kind": model.config.text_encoder_kind,
        "vocab_size": model.config.vocab_size,
        "num_semantic_labels": model.config.num_semantic_labels,
    }
    save_archive(path, tensors, descriptor)


def import_encoder(path, config: AlignConfig) -> AlignmentModel:
    """Rebuild an AlignmentModel from an exported archive (heads stay random)."""
    tensors, descriptor = load_archive(path)
    if descriptor.get("archive_kind") != "alignment-encoders":
        raise DataError(f"{path} is not an alignment-encoder archive")
    model = AlignmentModel(config)
    if descriptor["vision"] != model.vision.trunk.descriptor():
        raise DataError(
            f"archive encoder {descriptor['vision']} does not match "
            f"configured {model.vision.trunk.descriptor()}"
        )
    load_numpy_state(model.vision.trunk, tensors, "vision_trunk/")
    load_numpy_state(model.vision.norm, tensors, "vision_norm/")
    load_numpy_state(model.vision.proj, tensors, "vision_proj/")
    load_numpy_state(model.text, tensors, "text/")
    return model


def embed_image_batch(model: AlignmentModel, images: list[np.ndarray]) -> np.ndarray:
    with torch.no_grad():
        return model.embed_images(torch.stack([_to_tensor(im) for im in images])).numpy()


def mean_intra_group_distance(embeddings: np.ndarray, groups: list) -> float:
    """Mean pairwise Euclidean distance within each group, averaged over
    groups with at least two members."""
    by_group: dict = {}
    for e, g in zip(embeddings, groups):
        by_group.setdefault(g, []).append(e)
    dists = []
    for members in by_group.values():
        if len(members) < 2:
            continue
        arr = np.stack(members)
        diff = arr[:, None, :] - arr[None, :, :]
        d = np.sqrt((diff**2).sum(-1))
        iu = np.triu_indices(len(arr), k=1)
        dists.append(float(d[iu].mean()))
    if not dists:
        raise DataError("no group has two or more members")
    return float(np.mean(dists))


def vision_checksum(model: AlignmentModel) -> str:
    return param_checksum(model.vision)


def text_checksum(model: AlignmentModel) -> str:
    return param_checksum(model.text)
