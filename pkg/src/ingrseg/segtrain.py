"""Segmenter training: poly learning-rate schedule, desk-scale augmentation,
the SGD loop, checkpointing, and test-split evaluation."""

from __future__ import annotations

import os
import random
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

from . import DataError, IGNORE_INDEX
from .archive import load_archive, save_archive
from .encoders import param_checksum, seed_all, state_to_numpy, load_numpy_state
from .losses import pixel_ce_loss
from .masks import DatasetManifest, ImageRecord, LabelMap, load_mask
from .metrics import ConfusionMatrix, confusion_from_pair, merge
from .segmodel import Segmenter, SegmenterConfig, build_segmenter, init_encoder_from_archive, predict


@dataclass
class TrainState:
    iteration: int
    current_lr: float
    loss_history: list[float]
    lr_history: list[float]
    checksums: dict[str, str]


def poly_lr(iteration: int, base_lr: float, max_iters: int, power: float = 0.9) -> float:
    """lr = base * (1 - iter/max_iters)^power, exact at both endpoints."""
    if not (0 <= iteration <= max_iters):
        raise DataError(f"iteration {iteration} outside [0, {max_iters}]")
    return base_lr * (1.0 - iteration / max_iters) ** power


def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    except FileNotFoundError:
        raise DataError(f"image not found: {path}") from None


def augment(
    image: np.ndarray,
    mask: np.ndarray,
    crop: int,
    rng: random.Random,
    scale_range=(0.5, 2.0),
    hflip: bool = True,
    color_jitter: float = 0.1,
) -> tuple[np.ndarray, np.ndarray]:
    """Random scale, crop (pad with IGNORE where short), flip, color jitter."""
    s = rng.uniform(*scale_range)
    h, w = mask.shape
    nh, nw = max(1, round(h * s)), max(1, round(w * s))
    img = np.asarray(
        Image.fromarray((image * 255).astype(np.uint8)).resize((nw, nh), Image.BILINEAR),
        dtype=np.float32,
    ) / 255.0
    msk = np.asarray(
        Image.fromarray(mask).resize((nw, nh), Image.NEAREST), dtype=np.uint8
    )
    # pad up to the crop size, then take a random window
    pad_h, pad_w = max(0, crop - nh), max(0, crop - nw)
    if pad_h or pad_w:
        img = np.pad(img, ((0, pad_h), (0, pad_w), (0, 0)))
        msk = np.pad(msk, ((0, pad_h), (0, pad_w)), constant_values=IGNORE_INDEX)
    top = rng.randrange(msk.shape[0] - crop + 1)
    left = rng.randrange(msk.shape[1] - crop + 1)
    img = img[top : top + crop, left : left + crop]
    msk = msk[top : top + crop, left : left + crop]
    if hflip and rng.random() < 0.5:
        img = img[:, ::-1].copy()
        msk = msk[:, ::-1].copy()
    if color_jitter > 0:
        img = np.clip(img * rng.uniform(1 - color_jitter, 1 + color_jitter)
                      + rng.uniform(-color_jitter, color_jitter), 0.0, 1.0)
    return img.astype(np.float32), msk


def train(
    model: Segmenter,
    manifest: DatasetManifest,
    config: SegmenterConfig,
    checkpoint_path=None,
) -> TrainState:
    """SGD with momentum, weight decay, and the poly schedule; deterministic
    under config.seed. Writes a checkpoint at the end when a path is given."""
    records = manifest.train_records()
    if not records:
        raise DataError("manifest has no train records")
    torch.set_num_threads(1)
    rng = random.Random(config.seed)
    images = [load_image(r.image_path) for r in records]
    masks = [np.asarray(load_mask(r.mask_path, config.num_classes).data) for r in records]
    opt = torch.optim.SGD(
        model.parameters(),
        lr=config.base_lr,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )
    loss_history, lr_history = [], []
    for it in range(config.max_iters):
        lr = poly_lr(it, config.base_lr, config.max_iters, config.poly_power)
        for group in opt.param_groups:
            group["lr"] = lr
        batch_img, batch_msk = [], []
        for _ in range(config.batch_size):
            i = rng.randrange(len(records))
            img, msk = augment(
                images[i],
                masks[i],
                config.crop_size,
                rng,
                scale_range=config.scale_range,
                hflip=config.hflip,
                color_jitter=config.color_jitter,
            )
            batch_img.append(torch.from_numpy(img.transpose(2, 0, 1)))
            batch_msk.append(torch.from_numpy(msk.astype(np.int64)))
        x = torch.stack(batch_img)
        y = torch.stack(batch_msk)
        logits = model(x)
        loss, all_ignored = pixel_ce_loss(logits, y)
        opt.zero_grad()
        if not all_ignored:
            loss.backward()
            opt.step()
        loss_history.append(float(loss.detach()))
        lr_history.append(lr)
    state = TrainState(
        iteration=config.max_iters,
        current_lr=poly_lr(config.max_iters, config.base_lr, config.max_iters, config.poly_power),
        loss_history=loss_history,
        lr_history=lr_history,
        checksums={
            "encoder": param_checksum(model.encoder),
            "decoder": param_checksum(model.decoder),
        },
    )
    if checkpoint_path is not None:
        save_checkpoint(model, opt, config, checkpoint_path)
    return state


def build_and_train(
    manifest: DatasetManifest, config: SegmenterConfig, checkpoint_path=None
) -> tuple[Segmenter, TrainState]:
    """Seeded build (+ optional pretrained-encoder init) followed by train()."""
    seed_all(config.seed)
    model = build_segmenter(config)
    if config.init_source != "random":
        init_encoder_from_archive(model, config.init_source)
    state = train(model, manifest, config, checkpoint_path=checkpoint_path)
    return model, state


def save_checkpoint(model: Segmenter, optimizer, config: SegmenterConfig, path) -> None:
    tensors = state_to_numpy(model, "model/")
    if optimizer is not None:
        for name, p in sorted(dict(model.named_parameters()).items()):
            buf = optimizer.state.get(p, {}).get("momentum_buffer")
            if buf is not None:
                tensors["optim/" + name] = buf.detach().cpu().numpy()
    descriptor = {
        "archive_kind": "segmenter-checkpoint",
        "encoder_kind": config.encoder_kind,
        "decoder_kind": config.decoder_kind,
        "num_classes": config.num_classes,
        "crop_size": config.crop_size,
        "encoder": model.encoder.descriptor(),
    }
    save_archive(path, tensors, descriptor)


def load_checkpoint(path, config: SegmenterConfig) -> Segmenter:
    tensors, descriptor = load_archive(path)
    if descriptor.get("archive_kind") != "segmenter-checkpoint":
        raise DataError(f"{path} is not a segmenter checkpoint")
    for key in ("encoder_kind", "decoder_kind", "num_classes"):
        if descriptor.get(key) != getattr(config, key):
            raise DataError(
                f"checkpoint {key}={descriptor.get(key)!r} does not match "
                f"config {getattr(config, key)!r}"
            )
    model = build_segmenter(config)
    load_numpy_state(model, tensors, "model/")
    model.eval()
    return model


def evaluate(
    model: Segmenter, records: list[ImageRecord], num_classes: int
) -> ConfusionMatrix:
    """Predict every record and accumulate one confusion matrix."""
    model.eval()
    cm = ConfusionMatrix.zero(num_classes)
    for rec in records:
        img = load_image(rec.image_path)
        gt = load_mask(rec.mask_path, num_classes)
        pred = predict(model, torch.from_numpy(img.transpose(2, 0, 1)))
        cm = merge(cm, confusion_from_pair(pred, gt, num_classes))
    return cm


def evaluate_pred_dir(
    pred_paths: dict[str, str], records: list[ImageRecord], num_classes: int
) -> ConfusionMatrix:
    """Compare pre-computed prediction masks (keyed by gt mask basename)."""
    cm = ConfusionMatrix.zero(num_classes)
    for rec in records:
        gt = load_mask(rec.mask_path, num_classes)
        key = os.path.basename(rec.mask_path)
        if key not in pred_paths:
            raise DataError(f"no prediction found for {key}")
        pred = load_mask(pred_paths[key], num_classes)
        cm = merge(cm, confusion_from_pair(pred, gt, num_classes))
    return cm
