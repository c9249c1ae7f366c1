"""Synthetic fixtures: colored-blob dishes with templated recipes for
alignment pretraining, a blob segmentation dataset, and the 12-image
hand-checkable dataset fixture used by the dataset-tool tests."""

from __future__ import annotations

import os
import random

import numpy as np

from .masks import (
    CategoryOntology,
    DatasetManifest,
    ImageRecord,
    LabelMap,
    save_manifest,
    save_mask,
)
from .recipes import Recipe, build_semantic_vocab, label_recipes

INGREDIENT_NAMES = ("tomato", "lettuce", "berry", "corn")
INGREDIENT_COLORS = (
    (0.90, 0.15, 0.15),
    (0.15, 0.80, 0.20),
    (0.20, 0.30, 0.90),
    (0.90, 0.80, 0.20),
)
BACKGROUND_COLOR = (0.10, 0.10, 0.10)
STYLE_NAMES = ("raw", "grilled", "steamed")
STYLE_GAINS = (1.0, 0.6, 1.35)

# token layout of the toy recipe vocabulary
TOY_VOCAB_SIZE = 32
_ING_TOKEN = {i: 1 + i for i in range(len(INGREDIENT_NAMES))}
_STYLE_TOKEN = {s: 1 + len(INGREDIENT_NAMES) + s for s in range(len(STYLE_NAMES))}
_VERB_TOKENS = (10, 11, 12, 13)


def _render_blob(img, mask, cls, color, gain, rng, size_range):
    h, w = mask.shape
    bh = rng.randint(*size_range)
    bw = rng.randint(*size_range)
    top = rng.randint(0, h - bh)
    left = rng.randint(0, w - bw)
    img[top : top + bh, left : left + bw] = np.asarray(color) * gain
    mask[top : top + bh, left : left + bw] = cls


def _finish_image(img, rng, noise=0.03):
    img = img + rng.normal(0.0, noise, img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _dish_title(ingredients: tuple[int, ...]) -> str:
    return " ".join(sorted(INGREDIENT_NAMES[i] for i in ingredients)) + " bowl"


def make_pair_corpus(
    n: int, seed: int = 0, image_size: int = 32, max_ingredients: int = 2
) -> tuple[list[tuple[np.ndarray, Recipe]], list[tuple[int, ...]]]:
    """Paired (image, recipe) corpus of blob dishes rendered under several
    cooking styles. Returns the pairs and each sample's ingredient tuple."""
    rng = random.Random(seed)
    nprng = np.random.default_rng(seed)
    pairs = []
    meta = []
    recipes = []
    for k in range(n):
        n_ing = rng.randint(1, max_ingredients)
        ingredients = tuple(sorted(rng.sample(range(len(INGREDIENT_NAMES)), n_ing)))
        style = rng.randrange(len(STYLE_NAMES))
        img = np.tile(np.asarray(BACKGROUND_COLOR, dtype=np.float64), (image_size, image_size, 1))
        mask = np.zeros((image_size, image_size), dtype=np.uint8)
        for ing in ingredients:
            _render_blob(
                img,
                mask,
                ing + 1,
                INGREDIENT_COLORS[ing],
                STYLE_GAINS[style],
                rng,
                (image_size // 3, image_size // 2),
            )
        img = _finish_image(img, nprng)
        sentences = tuple(
            (_STYLE_TOKEN[style], _VERB_TOKENS[i % len(_VERB_TOKENS)], _ING_TOKEN[ing])
            for i, ing in enumerate(ingredients)
        )
        recipe = Recipe(
            recipe_id=f"toy-{k}",
            title=_dish_title(ingredients),
            ingredient_tokens=tuple(_ING_TOKEN[i] for i in ingredients),
            instruction_sentences=sentences,
        )
        recipes.append(recipe)
        pairs.append((img, recipe))
        meta.append(ingredients)
    vocab = build_semantic_vocab([r.title for r in recipes], k=len({r.title for r in recipes}))
    labeled = label_recipes(recipes, vocab)
    pairs = [(img, rec) for (img, _), rec in zip(pairs, labeled)]
    return pairs, meta


def toy_ontology() -> CategoryOntology:
    classes = [(0, "background")] + [(i + 1, n) for i, n in enumerate(INGREDIENT_NAMES)]
    supers = ((0, "vegetable"), (1, "fruit"))
    c2s = {1: 0, 2: 0, 3: 1, 4: 1}
    return CategoryOntology(
        classes=tuple(classes), super_classes=supers, class_to_super=c2s
    )


def make_seg_dataset(
    out_dir: str | os.PathLike,
    n: int = 40,
    seed: int = 0,
    image_size: int = 32,
    name: str = "toyseg",
) -> DatasetManifest:
    """Blob segmentation dataset matching the pair-corpus palette. Writes
    images, masks, and a manifest (splits left unassigned)."""
    out_dir = str(out_dir)
    img_dir = os.path.join(out_dir, "images")
    mask_dir = os.path.join(out_dir, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    rng = random.Random(seed)
    nprng = np.random.default_rng(seed + 1)
    records = []
    for k in range(n):
        n_ing = rng.randint(1, 3)
        ingredients = sorted(rng.sample(range(len(INGREDIENT_NAMES)), n_ing))
        style = rng.randrange(len(STYLE_NAMES))
        img = np.tile(np.asarray(BACKGROUND_COLOR, dtype=np.float64), (image_size, image_size, 1))
        mask = np.zeros((image_size, image_size), dtype=np.uint8)
        for ing in ingredients:
            _render_blob(
                img,
                mask,
                ing + 1,
                INGREDIENT_COLORS[ing],
                STYLE_GAINS[style],
                rng,
                (image_size // 3, image_size // 2),
            )
        img = _finish_image(img, nprng)
        img_path = os.path.join(img_dir, f"img_{k:03d}.png")
        mask_path = os.path.join(mask_dir, f"img_{k:03d}.png")
        from PIL import Image

        Image.fromarray((img * 255).astype(np.uint8)).save(img_path)
        lm = LabelMap(mask)
        save_mask(lm, mask_path)
        present = lm.classes_present()
        records.append(
            ImageRecord(
                image_path=img_path,
                mask_path=mask_path,
                dish_id=hash(tuple(sorted(present))) % 16,
                ingredient_ids=frozenset(present),
            )
        )
    manifest = DatasetManifest(ontology=toy_ontology(), records=tuple(records), name=name)
    save_manifest(manifest, os.path.join(out_dir, "manifest.json"))
    return manifest


# 12-image fixture: which ingredient classes appear in each image.
# Class 6 ("candy") is the planted rare class (4 images < threshold 5).
FIXTURE_COMPOSITION = (
    (1, 2),
    (1, 2, 3),
    (1, 2, 3),
    (1, 3, 5),
    (1, 3, 4),
    (1, 4, 5),
    (1, 4, 6),
    (1, 5, 6),
    (2, 3, 5),
    (2, 3, 6),
    (2, 4, 5),
    (2, 4, 6),
)
FIXTURE_CLASS_NAMES = ("background", "rice", "noodle", "tomato", "orange", "citrus", "candy")
FIXTURE_SIZE = 10  # masks are 10x10; each present class covers 3 rows


def fixture_ontology() -> CategoryOntology:
    classes = tuple(enumerate(FIXTURE_CLASS_NAMES))
    supers = ((0, "staple"), (1, "fruit_veg"))
    c2s = {1: 0, 2: 0, 3: 1, 4: 1, 5: 1, 6: 1}
    return CategoryOntology(classes=classes, super_classes=supers, class_to_super=c2s)


def make_dataset_fixture(out_dir: str | os.PathLike) -> DatasetManifest:
    """Deterministic 12-image fixture with hand-checkable statistics.

    Image i shows the classes in FIXTURE_COMPOSITION[i]; the j-th listed
    class fills rows 10-3k+3j .. 10-3k+3j+2 of a 10x10 raster (k classes),
    background above. dish_id = i // 2.
    """
    out_dir = str(out_dir)
    img_dir = os.path.join(out_dir, "images")
    mask_dir = os.path.join(out_dir, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    from PIL import Image

    palette = np.asarray(
        [
            BACKGROUND_COLOR,
            (0.9, 0.9, 0.8),
            (0.8, 0.7, 0.4),
            (0.9, 0.2, 0.1),
            (1.0, 0.6, 0.1),
            (0.9, 0.8, 0.1),
            (0.9, 0.3, 0.7),
        ]
    )
    records = []
    for i, classes in enumerate(FIXTURE_COMPOSITION):
        k = len(classes)
        mask = np.zeros((FIXTURE_SIZE, FIXTURE_SIZE), dtype=np.uint8)
        start = FIXTURE_SIZE - 3 * k
        for j, cls in enumerate(classes):
            mask[start + 3 * j : start + 3 * j + 3, :] = cls
        img = (palette[mask] * 255).astype(np.uint8)
        img_path = os.path.join(img_dir, f"fix_{i:02d}.png")
        mask_path = os.path.join(mask_dir, f"fix_{i:02d}.png")
        Image.fromarray(img).save(img_path)
        save_mask(LabelMap(mask), mask_path)
        records.append(
            ImageRecord(
                image_path=img_path,
                mask_path=mask_path,
                dish_id=i // 2,
                ingredient_ids=frozenset(classes),
            )
        )
    manifest = DatasetManifest(
        ontology=fixture_ontology(), records=tuple(records), name="fixture12"
    )
    save_manifest(manifest, os.path.join(out_dir, "manifest.json"))
    return manifest
