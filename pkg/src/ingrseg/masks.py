"""Label rasters, category ontology, and dataset manifests.

Masks are stored on disk as 8-bit single-channel PNGs; pixel value is the
class id, 255 is the IGNORE sentinel. Manifests are JSON documents listing
one record per image plus the ontology they were annotated against.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image

from . import DataError, IGNORE_INDEX

SPLIT_TAGS = ("train", "test", "unassigned")


@dataclass(frozen=True)
class LabelMap:
    """H x W raster of class indices (uint8, 255 = IGNORE)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.uint8)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataError(f"label map must be 2-D and non-empty, got shape {arr.shape}")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def classes_present(self, background_id: int = 0) -> set[int]:
        """Distinct non-background, non-IGNORE class ids in the raster."""
        vals = set(np.unique(self.data).tolist())
        vals.discard(IGNORE_INDEX)
        vals.discard(background_id)
        return vals

    def validate_range(self, num_classes: int) -> None:
        """Reject pixel values outside [0, num_classes) that are not IGNORE."""
        bad = np.unique(self.data[(self.data >= num_classes) & (self.data != IGNORE_INDEX)])
        if bad.size:
            raise DataError(
                f"label map contains values {bad.tolist()} outside [0, {num_classes}) "
                f"and != IGNORE ({IGNORE_INDEX})"
            )


@dataclass(frozen=True)
class CategoryOntology:
    """Dense ingredient classes (id 0 = background) with super-class grouping."""

    classes: tuple[tuple[int, str], ...]
    super_classes: tuple[tuple[int, str], ...] = ()
    class_to_super: dict[int, int] = field(default_factory=dict)
    background_id: int = 0

    def __post_init__(self):
        ids = [cid for cid, _ in self.classes]
        if ids != list(range(len(ids))):
            raise DataError(f"class ids must be dense 0..C-1, got {ids}")
        if not ids:
            raise DataError("ontology must contain at least the background class")
        if self.background_id != 0:
            raise DataError("background must be class 0")
        super_ids = {sid for sid, _ in self.super_classes}
        for cid, sid in self.class_to_super.items():
            if cid not in set(ids) or sid not in super_ids:
                raise DataError(f"class_to_super entry {cid}->{sid} references unknown id")
        if self.super_classes:
            missing = [c for c in ids[1:] if c not in self.class_to_super]
            if missing:
                raise DataError(f"class_to_super not total: missing classes {missing}")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def class_name(self, cid: int) -> str:
        return self.classes[cid][1]

    def to_dict(self) -> dict:
        return {
            "classes": [list(c) for c in self.classes],
            "super_classes": [list(s) for s in self.super_classes],
            "class_to_super": {str(k): v for k, v in sorted(self.class_to_super.items())},
            "background_id": self.background_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CategoryOntology":
        return cls(
            classes=tuple((int(i), str(n)) for i, n in d["classes"]),
            super_classes=tuple((int(i), str(n)) for i, n in d.get("super_classes", [])),
            class_to_super={int(k): int(v) for k, v in d.get("class_to_super", {}).items()},
            background_id=int(d.get("background_id", 0)),
        )


@dataclass(frozen=True)
class ImageRecord:
    image_path: str
    mask_path: str
    dish_id: int
    ingredient_ids: frozenset[int]
    split_tag: str = "unassigned"

    def __post_init__(self):
        if self.split_tag not in SPLIT_TAGS:
            raise DataError(f"bad split tag {self.split_tag!r}")
        object.__setattr__(self, "ingredient_ids", frozenset(int(i) for i in self.ingredient_ids))


@dataclass(frozen=True)
class DatasetManifest:
    ontology: CategoryOntology
    records: tuple[ImageRecord, ...]
    name: str = "dataset"
    # Lineage of refinement: original class id -> current id (None = deleted
    # to background). Identity for a freshly built manifest.
    source_class_map: dict[int, int | None] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        paths = [r.mask_path for r in self.records]
        if len(set(paths)) != len(paths):
            raise DataError("manifest record mask paths are not unique")
        for r in self.records:
            bad = [i for i in r.ingredient_ids if not (0 <= i < self.ontology.num_classes)]
            if bad:
                raise DataError(f"record {r.mask_path}: ingredient ids {bad} not in ontology")
        if not self.source_class_map:
            object.__setattr__(
                self,
                "source_class_map",
                {i: i for i in range(self.ontology.num_classes)},
            )

    def with_records(self, records) -> "DatasetManifest":
        return replace(self, records=tuple(records))

    def train_records(self) -> tuple[ImageRecord, ...]:
        return tuple(r for r in self.records if r.split_tag == "train")

    def test_records(self) -> tuple[ImageRecord, ...]:
        return tuple(r for r in self.records if r.split_tag == "test")


def load_mask(path: str | os.PathLike, num_classes: int | None = None) -> LabelMap:
    """Load an 8-bit single-channel indexed raster as a LabelMap.

    Rejects multi-channel images and, when num_classes is given, any pixel
    value >= num_classes that is not the IGNORE sentinel.
    """
    if not os.path.exists(path):
        raise DataError(f"mask file not found: {path}")
    with Image.open(path) as img:
        if img.mode not in ("L", "P"):
            raise DataError(f"mask {path} is not single-channel 8-bit (mode={img.mode})")
        arr = np.array(img, dtype=np.uint8) if img.mode == "L" else np.array(img.convert("P"), dtype=np.uint8)
    mask = LabelMap(arr)
    if num_classes is not None:
        try:
            mask.validate_range(num_classes)
        except DataError as e:
            raise DataError(f"{path}: {e}") from None
    return mask


def save_mask(mask: LabelMap, path: str | os.PathLike) -> None:
    """Write a LabelMap as an 8-bit grayscale PNG."""
    Image.fromarray(np.asarray(mask.data, dtype=np.uint8), mode="L").save(path, format="PNG")


def validate_record(
    rec: ImageRecord,
    mask: LabelMap,
    ontology: CategoryOntology,
    min_ingredients: int = 2,
    max_ingredients: int = 16,
    min_region_fraction: float = 0.05,
) -> list[str]:
    """Check a record against the annotation-validity rules.

    Returns a list of violation strings (empty = valid):
    the mask must show between min and max distinct ingredient classes,
    every present ingredient must cover at least min_region_fraction of the
    image, and the mask classes must be a subset of the record's ids.
    """
    mask.validate_range(ontology.num_classes)
    present = sorted(mask.classes_present(ontology.background_id))
    violations = []
    if len(present) < min_ingredients:
        violations.append(f"ingredient count < {min_ingredients} (found {len(present)})")
    if len(present) > max_ingredients:
        violations.append(f"ingredient count > {max_ingredients} (found {len(present)})")
    total = mask.data.size
    for cid in present:
        frac = int((mask.data == cid).sum()) / total
        if frac < min_region_fraction:
            violations.append(
                f"region below {min_region_fraction:.0%}: class {cid} "
                f"({ontology.class_name(cid)}) covers {frac:.2%}"
            )
    extra = sorted(set(present) - set(rec.ingredient_ids))
    if extra:
        violations.append(f"mask classes {extra} not listed in record ingredient_ids")
    return violations


def remap_labels(mask: LabelMap, mapping: dict[int, int]) -> LabelMap:
    """Apply an old-id -> new-id map to every pixel. IGNORE maps to IGNORE."""
    lut = np.arange(256, dtype=np.int32)
    lut[IGNORE_INDEX] = IGNORE_INDEX
    for old, new in mapping.items():
        lut[old] = new
    present = np.unique(mask.data)
    missing = [int(v) for v in present if v != IGNORE_INDEX and int(v) not in mapping]
    if missing:
        raise DataError(f"remap mapping missing entries for values {missing}")
    out = lut[mask.data.astype(np.int32)]
    if out.max(initial=0) > 255 or out.min(initial=0) < 0:
        raise DataError("remap target ids out of uint8 range")
    return LabelMap(out.astype(np.uint8))


def save_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> None:
    doc = {
        "name": manifest.name,
        "ontology": manifest.ontology.to_dict(),
        "source_class_map": {str(k): v for k, v in sorted(manifest.source_class_map.items())},
        "records": [
            {
                "image_path": r.image_path,
                "mask_path": r.mask_path,
                "dish_id": r.dish_id,
                "ingredient_ids": sorted(r.ingredient_ids),
                "split_tag": r.split_tag,
            }
            for r in manifest.records
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    if not os.path.exists(path):
        raise DataError(f"manifest not found: {path}")
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"manifest {path} is not valid JSON: {e}") from None
    try:
        records = tuple(
            ImageRecord(
                image_path=r["image_path"],
                mask_path=r["mask_path"],
                dish_id=int(r["dish_id"]),
                ingredient_ids=frozenset(int(i) for i in r["ingredient_ids"]),
                split_tag=r.get("split_tag", "unassigned"),
            )
            for r in doc["records"]
        )
        return DatasetManifest(
            ontology=CategoryOntology.from_dict(doc["ontology"]),
            records=records,
            name=doc.get("name", "dataset"),
            source_class_map={
                int(k): (None if v is None else int(v))
                for k, v in doc.get("source_class_map", {}).items()
            },
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"manifest {path} malformed: {e}") from None
