"""Dataset statistics, refinement pipeline, and train/test split procedures.

"One mask" counts one (image, class) presence: an image showing rice in two
disconnected regions contributes a single rice mask. Refinement runs
relabel fixes, then merges, then deletions, then re-densifies class ids.
"""

from __future__ import annotations

import os
import random
from collections import Counter
from dataclasses import dataclass, field, replace

from . import DataError
from .masks import (
    CategoryOntology,
    DatasetManifest,
    ImageRecord,
    load_mask,
    remap_labels,
    save_mask,
)


@dataclass(frozen=True)
class DatasetStatistics:
    num_images: int
    num_masks: int
    per_class_image_counts: dict[int, int]
    per_class_split_counts: dict[int, tuple[int, int]]
    mean_image_width: float
    mean_image_height: float
    num_dishes: int
    num_classes: int
    partial: bool = False
    errors: tuple[str, ...] = ()


@dataclass(frozen=True)
class RefinementPlan:
    """What to fix, merge, and delete. Ids refer to the ontology the plan
    was written against; entries already absorbed by an earlier application
    resolve to no-ops via the manifest's source_class_map."""

    delete_set: frozenset[int] = frozenset()
    merge_map: dict[int, int] = field(default_factory=dict)
    relabel_fixes: tuple[tuple[str, int, int], ...] = ()  # (mask_path, old id, new id)

    def __post_init__(self):
        object.__setattr__(self, "delete_set", frozenset(int(i) for i in self.delete_set))
        targets = set(self.merge_map.values())
        if self.delete_set & targets:
            raise DataError("refinement plan deletes a class that is also a merge target")
        for src in self.merge_map:
            # follow the chain; a cycle would loop past the map size
            seen = set()
            cur = src
            while cur in self.merge_map:
                if cur in seen:
                    raise DataError(f"merge map contains a cycle through class {src}")
                seen.add(cur)
                cur = self.merge_map[cur]

    def resolved_merge(self, src: int) -> int:
        cur = src
        while cur in self.merge_map:
            cur = self.merge_map[cur]
        return cur


def compute_statistics(manifest: DatasetManifest) -> DatasetStatistics:
    """Exact dataset counts; unreadable masks are reported and leave the
    statistics marked partial."""
    bg = manifest.ontology.background_id
    image_counts: Counter[int] = Counter()
    split_counts: dict[int, list[int]] = {c: [0, 0] for c in range(manifest.ontology.num_classes)}
    num_masks = 0
    widths, heights = [], []
    dishes = set()
    errors = []
    for rec in manifest.records:
        try:
            mask = load_mask(rec.mask_path, manifest.ontology.num_classes)
        except DataError as e:
            errors.append(str(e))
            continue
        present = sorted(mask.classes_present(bg))
        num_masks += len(present)
        for cid in present:
            image_counts[cid] += 1
            if rec.split_tag == "train":
                split_counts[cid][0] += 1
            elif rec.split_tag == "test":
                split_counts[cid][1] += 1
        widths.append(mask.width)
        heights.append(mask.height)
        dishes.add(rec.dish_id)
    n = len(widths)
    return DatasetStatistics(
        num_images=len(manifest.records),
        num_masks=num_masks,
        per_class_image_counts=dict(sorted(image_counts.items())),
        per_class_split_counts={c: (t, e) for c, (t, e) in sorted(split_counts.items())},
        mean_image_width=sum(widths) / n if n else 0.0,
        mean_image_height=sum(heights) / n if n else 0.0,
        num_dishes=len(dishes),
        num_classes=manifest.ontology.num_classes,
        partial=bool(errors),
        errors=tuple(errors),
    )


def plan_delete_rare(stats: DatasetStatistics, min_images: int = 5) -> RefinementPlan:
    """Plan deletion of ingredient classes appearing in fewer than
    min_images images (class 0 never qualifies)."""
    rare = {
        cid
        for cid in range(1, stats.num_classes)
        if stats.per_class_image_counts.get(cid, 0) < min_images
    }
    return RefinementPlan(delete_set=frozenset(rare))


def _translate(plan_id: int, lineage: dict[int, int | None], background: int) -> int:
    """Map a plan's original-space class id into the manifest's current ids.
    Deleted classes resolve to background (their pixels already went there)."""
    if plan_id not in lineage:
        raise DataError(f"refinement plan references unknown class {plan_id}")
    cur = lineage[plan_id]
    return background if cur is None else cur


def apply_refinement(
    manifest: DatasetManifest,
    plan: RefinementPlan,
    out_mask_dir: str | os.PathLike,
) -> DatasetManifest:
    """Apply a refinement plan, rewriting masks into out_mask_dir.

    Order: relabel fixes, merges, deletions (to background), then id
    re-densification. The returned manifest's source_class_map carries the
    cumulative original->current id table, which makes re-applying an
    already-applied plan a no-op.
    """
    bg = manifest.ontology.background_id
    lineage = dict(manifest.source_class_map)
    C = manifest.ontology.num_classes

    # Plan ids, translated into the current ontology's id space.
    fixes: dict[str, dict[int, int]] = {}
    for mask_path, old, new in plan.relabel_fixes:
        cur_old = _translate(old, lineage, bg)
        cur_new = _translate(new, lineage, bg)
        fixes.setdefault(mask_path, {})[cur_old] = cur_new
    merge_now = {}
    for src in plan.merge_map:
        cur_src = _translate(src, lineage, bg)
        cur_dst = _translate(plan.resolved_merge(src), lineage, bg)
        if cur_src != cur_dst and cur_src != bg:
            merge_now[cur_src] = cur_dst
    delete_now = {
        d for d in (_translate(i, lineage, bg) for i in plan.delete_set) if d != bg
    }
    if delete_now & set(merge_now.values()):
        raise DataError("refinement plan deletes a class that is also a merge target")

    # current id -> post-merge/delete id, then densify survivors
    step = {}
    for cid in range(C):
        t = merge_now.get(cid, cid)
        step[cid] = bg if t in delete_now else t
    survivors = sorted(set(step.values()))
    dense = {old: new for new, old in enumerate(survivors)}
    full_map = {cid: dense[step[cid]] for cid in range(C)}

    identity = all(full_map[c] == c for c in range(C))
    os.makedirs(out_mask_dir, exist_ok=True)

    new_records = []
    for rec in manifest.records:
        mask = load_mask(rec.mask_path, C)
        per_rec = dict(full_map)
        for old, new in fixes.get(rec.mask_path, {}).items():
            per_rec[old] = full_map[new]
        out_path = os.path.join(str(out_mask_dir), os.path.basename(rec.mask_path))
        remapped = remap_labels(mask, per_rec)
        save_mask(remapped, out_path)
        new_ids = frozenset(
            per_rec[i] for i in rec.ingredient_ids if per_rec[i] != bg
        ) | (remapped.classes_present(bg))
        new_records.append(replace(rec, mask_path=out_path, ingredient_ids=frozenset(new_ids)))

    new_classes = tuple(
        (dense[old], manifest.ontology.class_name(old)) for old in survivors
    )
    old_c2s = manifest.ontology.class_to_super
    new_c2s = {dense[old]: old_c2s[old] for old in survivors if old in old_c2s}
    new_ontology = CategoryOntology(
        classes=new_classes,
        super_classes=manifest.ontology.super_classes,
        class_to_super=new_c2s,
        background_id=bg,
    )
    new_lineage: dict[int, int | None] = {}
    for orig, cur in lineage.items():
        if cur is None:
            new_lineage[orig] = None
        else:
            # a non-background class whose pixels end up as background was
            # deleted (directly or via a merge into a deleted class)
            new_lineage[orig] = None if (cur != bg and step[cur] == bg) else full_map[cur]
    if identity and not fixes:
        # pure no-op: keep records byte-identical apart from rewritten paths
        pass
    return DatasetManifest(
        ontology=new_ontology,
        records=tuple(new_records),
        name=manifest.name,
        source_class_map=new_lineage,
    )


def _round_half_up(x: float) -> int:
    return int(x + 0.5)


def split_random(manifest: DatasetManifest, ratio: float = 0.7, seed: int = 0) -> DatasetManifest:
    """Shuffle records and assign round_half_up(ratio * N) of them to train."""
    if not (0.0 <= ratio <= 1.0):
        raise DataError(f"split ratio must be in [0,1], got {ratio}")
    n = len(manifest.records)
    n_train = _round_half_up(ratio * n)
    order = list(range(n))
    random.Random(seed).shuffle(order)
    train_idx = set(order[:n_train])
    records = [
        replace(r, split_tag="train" if i in train_idx else "test")
        for i, r in enumerate(manifest.records)
    ]
    return manifest.with_records(records)


def split_stratified_by_dish(
    manifest: DatasetManifest, fraction: float = 0.5, seed: int = 0
) -> DatasetManifest:
    """Per-dish stratified split with largest-remainder rounding.

    Each dish contributes floor(fraction*n) records to train, and the
    remaining global quota (round_half_up(fraction*N) - sum of floors) is
    handed out by descending fractional remainder, ties broken by dish id.
    """
    if not (0.0 <= fraction <= 1.0):
        raise DataError(f"split fraction must be in [0,1], got {fraction}")
    by_dish: dict[int, list[int]] = {}
    for i, r in enumerate(manifest.records):
        by_dish.setdefault(r.dish_id, []).append(i)
    n = len(manifest.records)
    target = _round_half_up(fraction * n)
    quotas = {d: fraction * len(idx) for d, idx in by_dish.items()}
    base = {d: int(q) for d, q in quotas.items()}
    leftover = target - sum(base.values())
    order = sorted(by_dish, key=lambda d: (-(quotas[d] - base[d]), d))
    take = dict(base)
    for d in order[: max(leftover, 0)]:
        if take[d] < len(by_dish[d]):
            take[d] += 1
    rng = random.Random(seed)
    train_idx = set()
    for d in sorted(by_dish):
        idx = list(by_dish[d])
        rng.shuffle(idx)
        train_idx.update(idx[: take[d]])
    records = [
        replace(r, split_tag="train" if i in train_idx else "test")
        for i, r in enumerate(manifest.records)
    ]
    return manifest.with_records(records)


def class_distribution_report(
    stats: DatasetStatistics, class_names: list[str] | None = None
) -> list[dict]:
    """Long-tail table: classes sorted by descending image count with share
    and cumulative share columns."""
    items = sorted(stats.per_class_image_counts.items(), key=lambda kv: (-kv[1], kv[0]))
    total = sum(c for _, c in items)
    rows = []
    cum = 0
    for cid, count in items:
        cum += count
        rows.append(
            {
                "class_id": cid,
                "class_name": class_names[cid] if class_names else str(cid),
                "image_count": count,
                "share": count / total if total else 0.0,
                "cumulative_share": cum / total if total else 0.0,
            }
        )
    return rows
