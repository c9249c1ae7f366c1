import math

import numpy as np
import pytest

from conftest import random_labelmap
from ingrseg import DataError
from ingrseg.masks import LabelMap
from ingrseg.metrics import (
    ConfusionMatrix,
    confusion_from_pair,
    merge,
    report_to_dict,
    summarize,
    write_report_csv,
)


def oracle_metrics(pred, gt, num_classes, ignore=255):
    """Independent per-class set-arithmetic oracle (pure python).

    pred/gt are dicts mapping (row, col) -> class value over the same keys.
    """
    valid = [p for p in gt if gt[p] != ignore]
    per_iou, per_acc = [], []
    correct = sum(1 for p in valid if gt[p] == pred[p])
    for k in range(num_classes):
        gset = {p for p in valid if gt[p] == k}
        pset = {p for p in valid if pred[p] == k}
        tp = len(gset & pset)
        union = len(gset | pset)
        per_iou.append(tp / union if union else math.nan)
        per_acc.append(tp / len(gset) if gset else math.nan)
    defined_iou = [x for x in per_iou if not math.isnan(x)]
    defined_acc = [x for x in per_acc if not math.isnan(x)]
    return {
        "per_iou": per_iou,
        "per_acc": per_acc,
        "miou": sum(defined_iou) / len(defined_iou) if defined_iou else math.nan,
        "macc": sum(defined_acc) / len(defined_acc) if defined_acc else math.nan,
        "aacc": correct / len(valid) if valid else math.nan,
    }


def test_identity_prediction_is_diagonal():
    rng = np.random.default_rng(0)
    m = random_labelmap(rng, 8, 8, 4)
    cm = confusion_from_pair(m, m, 4)
    assert np.array_equal(cm.counts, np.diag(np.diag(cm.counts)))
    rep = summarize(cm)
    for k in rep.present_classes:
        assert rep.per_class_iou[k] == 1.0


def test_worked_2x2_example():
    gt = LabelMap(np.array([[0, 0], [1, 1]], dtype=np.uint8))
    pred = LabelMap(np.array([[0, 1], [1, 1]], dtype=np.uint8))
    rep = summarize(confusion_from_pair(pred, gt, 2))
    assert rep.per_class_iou.tolist() == [1 / 2, 2 / 3]
    assert rep.per_class_acc.tolist() == [1 / 2, 1.0]
    assert rep.miou == (1 / 2 + 2 / 3) / 2  # = 7/12
    assert abs(rep.miou - 7 / 12) < 1e-15
    assert rep.macc == 3 / 4
    assert rep.aacc == 3 / 4


def test_all_ignore_is_undefined_safe():
    gt = LabelMap(np.full((4, 4), 255, dtype=np.uint8))
    pred = LabelMap(np.zeros((4, 4), dtype=np.uint8))
    cm = confusion_from_pair(pred, gt, 3)
    assert cm.total == 0
    rep = summarize(cm)
    assert not rep.defined
    assert math.isnan(rep.miou) and math.isnan(rep.macc) and math.isnan(rep.aacc)


def test_dimension_mismatch():
    a = LabelMap(np.zeros((2, 2), dtype=np.uint8))
    b = LabelMap(np.zeros((2, 3), dtype=np.uint8))
    with pytest.raises(DataError, match="mismatch"):
        confusion_from_pair(a, b, 2)


def test_merge_monoid_laws():
    rng = np.random.default_rng(1)
    mats = [
        ConfusionMatrix(rng.integers(0, 20, size=(3, 3)).astype(np.int64)) for _ in range(3)
    ]
    a, b, c = mats
    zero = ConfusionMatrix.zero(3)
    assert np.array_equal(merge(a, zero).counts, a.counts)
    assert np.array_equal(merge(a, b).counts, merge(b, a).counts)
    assert np.array_equal(merge(merge(a, b), c).counts, merge(a, merge(b, c)).counts)
    with pytest.raises(DataError):
        merge(a, ConfusionMatrix.zero(4))


def test_dataset_merge_equals_sequential():
    rng = np.random.default_rng(2)
    pairs = [
        (random_labelmap(rng, 6, 6, 4), random_labelmap(rng, 6, 6, 4)) for _ in range(10)
    ]
    per_image = [confusion_from_pair(p, g, 4) for p, g in pairs]
    merged = per_image[0]
    for cm in per_image[1:]:
        merged = merge(merged, cm)
    seq = np.zeros((4, 4), dtype=np.int64)
    for p, g in pairs:
        seq += confusion_from_pair(p, g, 4).counts
    assert np.array_equal(merged.counts, seq)


def test_oracle_equivalence_sample():
    rng = np.random.default_rng(3)
    for _ in range(50):
        C = int(rng.integers(2, 7))
        h, w = int(rng.integers(1, 17)), int(rng.integers(1, 17))
        gt = random_labelmap(rng, h, w, C, ignore_fraction=0.2)
        pred = random_labelmap(rng, h, w, C)
        rep = summarize(confusion_from_pair(pred, gt, C))
        ora = oracle_metrics(pixel_dict(pred), pixel_dict(gt), C)
        _assert_equal_reports(rep, ora, C)


def pixel_dict(m):
    return {(r, c): int(m.data[r, c]) for r in range(m.height) for c in range(m.width)}


def _assert_equal_reports(rep, ora, C):
    for k in range(C):
        for got, want in ((rep.per_class_iou[k], ora["per_iou"][k]),
                          (rep.per_class_acc[k], ora["per_acc"][k])):
            if math.isnan(want):
                assert math.isnan(got)
            else:
                assert got == want
    for name in ("miou", "macc", "aacc"):
        want = ora[name]
        got = getattr(rep, name)
        if math.isnan(want):
            assert math.isnan(got)
        else:
            assert got == want


def test_iou_never_exceeds_acc():
    rng = np.random.default_rng(4)
    for _ in range(50):
        cm = ConfusionMatrix(rng.integers(0, 30, size=(5, 5)).astype(np.int64))
        rep = summarize(cm)
        for k in range(5):
            iou, acc = rep.per_class_iou[k], rep.per_class_acc[k]
            if not math.isnan(iou) and not math.isnan(acc):
                assert iou <= acc + 1e-15
                assert 0.0 <= iou <= 1.0 and 0.0 <= acc <= 1.0
        if rep.defined:
            assert 0.0 <= rep.aacc <= 1.0


def test_exclude_background_flag():
    counts = np.array([[10, 0], [0, 0]], dtype=np.int64)
    rep_incl = summarize(ConfusionMatrix(counts))
    rep_excl = summarize(ConfusionMatrix(counts), include_background=False)
    assert rep_incl.miou == 1.0
    assert math.isnan(rep_excl.miou)  # only background is present


def test_report_csv_fixed_order(tmp_path):
    gt = LabelMap(np.array([[0, 1]], dtype=np.uint8))
    rep = summarize(confusion_from_pair(gt, gt, 2))
    out = tmp_path / "report.csv"
    write_report_csv(rep, ["background", "rice"], out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "class_id,class_name,iou,acc,aacc"
    assert lines[1].startswith("0,background,1.000000,1.000000")
    assert lines[-1].startswith("-1,summary,1.000000,1.000000,1.000000")
    d = report_to_dict(rep)
    assert d["miou"] == 1.0 and d["present_classes"] == [0, 1]
