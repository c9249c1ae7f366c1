"""Command-line harness: stats | refine | split | pretrain | train | eval | report.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error. All
outputs land under the chosen output directory; every model run writes a
run manifest (config hash, seed, input content hashes).
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys

from . import DataError, UsageError, __version__
from .align import AlignConfig, export_encoder, pretrain
from .config import load_config, write_run_manifest
from .dataset_ops import (
    RefinementPlan,
    apply_refinement,
    class_distribution_report,
    compute_statistics,
    plan_delete_rare,
    split_random,
    split_stratified_by_dish,
)
from .masks import load_manifest, save_manifest
from .metrics import report_to_dict, summarize, write_report_csv
from .recipes import load_corpus
from .reporting import (
    collect_run_row,
    plot_comparison,
    plot_distribution,
    plot_per_class_iou,
    write_class_counts_csv,
    write_comparison_table,
    write_distribution_csv,
    write_stats_csv,
)
from .segmodel import SegmenterConfig, parameter_count
from .segtrain import build_and_train, evaluate, evaluate_pred_dir, load_checkpoint
from .toydata import make_pair_corpus

DATA_ROOT_ENV = "INGRSEG_DATA_ROOT"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _resolve(path: str | None) -> str | None:
    if path is None:
        return None
    root = os.environ.get(DATA_ROOT_ENV)
    if root and not os.path.isabs(path) and not os.path.exists(path):
        candidate = os.path.join(root, path)
        if os.path.exists(candidate):
            return candidate
    return path


def _manifest_path(args, cfg) -> str:
    path = args.manifest or cfg["dataset"]["manifest"]
    if not path:
        raise UsageError("no manifest given (--manifest or dataset.manifest)")
    return _resolve(path)


def _load_plan(path: str) -> RefinementPlan:
    try:
        with open(path) as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise DataError(f"refinement plan not found: {path}") from None
    except json.JSONDecodeError as e:
        raise DataError(f"refinement plan {path} is not valid JSON: {e}") from None
    return RefinementPlan(
        delete_set=frozenset(doc.get("delete", [])),
        merge_map={int(a): int(b) for a, b in doc.get("merge", [])},
        relabel_fixes=tuple((str(p), int(a), int(b)) for p, a, b in doc.get("relabel", [])),
    )


def cmd_stats(args) -> int:
    cfg = load_config(args.config, args.set)
    manifest = load_manifest(_manifest_path(args, cfg))
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    stats = compute_statistics(manifest)
    names = [n for _, n in manifest.ontology.classes]
    write_stats_csv(stats, os.path.join(out, "stats.csv"))
    write_class_counts_csv(stats, names, os.path.join(out, "class_counts.csv"))
    rows = class_distribution_report(stats, names)
    write_distribution_csv(rows, os.path.join(out, "distribution.csv"))
    if args.plot:
        plot_distribution(rows, os.path.join(out, "distribution.png"))
    for err in stats.errors:
        print(f"warning: {err}", file=sys.stderr)
    print(f"stats written to {out} ({stats.num_images} images, {stats.num_masks} masks)")
    return 0


def cmd_refine(args) -> int:
    cfg = load_config(args.config, args.set)
    manifest = load_manifest(_manifest_path(args, cfg))
    if args.plan:
        plan = _load_plan(args.plan)
    elif args.delete_rare is not None:
        plan = plan_delete_rare(compute_statistics(manifest), args.delete_rare)
    else:
        raise UsageError("refine needs --plan or --delete-rare")
    out = args.out or "refined"
    os.makedirs(out, exist_ok=True)
    refined = apply_refinement(manifest, plan, os.path.join(out, "masks"))
    save_manifest(refined, os.path.join(out, "manifest.json"))
    with open(os.path.join(out, "id_map.json"), "w") as f:
        json.dump(
            {str(k): v for k, v in sorted(refined.source_class_map.items())},
            f,
            indent=1,
            sort_keys=True,
        )
        f.write("\n")
    print(
        f"refined manifest written to {out} "
        f"({manifest.ontology.num_classes} -> {refined.ontology.num_classes} classes)"
    )
    return 0


def cmd_split(args) -> int:
    cfg = load_config(args.config, args.set)
    manifest = load_manifest(_manifest_path(args, cfg))
    seed = args.seed if args.seed is not None else cfg["run"]["seed"]
    mode = args.mode or cfg["dataset"]["split_mode"]
    if mode == "random":
        ratio = args.ratio if args.ratio is not None else cfg["dataset"]["split_ratio"]
        result = split_random(manifest, ratio=ratio, seed=seed)
    elif mode == "dish":
        frac = args.ratio if args.ratio is not None else cfg["dataset"]["split_fraction"]
        result = split_stratified_by_dish(manifest, fraction=frac, seed=seed)
    else:
        raise UsageError(f"unknown split mode {mode!r} (expected random|dish)")
    out = args.out or "manifest.split.json"
    save_manifest(result, out)
    n_train = len(result.train_records())
    print(f"split written to {out} ({n_train} train / {len(result.records) - n_train} test)")
    return 0


def _pretrain_dataset(cfg) -> list:
    acfg = cfg["align"]
    if acfg.get("synthetic_n"):
        pairs, _ = make_pair_corpus(int(acfg["synthetic_n"]), seed=cfg["run"]["seed"])
        return pairs
    corpus_path = _resolve(acfg.get("corpus"))
    manifest_path = _resolve(acfg.get("manifest"))
    if not corpus_path or not manifest_path:
        raise UsageError(
            "pretrain needs align.synthetic_n or both align.corpus and align.manifest"
        )
    recipes = load_corpus(corpus_path)
    manifest = load_manifest(manifest_path)
    if len(recipes) != len(manifest.records):
        raise DataError(
            f"corpus has {len(recipes)} recipes but manifest has "
            f"{len(manifest.records)} records; they pair by position"
        )
    from .segtrain import load_image

    return [(load_image(r.image_path), rec) for r, rec in zip(manifest.records, recipes)]


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.seed is not None:
        cfg["run"]["seed"] = args.seed
    out = args.out or cfg["run"]["out"]
    os.makedirs(out, exist_ok=True)
    acfg = cfg["align"]
    config = AlignConfig(
        alpha=acfg["alpha"],
        embed_dim=acfg["embed_dim"],
        num_semantic_labels=acfg["num_semantic_labels"],
        lambda_semantic=acfg["lambda_semantic"],
        text_encoder_kind=acfg["text_encoder_kind"],
        vision_encoder_kind=acfg["vision_encoder_kind"],
        negative_pair_probability=acfg["negative_pair_probability"],
        stage1_steps=int(acfg["stage1_steps"]),
        stage2_steps=int(acfg["stage2_steps"]),
        batch_size=int(acfg["batch_size"]),
        lr=float(acfg["lr"]),
        image_size=int(acfg["image_size"]),
        vocab_size=int(acfg["vocab_size"]),
        seed=int(cfg["run"]["seed"]),
    )
    dataset = _pretrain_dataset(cfg)
    model, log = pretrain(dataset, config)
    archive_path = os.path.join(out, "encoders.arc")
    export_encoder(model, archive_path)
    with open(os.path.join(out, "pretrain_log.json"), "w") as f:
        json.dump(log, f, indent=1)
        f.write("\n")
    inputs = [p for p in (_resolve(acfg.get("corpus")), _resolve(acfg.get("manifest"))) if p]
    write_run_manifest(out, cfg, inputs)
    print(f"encoder archive written to {archive_path} ({len(log)} steps)")
    return 0


def _segmenter_config(cfg) -> SegmenterConfig:
    s = cfg["segmenter"]
    return SegmenterConfig(
        encoder_kind=s["encoder_kind"],
        decoder_kind=s["decoder_kind"],
        num_classes=int(s["num_classes"]),
        crop_size=int(s["crop_size"]),
        base_lr=float(s["base_lr"]),
        max_iters=int(s["max_iters"]),
        batch_size=int(s["batch_size"]),
        momentum=float(s["momentum"]),
        weight_decay=float(s["weight_decay"]),
        poly_power=float(s["poly_power"]),
        init_source=_resolve(s["init_source"]) or "random",
        seed=int(cfg["run"]["seed"]),
    )


def _split_if_needed(manifest, cfg):
    if all(r.split_tag == "unassigned" for r in manifest.records):
        if cfg["dataset"]["split_mode"] == "dish":
            return split_stratified_by_dish(
                manifest, cfg["dataset"]["split_fraction"], seed=cfg["run"]["seed"]
            )
        return split_random(manifest, cfg["dataset"]["split_ratio"], seed=cfg["run"]["seed"])
    return manifest


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.seed is not None:
        cfg["run"]["seed"] = args.seed
    out = args.out or cfg["run"]["out"]
    os.makedirs(out, exist_ok=True)
    manifest_path = _manifest_path(args, cfg)
    manifest = _split_if_needed(load_manifest(manifest_path), cfg)
    sconfig = _segmenter_config(cfg)
    checkpoint = os.path.join(out, "checkpoint.arc")
    model, state = build_and_train(manifest, sconfig, checkpoint_path=checkpoint)
    with open(os.path.join(out, "train_log.json"), "w") as f:
        json.dump(
            {
                "loss": state.loss_history,
                "lr": state.lr_history,
                "checksums": state.checksums,
                "param_count": parameter_count(model),
            },
            f,
            indent=1,
        )
        f.write("\n")
    inputs = [manifest_path]
    if sconfig.init_source != "random":
        inputs.append(sconfig.init_source)
    write_run_manifest(out, cfg, inputs)
    print(f"checkpoint written to {checkpoint} (final loss {state.loss_history[-1]:.4f})")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.seed is not None:
        cfg["run"]["seed"] = args.seed
    out = args.out or cfg["run"]["out"]
    os.makedirs(out, exist_ok=True)
    manifest_path = _manifest_path(args, cfg)
    manifest = _split_if_needed(load_manifest(manifest_path), cfg)
    records = manifest.test_records() or manifest.records
    num_classes = manifest.ontology.num_classes
    inputs = [manifest_path]
    param_count = None
    if args.pred_dir:
        preds = {
            os.path.basename(p): p
            for p in glob.glob(os.path.join(args.pred_dir, "*.png"))
        }
        cm = evaluate_pred_dir(preds, list(records), num_classes)
    else:
        if not args.checkpoint:
            raise UsageError("eval needs --checkpoint or --pred-dir")
        sconfig = _segmenter_config(cfg)
        sconfig.num_classes = num_classes
        model = load_checkpoint(args.checkpoint, sconfig)
        param_count = parameter_count(model)
        cm = evaluate(model, list(records), num_classes)
        inputs.append(args.checkpoint)
    report = summarize(cm, include_background=bool(cfg["eval"]["include_background"]))
    names = [n for _, n in manifest.ontology.classes]
    write_report_csv(report, names, os.path.join(out, "report.csv"))
    doc = report_to_dict(report)
    if param_count is not None:
        doc["param_count"] = param_count
    with open(os.path.join(out, "metrics.json"), "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")
    if args.plot:
        plot_per_class_iou(doc["per_class_iou"], names, os.path.join(out, "per_class_iou.png"))
    write_run_manifest(out, cfg, inputs)
    miou = doc["miou"]
    print(f"eval report written to {out} (mIoU={'nan' if miou is None else f'{miou:.4f}'})")
    return 0


def cmd_report(args) -> int:
    if not args.run_dirs:
        raise UsageError("report needs at least one run directory")
    rows = [collect_run_row(d) for d in args.run_dirs]
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    write_comparison_table(rows, os.path.join(out, "comparison.csv"))
    plot_comparison(rows, os.path.join(out, "comparison.png"))
    print(f"comparison table for {len(rows)} run(s) written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ingrseg", description=__doc__)
    p.add_argument("--version", action="version", version=f"ingrseg {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML experiment config")
        sp.add_argument("--seed", type=int, help="override run.seed")
        sp.add_argument("--out", help="output directory / file")
        sp.add_argument("--manifest", help="dataset manifest path")
        sp.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="section.key=value",
            help="override a config key",
        )

    sp = sub.add_parser("stats", help="dataset statistics and long-tail distribution")
    common(sp)
    sp.add_argument("--plot", action="store_true", help="also render distribution.png")
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("refine", help="apply a refinement plan (fix/merge/delete)")
    common(sp)
    sp.add_argument("--plan", help="refinement plan JSON")
    sp.add_argument("--delete-rare", type=int, help="plan deletion of classes in < N images")
    sp.set_defaults(func=cmd_refine)

    sp = sub.add_parser("split", help="assign train/test split tags")
    common(sp)
    sp.add_argument("--mode", choices=["random", "dish"], help="split strategy")
    sp.add_argument("--ratio", type=float, help="train fraction")
    sp.set_defaults(func=cmd_split)

    sp = sub.add_parser("pretrain", help="recipe-aligned encoder pretraining")
    common(sp)
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("train", help="train a segmenter")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint or a prediction directory")
    common(sp)
    sp.add_argument("--checkpoint", help="segmenter checkpoint archive")
    sp.add_argument("--pred-dir", help="directory of predicted masks (by gt basename)")
    sp.add_argument("--plot", action="store_true", help="also render per_class_iou.png")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("report", help="side-by-side comparison of eval runs")
    sp.add_argument("run_dirs", nargs="*", help="completed eval run directories")
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(func=cmd_report)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # pragma: no cover - defensive
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
