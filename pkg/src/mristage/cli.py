"""Command-line surface: scan, audit, train, evaluate.

Exit codes: 0 success, 2 input error, 3 leakage found, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path

import numpy as np

from . import evaluation, imaging, manifest as manifest_mod, model as model_mod, training
from .config import RunConfig

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_LEAKAGE = 3
EXIT_NUMERIC_FAILURE = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mristage", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_scan = sub.add_parser("scan", help="scan dataset trees and write a split manifest CSV")
    p_scan.add_argument("--augmented-root", required=True)
    p_scan.add_argument("--original-root", required=True)
    p_scan.add_argument("--val-fraction", type=float, default=0.5)
    p_scan.add_argument("--shared-eval", action="store_true")
    p_scan.add_argument("--seed", type=int, default=0)
    p_scan.add_argument("--out", required=True, help="output manifest CSV path")

    p_audit = sub.add_parser("audit", help="audit a manifest for train/eval leakage")
    p_audit.add_argument("--manifest", required=True)
    p_audit.add_argument("--json-out", default=None)

    p_train = sub.add_parser("train", help="train the classifier into a run directory")
    p_train.add_argument("--config", required=True, help="JSON run config")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--backbone", choices=["pretrained_xception", "stub"], default=None)
    p_train.add_argument("--output-dir", default=None)
    p_train.add_argument("--paper-faithful-shuffle", action="store_true", default=None)
    p_train.add_argument("--deterministic-timing", action="store_true", default=None)

    p_eval = sub.add_parser("evaluate", help="evaluate the best checkpoint of a run directory")
    p_eval.add_argument("--run-dir", required=True)

    return parser


def cmd_scan(args) -> int:
    try:
        augmented = manifest_mod.scan_dataset(Path(args.augmented_root), "augmented")
        original = manifest_mod.scan_dataset(Path(args.original_root), "original")
        merged = manifest_mod.assign_paper_splits(
            augmented,
            original,
            val_fraction=args.val_fraction,
            seed=args.seed,
            shared_eval=args.shared_eval,
        )
    except (manifest_mod.DatasetError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    manifest_mod.save_manifest(merged, Path(args.out))
    print(f"wrote {len(merged.records)} records ({len(merged.classes)} classes) to {args.out}")
    return EXIT_OK


def cmd_audit(args) -> int:
    try:
        m = manifest_mod.load_manifest(Path(args.manifest))
        report = manifest_mod.audit_leakage(m)
    except (manifest_mod.DatasetError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    payload = {
        "collision_count": report.collision_count,
        "exact_collisions": [[str(a), str(b)] for a, b in report.exact_collisions],
    }
    if args.json_out:
        Path(args.json_out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.json_out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    print(f"leakage collisions: {report.collision_count}")
    for train_path, eval_path in report.exact_collisions:
        print(f"  train {train_path} == eval {eval_path}")
    return EXIT_LEAKAGE if report.collision_count else EXIT_OK


def _make_backbone(config: RunConfig):
    if config.backbone == "stub":
        return model_mod.stub_backbone(seed=config.seed, embedding_dim=config.stub_embedding_dim)
    return model_mod.pretrained_xception_backbone(input_size=config.input_size)


def _split_records(m, split):
    return [r for r in m.records if r.split == split]


def _train_from_config(config: RunConfig, run_dir: Path) -> int:
    augmented = manifest_mod.scan_dataset(Path(config.augmented_root), "augmented")
    original = manifest_mod.scan_dataset(Path(config.original_root), "original")
    merged = manifest_mod.assign_paper_splits(
        augmented,
        original,
        val_fraction=config.val_fraction,
        seed=config.seed,
        shared_eval=config.shared_eval,
    )
    run_dir.mkdir(parents=True, exist_ok=True)
    config.save_resolved(run_dir / "config.resolved.json")
    manifest_mod.save_manifest(merged, run_dir / "manifest.csv")

    k = len(merged.classes)
    train_records = _split_records(merged, "train")
    val_records = _split_records(merged, "val") or _split_records(merged, "test")

    policy = None
    if config.augment:
        policy = imaging.AugmentationPolicy(
            horizontal_flip=config.horizontal_flip,
            rotation_degrees=config.rotation_degrees,
            width_shift=config.width_shift,
            height_shift=config.height_shift,
            zoom=config.zoom,
            seed=config.seed,
        )

    shuffle_train = not config.paper_faithful_shuffle

    def train_stream(epoch):
        return imaging.make_batches(
            train_records,
            k,
            batch_size=config.batch_size,
            shuffle=shuffle_train,
            seed=config.seed,
            epoch=epoch,
            policy=policy,
            input_size=config.input_size,
        )

    def val_stream(epoch):
        return imaging.make_batches(
            val_records,
            k,
            batch_size=config.batch_size,
            shuffle=False,
            input_size=config.input_size,
        )

    backbone = _make_backbone(config)
    graph = model_mod.build_model(
        backbone,
        model_mod.HeadSpec(
            dropout1=config.dropout1,
            dense_units=config.dense_units,
            dropout2=config.dropout2,
            num_classes=k,
        ),
        seed=config.seed,
    )
    optimizer = training.OptimizerSpec(
        kind=config.optimizer,
        learning_rate=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        epsilon=config.epsilon,
    )
    train_config = training.TrainConfig(
        epochs=config.epochs,
        patience=config.patience,
        monitor=config.monitor,
        restore_best=config.restore_best,
        seed=config.seed,
        checkpoint_dir=run_dir / "checkpoints",
        deterministic_timing=config.deterministic_timing,
    )
    history, best = training.train(graph, train_stream, val_stream, optimizer, train_config)
    training.save_history(history, run_dir / "history.csv")
    print(f"trained {len(history)} epochs; best checkpoint {best.path.name} (epoch {best.epoch})")
    return EXIT_OK


def cmd_train(args) -> int:
    overrides = {
        "seed": args.seed,
        "backbone": args.backbone,
        "output_dir": args.output_dir,
        "paper_faithful_shuffle": args.paper_faithful_shuffle,
        "deterministic_timing": args.deterministic_timing,
    }
    try:
        config = RunConfig.from_file(Path(args.config), overrides)
        run_dir = Path(config.output_dir)
        return _train_from_config(config, run_dir)
    except training.TrainingDivergedError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC_FAILURE
    except (manifest_mod.DatasetError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


def cmd_evaluate(args) -> int:
    run_dir = Path(args.run_dir)
    try:
        config = RunConfig.from_file(run_dir / "config.resolved.json")
        merged = manifest_mod.load_manifest(run_dir / "manifest.csv")
        checkpoints = sorted((run_dir / "checkpoints").glob("best_*.npz"))
        if not checkpoints:
            raise FileNotFoundError(f"no checkpoint under {run_dir / 'checkpoints'}")
        backbone = _make_backbone(config)
        graph, _meta = model_mod.load_checkpoint(checkpoints[-1], backbone)

        test_records = _split_records(merged, "test")
        if not test_records:
            raise manifest_mod.DatasetError("manifest has no test records")
        stream = imaging.make_batches(
            test_records,
            len(merged.classes),
            batch_size=config.batch_size,
            shuffle=False,
            input_size=config.input_size,
        )
        report = evaluation.evaluate(graph, stream, merged.classes)
    except (manifest_mod.DatasetError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR

    evaluation.save_report_json(report, run_dir / "report.json")
    text = evaluation.render_report(report)
    (run_dir / "report.txt").write_text(text, encoding="utf-8")
    history_path = run_dir / "history.csv"
    if history_path.exists():
        shutil.copyfile(history_path, run_dir / "curves.csv")
    print(text, end="")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {
        "scan": cmd_scan,
        "audit": cmd_audit,
        "train": cmd_train,
        "evaluate": cmd_evaluate,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
