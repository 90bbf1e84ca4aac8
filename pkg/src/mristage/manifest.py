"""Dataset manifests: directory scanning, split assignment, leakage auditing.

Dataset layout contract: ``<root>/<ClassName>/<image files>``. Manifests are
persisted as CSV with header ``path,label,split,source,content_hash`` where
the hash is rendered as 16 hex digits.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from collections import defaultdict
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png"}

SPLITS = ("train", "val", "test", "unassigned")
SOURCES = ("augmented", "original")

DEFAULT_CLASS_NAMES = (
    "MildDemented",
    "ModerateDemented",
    "NonDemented",
    "VeryMildDemented",
)


class DatasetError(ValueError):
    """Raised for unusable dataset inputs (missing root, empty tree, ...)."""


@dataclass(frozen=True)
class ClassLabel:
    index: int
    name: str

    def __post_init__(self):
        if self.index < 0:
            raise ValueError(f"class index must be >= 0, got {self.index}")


@dataclass(frozen=True)
class SampleRecord:
    path: Path
    label: ClassLabel
    split: str
    source: str
    content_hash: int

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[SampleRecord, ...]
    classes: tuple[ClassLabel, ...]
    root: Path

    def __post_init__(self):
        names = {c.name for c in self.classes}
        for r in self.records:
            if r.label.name not in names:
                raise ValueError(f"record label {r.label.name!r} not in class roster")

    def class_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.classes)


@dataclass(frozen=True)
class LeakageReport:
    exact_collisions: tuple[tuple[Path, Path], ...]
    collision_count: int

    def __post_init__(self):
        if self.collision_count != len(self.exact_collisions):
            raise ValueError("collision_count does not match pair list length")


def content_hash(path: Path) -> int:
    """64-bit content hash of the file's bytes (blake2b, 8-byte digest)."""
    h = hashlib.blake2b(digest_size=8)
    h.update(Path(path).read_bytes())
    return int.from_bytes(h.digest(), "big")


def scan_dataset(root: Path, source: str) -> DatasetManifest:
    """Scan a class-per-directory image tree into a manifest.

    Immediate subdirectories of ``root`` become classes (lexicographic
    order); every image file under them becomes one record with
    split="unassigned". Non-image files are skipped with a warning.
    """
    root = Path(root)
    if source not in SOURCES:
        raise ValueError(f"unknown source {source!r}")
    if not root.is_dir():
        raise DatasetError(f"empty dataset: {root} is not a directory")

    class_dirs = sorted((d for d in root.iterdir() if d.is_dir()), key=lambda d: d.name)
    if not class_dirs:
        raise DatasetError(f"empty dataset: no class directories under {root}")

    classes = tuple(ClassLabel(i, d.name) for i, d in enumerate(class_dirs))
    records: list[SampleRecord] = []
    for label, class_dir in zip(classes, class_dirs):
        files = sorted(p for p in class_dir.iterdir() if p.is_file())
        images = []
        for p in files:
            if p.suffix.lower() in IMAGE_EXTENSIONS:
                images.append(p)
            else:
                log.warning("skipping non-image file %s", p)
        if not images:
            log.warning("class directory %s contains no images", class_dir)
        for p in images:
            records.append(
                SampleRecord(
                    path=p,
                    label=label,
                    split="unassigned",
                    source=source,
                    content_hash=content_hash(p),
                )
            )

    if not records:
        raise DatasetError(f"empty dataset: no image files under {root}")
    records.sort(key=lambda r: str(r.path))
    return DatasetManifest(records=tuple(records), classes=classes, root=root)


def _relabel(record: SampleRecord, roster: dict[str, ClassLabel]) -> SampleRecord:
    return replace(record, label=roster[record.label.name])


def assign_paper_splits(
    augmented: DatasetManifest,
    original: DatasetManifest,
    val_fraction: float = 0.5,
    seed: int = 0,
    shared_eval: bool = False,
) -> DatasetManifest:
    """Assign splits per the augmented-train / original-eval protocol.

    All augmented records go to train. Original records are partitioned
    val/test per class by seeded shuffling (or, with ``shared_eval``, every
    original record goes to both roles via split="test", with val served
    from the same split downstream).
    """
    if not 0 < val_fraction < 1:
        raise ValueError(f"val_fraction must be in (0,1), got {val_fraction}")
    if not augmented.records:
        raise DatasetError("empty dataset: augmented manifest has no records")
    if not original.records:
        raise DatasetError("empty dataset: original manifest has no records")
    aug_names = augmented.class_names()
    orig_names = original.class_names()
    if aug_names != orig_names:
        differing = sorted(set(aug_names) ^ set(orig_names))
        raise DatasetError(f"class-roster mismatch: {differing}")

    roster = {c.name: c for c in augmented.classes}
    merged: list[SampleRecord] = [
        replace(_relabel(r, roster), split="train") for r in augmented.records
    ]

    if shared_eval:
        merged.extend(replace(_relabel(r, roster), split="test") for r in original.records)
    else:
        rng = np.random.default_rng(seed)
        by_class: dict[str, list[SampleRecord]] = defaultdict(list)
        for r in original.records:
            by_class[r.label.name].append(r)
        for name in sorted(by_class):
            group = by_class[name]
            order = rng.permutation(len(group))
            n_val = int(len(group) * val_fraction)
            for rank, idx in enumerate(order):
                split = "val" if rank < n_val else "test"
                merged.append(replace(_relabel(group[idx], roster), split=split))

    merged.sort(key=lambda r: str(r.path))
    return DatasetManifest(records=tuple(merged), classes=augmented.classes, root=augmented.root)


def stratified_split(
    manifest: DatasetManifest,
    fractions: tuple[float, float, float],
    seed: int = 0,
) -> DatasetManifest:
    """Per-class proportional train/val/test assignment, seeded.

    Remainder samples after flooring the val/test allocations go to train,
    so per-class counts deviate from the exact fractions by less than one
    sample.
    """
    f_train, f_val, f_test = fractions
    if min(fractions) < 0:
        raise ValueError(f"fractions must be nonnegative, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")

    rng = np.random.default_rng(seed)
    by_class: dict[str, list[SampleRecord]] = defaultdict(list)
    for r in manifest.records:
        by_class[r.label.name].append(r)

    out: list[SampleRecord] = []
    for name in sorted(by_class):
        group = by_class[name]
        order = rng.permutation(len(group))
        n_val = int(len(group) * f_val)
        n_test = int(len(group) * f_test)
        for rank, idx in enumerate(order):
            if rank < n_val:
                split = "val"
            elif rank < n_val + n_test:
                split = "test"
            else:
                split = "train"
            out.append(replace(group[idx], split=split))

    out.sort(key=lambda r: str(r.path))
    return DatasetManifest(records=tuple(out), classes=manifest.classes, root=manifest.root)


def audit_leakage(manifest: DatasetManifest) -> LeakageReport:
    """Find byte-identical files shared between train and val/test.

    Hash collisions are confirmed by full byte comparison, so distinct-byte
    files never produce false positives.
    """
    if any(r.split == "unassigned" for r in manifest.records):
        raise DatasetError("run split assignment first: manifest has unassigned records")

    train_by_hash: dict[int, list[Path]] = defaultdict(list)
    eval_by_hash: dict[int, list[Path]] = defaultdict(list)
    for r in manifest.records:
        if r.split == "train":
            train_by_hash[r.content_hash].append(r.path)
        elif r.split in ("val", "test"):
            eval_by_hash[r.content_hash].append(r.path)

    pairs: list[tuple[Path, Path]] = []
    for h in sorted(set(train_by_hash) & set(eval_by_hash)):
        for tp in train_by_hash[h]:
            t_bytes = Path(tp).read_bytes()
            for ep in eval_by_hash[h]:
                if t_bytes == Path(ep).read_bytes():
                    pairs.append((tp, ep))
    pairs.sort(key=lambda p: (str(p[0]), str(p[1])))
    return LeakageReport(exact_collisions=tuple(pairs), collision_count=len(pairs))


def class_distribution(manifest: DatasetManifest, split: str) -> dict[ClassLabel, int]:
    """Per-class record counts within one split (zero-filled roster)."""
    counts = {c: 0 for c in manifest.classes}
    by_name = {c.name: c for c in manifest.classes}
    for r in manifest.records:
        if r.split == split:
            counts[by_name[r.label.name]] += 1
    return counts


def save_manifest(manifest: DatasetManifest, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "label", "split", "source", "content_hash"])
        for r in manifest.records:
            writer.writerow([str(r.path), r.label.name, r.split, r.source, f"{r.content_hash:016x}"])


def load_manifest(path: Path, root: Path | None = None) -> DatasetManifest:
    path = Path(path)
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append(row)
    if not rows:
        raise DatasetError(f"empty dataset: manifest {path} has no rows")
    names = sorted({row["label"] for row in rows})
    classes = tuple(ClassLabel(i, n) for i, n in enumerate(names))
    roster = {c.name: c for c in classes}
    records = tuple(
        SampleRecord(
            path=Path(row["path"]),
            label=roster[row["label"]],
            split=row["split"],
            source=row["source"],
            content_hash=int(row["content_hash"], 16),
        )
        for row in rows
    )
    inferred_root = root if root is not None else Path(path).parent
    return DatasetManifest(records=records, classes=classes, root=Path(inferred_root))
