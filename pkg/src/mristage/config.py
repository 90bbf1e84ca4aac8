"""Run configuration: a flat JSON document with documented keys.

Command-line flags override file values; the fully resolved config
(every applied default included) is snapshotted into each run directory
as ``config.resolved.json``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .imaging import DEFAULT_BATCH_SIZE, DEFAULT_INPUT_SIZE

BACKBONES = ("stub", "pretrained_xception")


@dataclass
class RunConfig:
    augmented_root: str = ""
    original_root: str = ""
    val_fraction: float = 0.5
    shared_eval: bool = False
    input_size: int = DEFAULT_INPUT_SIZE
    batch_size: int = DEFAULT_BATCH_SIZE
    backbone: str = "stub"
    stub_embedding_dim: int = 8
    fine_tune_backbone: bool = False
    # head
    dropout1: float = 0.3
    dense_units: int = 128
    dropout2: float = 0.25
    # optimizer
    optimizer: str = "adamax"
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    # training
    epochs: int = 50
    patience: int = 5
    monitor: str = "val_loss"
    restore_best: bool = True
    augment: bool = True
    rotation_degrees: float = 10.0
    width_shift: float = 0.1
    height_shift: float = 0.1
    horizontal_flip: bool = True
    zoom: float = 0.0
    paper_faithful_shuffle: bool = False
    deterministic_timing: bool = False
    seed: int = 0
    output_dir: str = "runs/latest"

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}; expected one of {BACKBONES}")
        if self.fine_tune_backbone:
            raise ValueError(
                "fine_tune_backbone is not supported for embed-only backbones; keep it false"
            )

    @classmethod
    def from_file(cls, path: Path, overrides: dict | None = None) -> "RunConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_dict(data, overrides)

    @classmethod
    def from_dict(cls, data: dict, overrides: dict | None = None) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        merged = dict(data)
        for key, value in (overrides or {}).items():
            if value is not None:
                merged[key] = value
        return cls(**merged)

    def to_resolved_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def save_resolved(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_resolved_json(), encoding="utf-8")
