"""Head training: cross-entropy loss, Adamax/Adam updates, early stopping,
checkpointing, and per-epoch history.

Only head parameters are updated; the backbone is reached through its
embed function and never mutated. Determinism holds in single-worker mode
for a fixed seed.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import model as model_mod
from .imaging import Batch
from .model import ModelGraph

LOSS_CLAMP = 1e-12


class TrainingDivergedError(RuntimeError):
    """Non-finite loss encountered; message names the epoch and batch."""


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str = "adamax"
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7

    def __post_init__(self):
        if self.kind not in ("adamax", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must be in [0, 1)")


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]  # second moment (adam) or infinity-norm accumulator (adamax)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()},
            v={k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()},
        )


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    wall_seconds: float


TrainingHistory = list[EpochRecord]


@dataclass(frozen=True)
class Checkpoint:
    path: Path
    epoch: int
    monitored_value: float


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    patience: int = 5
    monitor: str = "val_loss"
    restore_best: bool = True
    seed: int = 0
    checkpoint_dir: Path = Path("checkpoints")
    deterministic_timing: bool = False  # write wall_seconds=0 for byte-reproducible history

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.monitor not in ("val_loss", "val_accuracy"):
            raise ValueError(f"unknown monitor {self.monitor!r}")


def categorical_crossentropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean over the batch of -sum_k y_k log(max(p_k, 1e-12))."""
    if probs.shape != labels.shape:
        raise ValueError(f"shape mismatch: probs {probs.shape} vs labels {labels.shape}")
    clipped = np.maximum(probs, LOSS_CLAMP)
    return float(np.mean(-(labels * np.log(clipped)).sum(axis=1)))


def adamax_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    spec: OptimizerSpec,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One Adamax update: m <- b1 m + (1-b1) g; u <- max(b2 u, |g|);
    theta <- theta - lr/(1-b1^t) * m/(u+eps)."""
    state.t += 1
    b1, b2 = spec.beta1, spec.beta2
    scale = spec.learning_rate / (1.0 - b1**state.t)
    for key, p in params.items():
        g = grads[key].astype(np.float64)
        state.m[key] = b1 * state.m[key] + (1.0 - b1) * g
        state.v[key] = np.maximum(b2 * state.v[key], np.abs(g))
        p -= (scale * state.m[key] / (state.v[key] + spec.epsilon)).astype(p.dtype)
    return params, state


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    spec: OptimizerSpec,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One Adam update with bias correction on both moments."""
    state.t += 1
    b1, b2 = spec.beta1, spec.beta2
    for key, p in params.items():
        g = grads[key].astype(np.float64)
        state.m[key] = b1 * state.m[key] + (1.0 - b1) * g
        state.v[key] = b2 * state.v[key] + (1.0 - b2) * g * g
        m_hat = state.m[key] / (1.0 - b1**state.t)
        v_hat = state.v[key] / (1.0 - b2**state.t)
        p -= (spec.learning_rate * m_hat / (np.sqrt(v_hat) + spec.epsilon)).astype(p.dtype)
    return params, state


def optimizer_step(params, grads, state, spec: OptimizerSpec):
    step = adamax_step if spec.kind == "adamax" else adam_step
    return step(params, grads, state, spec)


@dataclass(frozen=True)
class StopDecision:
    stop: bool
    best_epoch: int | None = None


def early_stopping_decision(history: TrainingHistory, monitor: str, patience: int) -> StopDecision:
    """Stop once the monitored value has gone `patience` consecutive epochs
    without strict improvement. Best epoch is the earliest optimum."""
    if not history:
        raise ValueError("history is empty")
    values = [getattr(rec, monitor) for rec in history]
    better = (lambda a, b: a < b) if monitor == "val_loss" else (lambda a, b: a > b)

    best_idx = 0
    since_improvement = 0
    for i, v in enumerate(values[1:], start=1):
        if better(v, values[best_idx]):
            best_idx = i
            since_improvement = 0
        else:
            since_improvement += 1
            if since_improvement >= max(patience, 1):
                return StopDecision(stop=True, best_epoch=history[best_idx].epoch)
    return StopDecision(stop=False, best_epoch=history[best_idx].epoch)


def _epoch_pass(graph, stream, train: bool, opt_state, opt_spec, rng, epoch_idx):
    total_loss = 0.0
    total_correct = 0
    total_n = 0
    for batch_idx, batch in enumerate(stream):
        embeddings = graph.backbone.embed(batch.images)
        if train:
            probs, cache = model_mod.forward_head(
                graph, embeddings, training_mode=True, rng=rng, return_cache=True
            )
        else:
            probs = model_mod.forward_head(graph, embeddings, training_mode=False)
        loss = categorical_crossentropy(probs, batch.labels)
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"non-finite loss at epoch {epoch_idx}, batch {batch_idx}"
            )
        n = batch.images.shape[0]
        total_loss += loss * n
        total_correct += int((probs.argmax(axis=1) == batch.labels.argmax(axis=1)).sum())
        total_n += n
        if train:
            grads = model_mod.backward_head(graph, cache, probs, batch.labels)
            optimizer_step(graph.weights, grads, opt_state, opt_spec)
    if total_n == 0:
        raise ValueError("no samples")
    return total_loss / total_n, total_correct / total_n


def train(
    graph: ModelGraph,
    train_stream: Callable[[int], Iterable[Batch]],
    val_stream: Callable[[int], Iterable[Batch]],
    optimizer: OptimizerSpec,
    config: TrainConfig,
) -> tuple[TrainingHistory, Checkpoint]:
    """Train the head, checkpointing on improvement of the monitored metric.

    ``train_stream``/``val_stream`` are callables taking the zero-based
    epoch index and returning a batch iterable (streams must be
    re-creatable per epoch). Returns the history and the best checkpoint;
    with restore_best the graph's weights end equal to that checkpoint.
    """
    if not graph.head_trainable:
        raise ValueError("graph head is not trainable")
    opt_state = OptimizerState.zeros_like(graph.weights)
    history: TrainingHistory = []
    best: Checkpoint | None = None
    best_value = np.inf if config.monitor == "val_loss" else -np.inf
    better = (lambda a, b: a < b) if config.monitor == "val_loss" else (lambda a, b: a > b)
    ckpt_dir = Path(config.checkpoint_dir)

    for epoch_idx in range(config.epochs):
        epoch = epoch_idx + 1
        t0 = time.monotonic()
        rng = np.random.default_rng([config.seed, epoch_idx])
        train_loss, train_acc = _epoch_pass(
            graph, train_stream(epoch_idx), True, opt_state, optimizer, rng, epoch
        )
        val_loss, val_acc = _epoch_pass(
            graph, val_stream(epoch_idx), False, None, None, None, epoch
        )
        wall = 0.0 if config.deterministic_timing else time.monotonic() - t0
        history.append(
            EpochRecord(epoch, train_loss, train_acc, val_loss, val_acc, wall)
        )

        monitored = val_loss if config.monitor == "val_loss" else val_acc
        if better(monitored, best_value):
            best_value = monitored
            if best is not None and best.path.exists():
                best.path.unlink()
            path = ckpt_dir / f"best_epoch{epoch:03d}_{monitored:.6f}.npz"
            model_mod.save_checkpoint(graph, path, epoch=epoch, monitored_value=monitored)
            best = Checkpoint(path=path, epoch=epoch, monitored_value=monitored)

        decision = early_stopping_decision(history, config.monitor, config.patience)
        if decision.stop:
            break

    assert best is not None
    if config.restore_best:
        restored, _ = model_mod.load_checkpoint(best.path, graph.backbone)
        graph.weights.update(restored.weights)
    return history, best


HISTORY_FIELDS = ("epoch", "train_loss", "train_accuracy", "val_loss", "val_accuracy", "wall_seconds")


def save_history(history: TrainingHistory, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_FIELDS)
        for rec in history:
            writer.writerow(
                [
                    rec.epoch,
                    repr(rec.train_loss),
                    repr(rec.train_accuracy),
                    repr(rec.val_loss),
                    repr(rec.val_accuracy),
                    repr(rec.wall_seconds),
                ]
            )


def load_history(path: Path) -> TrainingHistory:
    history: TrainingHistory = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            history.append(
                EpochRecord(
                    epoch=int(row["epoch"]),
                    train_loss=float(row["train_loss"]),
                    train_accuracy=float(row["train_accuracy"]),
                    val_loss=float(row["val_loss"]),
                    val_accuracy=float(row["val_accuracy"]),
                    wall_seconds=float(row["wall_seconds"]),
                )
            )
    return history
