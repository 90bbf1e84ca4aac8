"""Backbone feature-extractor interface and the classification head.

The head is the trainable stack appended after a globally max-pooled
backbone embedding: Flatten -> Dropout(0.3) -> Dense(D->128, ReLU) ->
Dropout(0.25) -> Dense(128->K, softmax). Dropout is inverted (scaled by
1/(1-p) at train time) so inference is a pure pass-through. The backbone
is frozen by default and reached only through its ``embed`` function.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import imaging

CHECKPOINT_FORMAT_VERSION = 1

XCEPTION_EMBEDDING_DIM = 2048


@dataclass(frozen=True)
class FeatureExtractor:
    name: str
    embedding_dim: int
    pretrained: bool
    embed: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class HeadSpec:
    dropout1: float = 0.3
    dense_units: int = 128
    activation: str = "relu"
    dropout2: float = 0.25
    num_classes: int = 4

    def __post_init__(self):
        if not (0 <= self.dropout1 < 1 and 0 <= self.dropout2 < 1):
            raise ValueError("dropout probabilities must be in [0, 1)")
        if self.dense_units < 1:
            raise ValueError("dense_units must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")


@dataclass(frozen=True)
class LayerSummary:
    name: str
    shape: tuple
    param_count: int
    trainable: bool


@dataclass(frozen=True)
class ParameterSummary:
    layers: tuple[LayerSummary, ...]
    trainable_total: int
    frozen_total: int


@dataclass
class ModelGraph:
    backbone: FeatureExtractor
    spec: HeadSpec
    seed: int
    weights: dict[str, np.ndarray]
    head_trainable: bool = True
    dtype: type = np.float32

    HEAD_PARAM_NAMES = ("dense1/W", "dense1/b", "dense2/W", "dense2/b")

    def trainable_params(self) -> dict[str, np.ndarray]:
        return dict(self.weights) if self.head_trainable else {}


def build_model(
    backbone: FeatureExtractor,
    spec: HeadSpec | None = None,
    seed: int = 0,
    dtype=np.float32,
) -> ModelGraph:
    """Assemble the head on top of a backbone; Glorot-uniform dense init,
    zero biases, backbone frozen."""
    spec = spec or HeadSpec()
    rng = np.random.default_rng(seed)
    d, u, k = backbone.embedding_dim, spec.dense_units, spec.num_classes

    def glorot(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)

    weights = {
        "dense1/W": glorot(d, u),
        "dense1/b": np.zeros(u, dtype=dtype),
        "dense2/W": glorot(u, k),
        "dense2/b": np.zeros(k, dtype=dtype),
    }
    return ModelGraph(backbone=backbone, spec=spec, seed=seed, weights=weights, dtype=dtype)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _dropout_mask(shape, p, rng, dtype):
    # inverted dropout: keep with prob 1-p, scale kept units by 1/(1-p)
    if p == 0:
        return np.ones(shape, dtype=dtype)
    keep = (rng.random(shape) >= p).astype(dtype)
    return keep / dtype(1.0 - p)


def forward_head(
    graph: ModelGraph,
    embeddings: np.ndarray,
    training_mode: bool = False,
    rng: np.random.Generator | None = None,
    return_cache: bool = False,
):
    """Head forward pass on BxD embeddings; returns BxK probability rows."""
    w = graph.weights
    spec = graph.spec
    dtype = graph.dtype
    x = embeddings.astype(dtype, copy=False)
    if x.ndim != 2 or x.shape[1] != graph.backbone.embedding_dim:
        raise ValueError(f"expected embeddings of shape (B, {graph.backbone.embedding_dim}), got {x.shape}")

    if training_mode:
        if rng is None:
            raise ValueError("training_mode forward requires an rng")
        m1 = _dropout_mask(x.shape, spec.dropout1, rng, dtype)
    else:
        m1 = None
    h0 = x * m1 if m1 is not None else x
    z1 = h0 @ w["dense1/W"] + w["dense1/b"]
    a1 = np.maximum(z1, 0)
    if training_mode:
        m2 = _dropout_mask(a1.shape, spec.dropout2, rng, dtype)
    else:
        m2 = None
    h2 = a1 * m2 if m2 is not None else a1
    logits = h2 @ w["dense2/W"] + w["dense2/b"]
    probs = softmax(logits)
    if return_cache:
        cache = {"x": x, "m1": m1, "h0": h0, "z1": z1, "a1": a1, "m2": m2, "h2": h2}
        return probs, cache
    return probs


def backward_head(graph: ModelGraph, cache: dict, probs: np.ndarray, labels: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of mean categorical cross-entropy w.r.t. head parameters."""
    w = graph.weights
    b = probs.shape[0]
    dlogits = (probs - labels) / b
    grads = {
        "dense2/W": cache["h2"].T @ dlogits,
        "dense2/b": dlogits.sum(axis=0),
    }
    dh2 = dlogits @ w["dense2/W"].T
    da1 = dh2 * cache["m2"] if cache["m2"] is not None else dh2
    dz1 = da1 * (cache["z1"] > 0)
    grads["dense1/W"] = cache["h0"].T @ dz1
    grads["dense1/b"] = dz1.sum(axis=0)
    return grads


def forward(
    graph: ModelGraph,
    images: np.ndarray,
    training_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Full forward pass: backbone embed then head. Images must be
    normalized to [-1, 1]."""
    if images.ndim != 4 or images.shape[3] != 3:
        raise ValueError(f"expected images of shape (B, H, W, 3), got {images.shape}")
    embeddings = graph.backbone.embed(images)
    return forward_head(graph, embeddings, training_mode=training_mode, rng=rng)


def stub_backbone(seed: int = 0, embedding_dim: int = 8, grid: int = 16) -> FeatureExtractor:
    """Desk-scale backbone substitute: deterministic seeded random linear
    projection of a grid-subsampled image, followed by ReLU."""
    if embedding_dim < 1:
        raise ValueError("embedding_dim must be >= 1")
    n_features = grid * grid * 3
    rng = np.random.default_rng(seed)
    projection = rng.standard_normal((n_features, embedding_dim)).astype(np.float32)
    projection /= np.float32(np.sqrt(n_features))

    def embed(images: np.ndarray) -> np.ndarray:
        h, w = images.shape[1:3]
        ys = np.linspace(0, h - 1, grid).round().astype(int)
        xs = np.linspace(0, w - 1, grid).round().astype(int)
        sub = images[:, ys][:, :, xs]  # B x grid x grid x 3
        flat = sub.reshape(images.shape[0], n_features).astype(np.float32)
        return np.maximum(flat @ projection, 0)

    return FeatureExtractor(name=f"stub-d{embedding_dim}", embedding_dim=embedding_dim, pretrained=False, embed=embed)


def pretrained_xception_backbone(input_size: int = imaging.DEFAULT_INPUT_SIZE) -> FeatureExtractor:
    """Xception feature extractor with ImageNet weights and global max
    pooling. Requires tensorflow and the pretrained weight asset; gated
    behind this call so the rest of the pipeline stays dependency-free.
    """
    try:
        from tensorflow.keras.applications import Xception
    except ImportError as exc:
        raise RuntimeError(
            "pretrained_xception backbone requires tensorflow; install it or use the stub backbone"
        ) from exc
    base = Xception(
        include_top=False,
        weights="imagenet",
        pooling="max",
        input_shape=(input_size, input_size, 3),
    )

    def embed(images: np.ndarray) -> np.ndarray:
        return np.asarray(base.predict(images, verbose=0), dtype=np.float32)

    return FeatureExtractor(
        name="pretrained_xception",
        embedding_dim=XCEPTION_EMBEDDING_DIM,
        pretrained=True,
        embed=embed,
    )


def parameter_summary(graph: ModelGraph) -> ParameterSummary:
    """Per-layer parameter accounting for the head stack."""
    d = graph.backbone.embedding_dim
    u = graph.spec.dense_units
    k = graph.spec.num_classes
    t = graph.head_trainable
    layers = (
        LayerSummary("flatten", (d,), 0, False),
        LayerSummary("dropout_1", (d,), 0, False),
        LayerSummary("dense_1", (d, u), d * u + u, t),
        LayerSummary("dropout_2", (u,), 0, False),
        LayerSummary("dense_2", (u, k), u * k + k, t),
    )
    trainable = sum(l.param_count for l in layers if l.trainable)
    frozen = sum(l.param_count for l in layers if not l.trainable)
    return ParameterSummary(layers=layers, trainable_total=trainable, frozen_total=frozen)


def save_checkpoint(graph: ModelGraph, path: Path, epoch: int = 0, monitored_value: float = float("nan")) -> None:
    """Persist weights plus metadata as a single .npz archive; bit-exact
    round trip."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "backbone": graph.backbone.name,
        "embedding_dim": graph.backbone.embedding_dim,
        "num_classes": graph.spec.num_classes,
        "dense_units": graph.spec.dense_units,
        "dropout1": graph.spec.dropout1,
        "dropout2": graph.spec.dropout2,
        "activation": graph.spec.activation,
        "seed": graph.seed,
        "epoch": epoch,
        "monitored_value": monitored_value,
    }
    arrays = {key.replace("/", "__"): val for key, val in graph.weights.items()}
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path: Path, backbone: FeatureExtractor) -> tuple[ModelGraph, dict]:
    """Rebuild a graph from a checkpoint archive and the matching backbone."""
    path = Path(path)
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        weights = {
            key.replace("__", "/"): data[key]
            for key in data.files
            if key != "__meta__"
        }
    if meta["embedding_dim"] != backbone.embedding_dim:
        raise ValueError(
            f"checkpoint embedding dim {meta['embedding_dim']} does not match backbone {backbone.embedding_dim}"
        )
    spec = HeadSpec(
        dropout1=meta["dropout1"],
        dense_units=meta["dense_units"],
        activation=meta["activation"],
        dropout2=meta["dropout2"],
        num_classes=meta["num_classes"],
    )
    graph = ModelGraph(backbone=backbone, spec=spec, seed=meta["seed"], weights=weights)
    return graph, meta
