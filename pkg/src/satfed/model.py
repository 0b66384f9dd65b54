"""Flat model vectors and local training for the multinomial regression task.

The learning task is softmax regression on synthetic feature vectors: a model
of dimension (n_features + 1) * n_classes packs the weight matrix row-major
followed by the per-class bias. Parameters are stored as float32 with a
fixed little-endian byte layout so content hashes are platform-stable;
gradient and loss math runs in float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .crypto import Digest, hash_bytes
from .errors import DegenerateInputError, FormatError, NumericError, ShapeError


@dataclass(frozen=True)
class ModelVector:
    """Flat float32 parameter vector with bit-exact serialization."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 1:
            raise ShapeError("model vector must be one-dimensional")
        if not np.all(np.isfinite(arr)):
            raise NumericError("model vector contains non-finite entries")
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def to_bytes(self) -> bytes:
        # 4-byte little-endian dim header, then little-endian float32 entries.
        return struct.pack("<I", self.dim) + self.values.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ModelVector":
        if len(raw) < 4:
            raise FormatError("model serialization shorter than its header")
        (dim,) = struct.unpack("<I", raw[:4])
        body = raw[4:]
        if len(body) != 4 * dim:
            raise FormatError(
                f"model serialization length {len(body)} does not match dim {dim}"
            )
        return cls(np.frombuffer(body, dtype="<f4").copy())

    def content_hash(self) -> Digest:
        return hash_bytes(self.to_bytes())

    @classmethod
    def zeros(cls, dim: int) -> "ModelVector":
        return cls(np.zeros(dim, dtype=np.float32))


@dataclass
class Dataset:
    """Per-satellite training shard: features, integer class labels, owner."""

    features: np.ndarray
    labels: np.ndarray
    owner: tuple[str, str]  # (vendor_id, sat_id)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ShapeError("features must be a 2-D matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ShapeError("labels must align with the feature rows")
        if self.size < 1:
            raise DegenerateInputError("dataset must hold at least one sample")

    @property
    def size(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    epochs: int
    batch_size: int
    rng_seed: int

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ShapeError("learning_rate must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ShapeError("epochs and batch_size must be at least 1")


@dataclass
class TrainReport:
    updated_model: ModelVector
    mean_gradient: ModelVector
    final_loss: float


def model_dim(n_features: int, n_classes: int) -> int:
    return (n_features + 1) * n_classes


def _unpack(params: np.ndarray, n_features: int) -> tuple[np.ndarray, np.ndarray]:
    dim = params.shape[0]
    if dim % (n_features + 1) != 0:
        raise ShapeError(
            f"model dim {dim} is not (n_features+1)*n_classes for {n_features} features"
        )
    n_classes = dim // (n_features + 1)
    weights = params[: n_classes * n_features].reshape(n_classes, n_features)
    bias = params[n_classes * n_features :]
    return weights, bias


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _loss_from_params(params: np.ndarray, data: Dataset) -> float:
    weights, bias = _unpack(params, data.n_features)
    log_probs = _log_softmax(data.features @ weights.T + bias)
    return float(-log_probs[np.arange(data.size), data.labels].mean())


def local_loss(model: ModelVector, data: Dataset) -> float:
    """Mean cross-entropy of the model over one shard."""
    return _loss_from_params(model.values.astype(np.float64), data)


def global_loss(model: ModelVector, datasets: list[Dataset]) -> float:
    """Data-size-weighted mean of the shard losses."""
    if not datasets:
        raise DegenerateInputError("global_loss requires at least one dataset")
    total = sum(d.size for d in datasets)
    return sum(d.size * local_loss(model, d) for d in datasets) / total


def _gradient(params: np.ndarray, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    n = features.shape[0]
    weights, bias = _unpack(params, features.shape[1])
    log_probs = _log_softmax(features @ weights.T + bias)
    probs = np.exp(log_probs)
    probs[np.arange(n), labels] -= 1.0
    grad_w = probs.T @ features / n
    grad_b = probs.mean(axis=0)
    return np.concatenate([grad_w.ravel(), grad_b])


def full_gradient(model: ModelVector, data: Dataset) -> np.ndarray:
    """Full-batch gradient of the mean cross-entropy, in float64."""
    return _gradient(model.values.astype(np.float64), data.features, data.labels)


def local_train(init: ModelVector, data: Dataset, cfg: TrainConfig) -> TrainReport:
    """Mini-batch SGD for cfg.epochs passes; deterministic per rng_seed."""
    params = init.values.astype(np.float64)
    mean_gradient = full_gradient(init, data)
    rng = np.random.default_rng(cfg.rng_seed)
    for epoch in range(cfg.epochs):
        order = rng.permutation(data.size)
        for start in range(0, data.size, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            grad = _gradient(params, data.features[batch], data.labels[batch])
            params = params - cfg.learning_rate * grad
            # Parameters must survive the float32 cast at the end of training.
            if not np.all(np.isfinite(params)) or np.abs(params).max() > 3.0e38:
                raise NumericError(
                    f"divergent parameters during epoch {epoch} "
                    f"(owner {data.owner}, lr {cfg.learning_rate})"
                )
    updated = ModelVector(params.astype(np.float32))
    return TrainReport(
        updated_model=updated,
        mean_gradient=ModelVector(mean_gradient.astype(np.float32)),
        final_loss=_loss_from_params(params, data),
    )


def predict(model: ModelVector, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    weights, bias = _unpack(model.values.astype(np.float64), features.shape[1])
    return np.argmax(features @ weights.T + bias, axis=1)


@dataclass(frozen=True)
class QuantizerConfig:
    """Uniform quantizer over the vector's own [min, max] span; None = identity."""

    levels: int | None = None

    def __post_init__(self):
        if self.levels is not None and self.levels < 2:
            raise ShapeError("quantizer needs at least 2 levels")


def quantize(model: ModelVector, q: QuantizerConfig) -> ModelVector:
    if q.levels is None:
        return model
    values = model.values.astype(np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return model
    grid = np.linspace(lo, hi, q.levels)
    idx = np.rint((values - lo) / (hi - lo) * (q.levels - 1)).astype(int)
    return ModelVector(grid[idx].astype(np.float32))
