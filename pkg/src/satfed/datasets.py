"""Synthetic per-satellite datasets: iid and label-skew partitions.

Samples are Gaussian blobs around per-class centers shared across the whole
federation, so a model trained anywhere is evaluated against the same class
geometry. Label-skew assigns each satellite a fixed slice of classes
round-robin over the satellite list, covering every class across the
federation while keeping individual shards narrow.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, ShapeError
from .model import Dataset, ModelVector, local_loss, predict


def derive_seed(master_seed: int, *names: str) -> int:
    """Stable named sub-seed so components can be reproduced in isolation."""
    material = hashlib.sha256(
        b"satfed/subseed|" + master_seed.to_bytes(8, "little", signed=False)
        + b"|" + "/".join(names).encode("utf-8")
    ).digest()
    return int.from_bytes(material[:8], "little")


class PartitionStyle(str, Enum):
    IID = "iid"
    LABEL_SKEW = "label_skew"


@dataclass(frozen=True)
class PartitionSpec:
    style: PartitionStyle
    n_classes: int
    samples_per_satellite: int
    feature_dim: int
    seed: int
    classes_per_satellite: int = 2
    cluster_spread: float = 0.8
    center_scale: float = 3.0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.samples_per_satellite < 1:
            raise ConfigError("samples_per_satellite must be positive")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be positive")
        if self.style == PartitionStyle.LABEL_SKEW and not (
            1 <= self.classes_per_satellite <= self.n_classes
        ):
            raise ConfigError("classes_per_satellite must be in [1, n_classes]")


def class_centers(spec: PartitionSpec) -> np.ndarray:
    rng = np.random.default_rng(derive_seed(spec.seed, "centers"))
    return spec.center_scale * rng.standard_normal((spec.n_classes, spec.feature_dim))


def skew_classes_for(index: int, spec: PartitionSpec) -> list[int]:
    """Round-robin class slice for the satellite at this position."""
    k = spec.classes_per_satellite
    return [(index * k + j) % spec.n_classes for j in range(k)]


def _draw(centers, labels, spread, rng) -> np.ndarray:
    return centers[labels] + spread * rng.standard_normal((len(labels), centers.shape[1]))


def partition_dataset(
    spec: PartitionSpec, satellites: list[tuple[str, str]]
) -> dict[tuple[str, str], Dataset]:
    """One shard per satellite, deterministic per (seed, satellite position)."""
    if not satellites:
        raise ConfigError("cannot partition over zero satellites")
    if spec.style == PartitionStyle.LABEL_SKEW:
        if len(satellites) * spec.classes_per_satellite < spec.n_classes:
            raise ConfigError(
                f"{len(satellites)} satellites x {spec.classes_per_satellite} classes "
                f"cannot cover {spec.n_classes} classes"
            )
    centers = class_centers(spec)
    shards: dict[tuple[str, str], Dataset] = {}
    for index, (vendor_id, sat_id) in enumerate(satellites):
        rng = np.random.default_rng(derive_seed(spec.seed, "shard", vendor_id, sat_id))
        if spec.style == PartitionStyle.IID:
            labels = rng.integers(0, spec.n_classes, spec.samples_per_satellite)
        else:
            pool = np.array(skew_classes_for(index, spec))
            labels = pool[rng.integers(0, len(pool), spec.samples_per_satellite)]
        features = _draw(centers, labels, spec.cluster_spread, rng)
        shards[(vendor_id, sat_id)] = Dataset(features, labels, (vendor_id, sat_id))
    return shards


def make_holdout(spec: PartitionSpec, scale: int = 10) -> Dataset:
    """Evaluation set over the union class distribution, fixed per seed."""
    rng = np.random.default_rng(derive_seed(spec.seed, "holdout"))
    n = scale * spec.samples_per_satellite
    labels = rng.integers(0, spec.n_classes, n)
    features = _draw(class_centers(spec), labels, spec.cluster_spread, rng)
    return Dataset(features, labels, ("holdout", "holdout"))


def evaluate(model: ModelVector, holdout: Dataset) -> tuple[float, float]:
    """Top-1 accuracy fraction and mean loss on a held-out set."""
    if model.dim % (holdout.n_features + 1) != 0:
        raise ShapeError(
            f"model dim {model.dim} incompatible with {holdout.n_features} features"
        )
    predictions = predict(model, holdout.features)
    accuracy = float(np.mean(predictions == holdout.labels))
    return accuracy, local_loss(model, holdout)
