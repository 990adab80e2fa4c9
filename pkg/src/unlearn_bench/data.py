"""Benchmark datasets: a seeded Gaussian-mixture classification task that
regenerates in seconds, plus optional CSV ingestion for user data."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .models import LabeledDataset

MEANS_STREAM = 0
SAMPLES_STREAM = 1


@dataclass(frozen=True)
class DatasetSpec:
    """Everything needed to rebuild a dataset deterministically."""

    n_train: int = 2000
    n_val: int = 500
    n_features: int = 20
    n_classes: int = 4
    seed: int = 1234
    separation: float = 0.75
    csv_path: str | None = None
    label_column: str | None = None

    def __post_init__(self) -> None:
        if self.csv_path is None:
            if self.n_train < 2 or self.n_val < 1:
                raise InvalidInputError("need n_train >= 2 and n_val >= 1")
            if self.n_features < 1 or self.n_classes < 2:
                raise InvalidInputError("need n_features >= 1 and n_classes >= 2")

    def to_dict(self) -> dict:
        return {
            "kind": "csv" if self.csv_path else "gaussian_mixture",
            "n_train": self.n_train,
            "n_val": self.n_val,
            "n_features": self.n_features,
            "n_classes": self.n_classes,
            "seed": self.seed,
            "separation": self.separation,
            "csv_path": self.csv_path,
            "label_column": self.label_column,
        }


def make_gaussian_mixture(spec: DatasetSpec) -> tuple[LabeledDataset, LabeledDataset]:
    """Train and validation splits of a seeded K-class Gaussian mixture.

    Class means are drawn once from N(0, separation^2 I); samples add unit
    isotropic noise. The validation split is drawn after (and so is
    disjoint from) the training split.
    """
    means_rng = np.random.default_rng([spec.seed, MEANS_STREAM])
    sample_rng = np.random.default_rng([spec.seed, SAMPLES_STREAM])
    means = means_rng.normal(0.0, spec.separation, size=(spec.n_classes, spec.n_features))
    total = spec.n_train + spec.n_val
    labels = sample_rng.integers(0, spec.n_classes, size=total)
    features = means[labels] + sample_rng.standard_normal((total, spec.n_features))
    train = LabeledDataset(features[: spec.n_train], labels[: spec.n_train], spec.n_classes)
    val = LabeledDataset(features[spec.n_train :], labels[spec.n_train :], spec.n_classes)
    return train, val


def load_csv_dataset(spec: DatasetSpec) -> tuple[LabeledDataset, LabeledDataset]:
    """Numeric CSV with a header row; one column holds integer class labels.

    The label column is ``spec.label_column`` or the last column. The first
    ``n_train`` rows become the training split and the next ``n_val`` rows
    the validation split.
    """
    path = Path(spec.csv_path)
    if not path.exists():
        raise InvalidInputError(f"csv file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InvalidInputError("csv file is empty")
        rows = [row for row in reader if row]
    label_name = spec.label_column or header[-1]
    if label_name not in header:
        raise InvalidInputError(f"label column {label_name!r} not in header {header}")
    label_idx = header.index(label_name)
    try:
        data = np.array([[float(v) for v in row] for row in rows])
    except ValueError as exc:
        raise InvalidInputError(f"csv has non-numeric values: {exc}") from exc
    labels = data[:, label_idx].astype(np.int64)
    if np.any(data[:, label_idx] != labels):
        raise InvalidInputError("label column must hold integers")
    features = np.delete(data, label_idx, axis=1)
    n_classes = int(labels.max()) + 1
    needed = spec.n_train + spec.n_val
    if data.shape[0] < needed:
        raise InvalidInputError(f"csv has {data.shape[0]} rows, need {needed}")
    train = LabeledDataset(features[: spec.n_train], labels[: spec.n_train], n_classes)
    val = LabeledDataset(
        features[spec.n_train : needed], labels[spec.n_train : needed], n_classes
    )
    return train, val


def materialize(spec: DatasetSpec) -> tuple[LabeledDataset, LabeledDataset]:
    """Produce (train, val) for a dataset descriptor."""
    if spec.csv_path is not None:
        return load_csv_dataset(spec)
    return make_gaussian_mixture(spec)
