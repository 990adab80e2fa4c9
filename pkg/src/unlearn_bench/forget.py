"""Forget-set construction: random sampling and selection of the points
most extreme along the data's first principal component."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateSpectrumError, InvalidInputError
from .models import LabeledDataset

STRATEGIES = ("random", "pca")

POWER_ITER_TOL = 1e-8
POWER_ITER_MAX = 1000
EIGENVALUE_TIE_TOL = 1e-10


@dataclass(frozen=True)
class ForgetSpec:
    """A named subset of training indices; its complement is the retain set."""

    name: str
    indices: tuple[int, ...]
    strategy: str
    size: int

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise InvalidInputError(f"strategy must be one of {STRATEGIES}")
        if self.size != len(self.indices):
            raise InvalidInputError("size must equal the number of indices")
        if self.size < 1:
            raise InvalidInputError("forget set must be nonempty")
        arr = np.asarray(self.indices, dtype=np.int64)
        if np.any(arr < 0):
            raise InvalidInputError("indices must be nonnegative")
        if np.any(np.diff(arr) <= 0):
            raise InvalidInputError("indices must be sorted and unique")

    def retain_indices(self, n: int) -> np.ndarray:
        mask = np.ones(n, dtype=bool)
        mask[list(self.indices)] = False
        return np.flatnonzero(mask)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "strategy": self.strategy,
            "size": self.size,
            "indices": list(self.indices),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForgetSpec":
        return cls(
            name=str(d["name"]),
            indices=tuple(int(i) for i in d["indices"]),
            strategy=str(d["strategy"]),
            size=int(d["size"]),
        )

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: Path) -> "ForgetSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _check_k(k: int, n: int) -> None:
    if not 1 <= k < n:
        raise InvalidInputError(f"forget size k={k} must satisfy 1 <= k < n={n}")


def random_forget(dataset: LabeledDataset, k: int, seed: int, name: str | None = None) -> ForgetSpec:
    """k indices sampled without replacement, deterministic given the seed."""
    n = len(dataset)
    _check_k(k, n)
    rng = np.random.default_rng(seed)
    picked = np.sort(rng.choice(n, size=k, replace=False))
    return ForgetSpec(
        name=name or f"random_{k}",
        indices=tuple(int(i) for i in picked),
        strategy="random",
        size=k,
    )


def first_principal_component(features: np.ndarray) -> np.ndarray:
    """Unit dominant eigenvector of the feature covariance via power iteration.

    The sign is fixed so the largest-magnitude entry is positive. Raises
    DegenerateSpectrumError when the top two eigenvalues are within 1e-10
    relative of each other, since the direction is then arbitrary.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidInputError("need an (n, d) matrix with n >= 2")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (x.shape[0] - 1)

    def dominant(matrix: np.ndarray) -> tuple[np.ndarray, float]:
        # Start along the coordinate with the most variance; a start vector
        # exactly orthogonal to the dominant eigenvector would stall. The
        # matrix is positive semidefinite, so iterates never flip sign.
        v = np.zeros(matrix.shape[0])
        v[int(np.argmax(np.diag(matrix)))] = 1.0
        for _ in range(POWER_ITER_MAX):
            w = matrix @ v
            norm = np.linalg.norm(w)
            if norm == 0.0:
                return v, 0.0
            w /= norm
            converged = np.linalg.norm(w - v) <= POWER_ITER_TOL
            v = w
            if converged:
                break
        return v, float(v @ matrix @ v)

    v1, lam1 = dominant(cov)
    if lam1 > 0:
        deflated = cov - lam1 * np.outer(v1, v1)
        _, lam2 = dominant(deflated)
        if abs(lam1 - lam2) <= EIGENVALUE_TIE_TOL * abs(lam1):
            raise DegenerateSpectrumError(
                f"top eigenvalues tie within tolerance ({lam1:.6g} vs {lam2:.6g})"
            )
    if v1[int(np.argmax(np.abs(v1)))] < 0:
        v1 = -v1
    return v1


def pca_forget(dataset: LabeledDataset, k: int, name: str | None = None) -> ForgetSpec:
    """The k examples with the largest |projection| onto the first principal
    component, ties broken by ascending index."""
    n = len(dataset)
    _check_k(k, n)
    component = first_principal_component(dataset.features)
    centered = dataset.features - dataset.features.mean(axis=0)
    magnitude = np.abs(centered @ component)
    order = np.argsort(-magnitude, kind="stable")
    picked = np.sort(order[:k])
    return ForgetSpec(
        name=name or f"pca_{k}",
        indices=tuple(int(i) for i in picked),
        strategy="pca",
        size=k,
    )
