"""Numeric kernel for the KLoM (KL divergence of margins) metric.

Margins are logit gaps: the true-class logit minus the log-sum-exp of all
other logits. For one data point, the margins of an oracle ensemble and an
unlearned ensemble are binned into a shared 20-bin histogram pair, smoothed
with a small epsilon so no bin is empty, and compared with KL divergence
(oracle distribution first). With the default smoothing of 1e-5 the score
saturates near ln(1/1e-5) ~= 11.5, so every value is checked against a hard
cap of 12. Scores aggregate over a data split as a mean plus a
95th percentile, and over token positions for autoregressive models scored
under teacher forcing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

CLIP_RANGE = (-100.0, 100.0)
DEFAULT_BINS = 20
DEFAULT_EPSILON = 1e-5

# Hard ceiling on any smoothed-histogram KL value with the defaults; the
# theoretical maximum is (1+eps)/(1+B*eps) * ln((1+eps)/eps) ~= 11.51.
KLOM_CAP = 12.0

SPLITS = ("forget", "retain", "val")


@dataclass
class MarginTensor:
    """Per-model, per-example margins: rows are models, columns are points.

    Column j must refer to the same example in every row, so two tensors
    with matching column order can be compared point by point.
    """

    values: np.ndarray
    clipped: bool
    split_label: str

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values)
        if not np.issubdtype(self.values.dtype, np.floating):
            self.values = self.values.astype(np.float64)
        if self.values.ndim != 2:
            raise InvalidInputError(f"margin tensor must be 2-D, got shape {self.values.shape}")
        if self.values.shape[0] < 2:
            raise InvalidInputError("margin tensor needs at least 2 model rows")
        if self.split_label not in SPLITS:
            raise InvalidInputError(f"split_label must be one of {SPLITS}, got {self.split_label!r}")
        if self.clipped:
            lo, hi = CLIP_RANGE
            if self.values.size and not (
                np.all(self.values >= lo) and np.all(self.values <= hi)
            ):
                raise InvalidInputError("clipped tensor has entries outside [-100, 100]")

    @property
    def n_models(self) -> int:
        return self.values.shape[0]

    @property
    def n_points(self) -> int:
        return self.values.shape[1]


@dataclass
class TokenMarginTensor:
    """Margins for one token sequence: rows are models, column t is the
    margin of the true next token at prediction step t."""

    values: np.ndarray
    sequence_id: str

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise InvalidInputError("token margin tensor must be 2-D")
        if self.values.shape[0] < 2:
            raise InvalidInputError("token margin tensor needs at least 2 model rows")

    @property
    def n_models(self) -> int:
        return self.values.shape[0]

    @property
    def n_positions(self) -> int:
        return self.values.shape[1]


@dataclass
class SmoothedHistogramPair:
    """Aligned smoothed probability vectors for one point's margin samples."""

    bin_edges: np.ndarray
    p_oracle: np.ndarray
    q_unlearned: np.ndarray
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self) -> None:
        if not np.all(np.diff(self.bin_edges) > 0):
            raise InvalidInputError("bin edges must be strictly increasing")
        for name, vec in (("p_oracle", self.p_oracle), ("q_unlearned", self.q_unlearned)):
            if abs(float(vec.sum()) - 1.0) > 1e-12:
                raise InvalidInputError(f"{name} does not sum to 1")
            if np.any(vec <= 0):
                raise InvalidInputError(f"{name} has non-positive entries after smoothing")


@dataclass
class KlomReport:
    """Pointwise KLoM values over one split with mean and 95th percentile."""

    per_point: np.ndarray
    mean: float
    p95: float
    split_label: str
    n_models_used: int


def compute_margin(logits: np.ndarray, label: int) -> float:
    """Margin of a prediction: true-class logit minus log-sum-exp of the rest.

    Uses max subtraction so the result is finite for any finite logits.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.shape[0] < 2:
        raise InvalidInputError("logits must be a 1-D vector with at least 2 classes")
    if not 0 <= label < logits.shape[0]:
        raise InvalidInputError(f"label {label} out of range for {logits.shape[0]} classes")
    if not np.all(np.isfinite(logits)):
        raise InvalidInputError("logits must be finite")
    others = np.delete(logits, label)
    peak = others.max()
    return float(logits[label] - (peak + math.log(np.exp(others - peak).sum())))


def margins_from_logits(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Vectorized margins for a batch of logit rows and integer labels."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise InvalidInputError("logits must be (n, K) with K >= 2")
    if labels.shape != (logits.shape[0],):
        raise InvalidInputError("labels must align with logit rows")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= logits.shape[1]:
        raise InvalidInputError("label out of range")
    if not np.all(np.isfinite(logits)):
        raise InvalidInputError("logits must be finite")
    n = logits.shape[0]
    rows = np.arange(n)
    true = logits[rows, labels]
    masked = logits.copy()
    masked[rows, labels] = -np.inf
    peak = masked.max(axis=1)
    lse_others = peak + np.log(np.exp(masked - peak[:, None]).sum(axis=1))
    return true - lse_others


def clip_margins(raw: MarginTensor) -> MarginTensor:
    """Clamp every margin into [-100, 100] and mark the tensor clipped."""
    lo, hi = CLIP_RANGE
    return MarginTensor(
        values=np.clip(raw.values, lo, hi),
        clipped=True,
        split_label=raw.split_label,
    )


def build_histogram_pair(
    oracle_samples: np.ndarray,
    unlearned_samples: np.ndarray,
    bins: int = DEFAULT_BINS,
    epsilon: float = DEFAULT_EPSILON,
) -> SmoothedHistogramPair:
    """Bin both sample sets onto one equal-width grid and smooth.

    The grid spans the min/max of the union of the two sets so both
    distributions are supported everywhere. Bins are half-open except the
    last, which is closed so the max sample is counted once. Each
    normalized count gets epsilon added and the vector is renormalized by
    (1 + bins * epsilon). A degenerate range (all samples equal) yields an
    identical one-hot pair, making the downstream divergence zero.
    """
    oracle = np.asarray(oracle_samples, dtype=np.float64)
    unlearned = np.asarray(unlearned_samples, dtype=np.float64)
    if oracle.ndim != 1 or unlearned.ndim != 1:
        raise InvalidInputError("samples must be 1-D")
    if oracle.shape[0] < 2 or unlearned.shape[0] < 2:
        raise InvalidInputError("need at least 2 samples per side")
    if not (np.all(np.isfinite(oracle)) and np.all(np.isfinite(unlearned))):
        raise InvalidInputError("samples must be finite (clip margins first)")
    lo = min(oracle.min(), unlearned.min())
    hi = max(oracle.max(), unlearned.max())
    edges = np.linspace(lo, hi, bins + 1)
    if lo == hi or np.any(np.diff(edges) <= 0):
        # Degenerate or sub-ulp range: fall back to an arbitrary unit span so
        # the edges stay strictly increasing; every sample lands in the same
        # bin and the divergence is zero by construction.
        mid = (lo + hi) / 2.0
        edges = np.linspace(mid - 0.5, mid + 0.5, bins + 1)
    p_counts, _ = np.histogram(oracle, bins=edges)
    q_counts, _ = np.histogram(unlearned, bins=edges)
    p = (p_counts / oracle.shape[0] + epsilon) / (1.0 + bins * epsilon)
    q = (q_counts / unlearned.shape[0] + epsilon) / (1.0 + bins * epsilon)
    return SmoothedHistogramPair(bin_edges=edges, p_oracle=p, q_unlearned=q, epsilon=epsilon)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL divergence sum(p * ln(p / q)) in nats; requires strictly positive inputs."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise InvalidInputError("p and q must be 1-D vectors of equal length")
    if np.any(p <= 0) or np.any(q <= 0):
        raise InvalidInputError("p and q must be strictly positive (smooth them first)")
    if abs(float(p.sum()) - 1.0) > 1e-9 or abs(float(q.sum()) - 1.0) > 1e-9:
        raise InvalidInputError("p and q must each sum to 1")
    return float(np.sum(p * np.log(p / q)))


def klom_point(
    oracle_margins: np.ndarray,
    unlearned_margins: np.ndarray,
    bins: int = DEFAULT_BINS,
    epsilon: float = DEFAULT_EPSILON,
) -> float:
    """Pointwise score: KL(oracle histogram || unlearned histogram)."""
    pair = build_histogram_pair(oracle_margins, unlearned_margins, bins=bins, epsilon=epsilon)
    return kl_divergence(pair.p_oracle, pair.q_unlearned)


def klom_set(
    oracle: MarginTensor,
    unlearned: MarginTensor,
    n_models: int,
    bins: int = DEFAULT_BINS,
    epsilon: float = DEFAULT_EPSILON,
) -> KlomReport:
    """Score every point of a split using the first n_models rows per side."""
    if not oracle.clipped or not unlearned.clipped:
        raise InvalidInputError("margin tensors must be clipped before scoring")
    if oracle.n_points != unlearned.n_points:
        raise InvalidInputError(
            f"point columns differ: {oracle.n_points} vs {unlearned.n_points}"
        )
    if n_models < 2:
        raise InvalidInputError("n_models must be at least 2")
    if n_models > oracle.n_models or n_models > unlearned.n_models:
        raise InvalidInputError(
            f"n_models={n_models} exceeds available rows "
            f"({oracle.n_models} oracle, {unlearned.n_models} unlearned)"
        )
    o = oracle.values[:n_models]
    u = unlearned.values[:n_models]
    per_point = np.empty(oracle.n_points, dtype=np.float64)
    for j in range(oracle.n_points):
        per_point[j] = klom_point(o[:, j], u[:, j], bins=bins, epsilon=epsilon)
    if np.any(per_point < 0) or np.any(per_point > KLOM_CAP):
        raise RuntimeError("pointwise KLoM left the [0, cap] envelope; smoothing is broken")
    return KlomReport(
        per_point=per_point,
        mean=float(per_point.mean()),
        p95=float(np.percentile(per_point, 95)),
        split_label=oracle.split_label,
        n_models_used=n_models,
    )


def teacher_forcing_klom(
    oracle: list[TokenMarginTensor],
    unlearned: list[TokenMarginTensor],
    n_models: int,
    bins: int = DEFAULT_BINS,
    epsilon: float = DEFAULT_EPSILON,
) -> float:
    """Sequence-level score for autoregressive models under teacher forcing.

    Each prediction step gets a pointwise score; a sequence averages its
    steps, and the dataset averages its sequences. Hyperparameters are the
    same as for classification.
    """
    by_id_oracle = {t.sequence_id: t for t in oracle}
    by_id_unlearned = {t.sequence_id: t for t in unlearned}
    if len(by_id_oracle) != len(oracle) or len(by_id_unlearned) != len(unlearned):
        raise InvalidInputError("duplicate sequence ids")
    if by_id_oracle.keys() != by_id_unlearned.keys():
        raise InvalidInputError("oracle and unlearned sequence sets differ")
    if not by_id_oracle:
        raise InvalidInputError("no sequences to score")
    seq_means = []
    for seq_id in sorted(by_id_oracle):
        o, u = by_id_oracle[seq_id], by_id_unlearned[seq_id]
        if o.n_positions != u.n_positions:
            raise InvalidInputError(f"sequence {seq_id!r}: position counts differ")
        if n_models > o.n_models or n_models > u.n_models:
            raise InvalidInputError(f"sequence {seq_id!r}: fewer than {n_models} models")
        per_pos = [
            klom_point(o.values[:n_models, t], u.values[:n_models, t], bins=bins, epsilon=epsilon)
            for t in range(o.n_positions)
        ]
        seq_means.append(float(np.mean(per_pos)))
    return float(np.mean(seq_means))


def sensitivity_curve(
    oracle: MarginTensor,
    unlearned: MarginTensor,
    n_values: list[int],
    bins: int = DEFAULT_BINS,
    epsilon: float = DEFAULT_EPSILON,
) -> list[dict]:
    """Distribution summaries of the pointwise scores for each ensemble size.

    Returns one row per requested N with quartiles, extremes, mean and p95,
    computed on the first N model rows of each tensor.
    """
    if not n_values:
        raise InvalidInputError("n_values must be nonempty")
    for n in n_values:
        if n < 2:
            raise InvalidInputError(f"ensemble size {n} is below the minimum of 2")
    if max(n_values) > min(oracle.n_models, unlearned.n_models):
        raise InvalidInputError("largest N exceeds available models")
    rows = []
    for n in n_values:
        report = klom_set(oracle, unlearned, n, bins=bins, epsilon=epsilon)
        pp = report.per_point
        rows.append(
            {
                "n_models": n,
                "mean": float(pp.mean()),
                "min": float(pp.min()),
                "q25": float(np.percentile(pp, 25)),
                "median": float(np.percentile(pp, 50)),
                "q75": float(np.percentile(pp, 75)),
                "p95": float(np.percentile(pp, 95)),
                "max": float(pp.max()),
            }
        )
    return rows
