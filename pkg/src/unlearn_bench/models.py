"""Minimal deterministic model zoo: a dense softmax classifier and a
fixed-context next-token model built on the same core.

Everything is plain numpy with explicit seeding. One model's training is
single threaded so results are reproducible bit for bit; independent models
can train concurrently because nothing here shares mutable state. Random
streams are separated by purpose (init, shuffling, unlearning noise) so
changing one never perturbs another.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, TrainingDivergedError
from .metrics import margins_from_logits

# Sub-stream tags appended to a seed so the init, shuffle and noise
# generators never share a sequence.
INIT_STREAM = 0
SHUFFLE_STREAM = 1
NOISE_STREAM = 2

MAX_VOCAB = 32


@dataclass(frozen=True)
class Arch:
    """Architecture descriptor for the dense core.

    For the autoregressive variant, ``vocab_size`` and ``context_length``
    are set, the input is ``context_length`` one-hot token slots (vocab
    plus one reserved pad token), and the outputs are next-token logits.
    """

    input_dim: int
    hidden: tuple[int, ...]
    n_classes: int
    vocab_size: int | None = None
    context_length: int | None = None

    def __post_init__(self) -> None:
        widths = (self.input_dim, *self.hidden, self.n_classes)
        if any(w <= 0 for w in widths):
            raise InvalidInputError(f"zero-width layer in architecture {widths}")
        if self.n_classes < 2:
            raise InvalidInputError("need at least 2 output classes")
        if (self.vocab_size is None) != (self.context_length is None):
            raise InvalidInputError("vocab_size and context_length must be set together")
        if self.vocab_size is not None:
            if not 2 <= self.vocab_size <= MAX_VOCAB:
                raise InvalidInputError(f"vocab_size must be in [2, {MAX_VOCAB}]")
            if self.context_length < 1:
                raise InvalidInputError("context_length must be at least 1")
            if self.n_classes != self.vocab_size:
                raise InvalidInputError("autoregressive output width must equal vocab_size")
            expected = self.context_length * (self.vocab_size + 1)
            if self.input_dim != expected:
                raise InvalidInputError(
                    f"autoregressive input_dim must be {expected} (context * (vocab+1))"
                )

    @classmethod
    def classifier(cls, input_dim: int, hidden: tuple[int, ...], n_classes: int) -> "Arch":
        return cls(input_dim=input_dim, hidden=hidden, n_classes=n_classes)

    @classmethod
    def autoregressive(cls, vocab_size: int, context_length: int, hidden: tuple[int, ...]) -> "Arch":
        return cls(
            input_dim=context_length * (vocab_size + 1),
            hidden=hidden,
            n_classes=vocab_size,
            vocab_size=vocab_size,
            context_length=context_length,
        )

    @property
    def is_autoregressive(self) -> bool:
        return self.vocab_size is not None

    @property
    def pad_token(self) -> int:
        if self.vocab_size is None:
            raise InvalidInputError("pad token only exists for autoregressive models")
        return self.vocab_size

    def layer_shapes(self) -> list[tuple[int, int]]:
        widths = (self.input_dim, *self.hidden, self.n_classes)
        return [(widths[i + 1], widths[i]) for i in range(len(widths) - 1)]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "n_classes": self.n_classes,
            "vocab_size": self.vocab_size,
            "context_length": self.context_length,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Arch":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden=tuple(int(h) for h in d["hidden"]),
            n_classes=int(d["n_classes"]),
            vocab_size=None if d.get("vocab_size") is None else int(d["vocab_size"]),
            context_length=None if d.get("context_length") is None else int(d["context_length"]),
        )


@dataclass
class ModelParams:
    """Dense-layer weights and biases plus the seed they were grown from."""

    arch: Arch
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int

    def clone(self) -> "ModelParams":
        return ModelParams(
            arch=self.arch,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            seed=self.seed,
        )

    def allclose(self, other: "ModelParams", rtol: float = 0.0, atol: float = 0.0) -> bool:
        if self.arch != other.arch:
            return False
        return all(
            np.allclose(a, b, rtol=rtol, atol=atol)
            for a, b in zip(self.weights + self.biases, other.weights + other.biases)
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    momentum: float
    epochs: int
    batch_size: int
    seed: int
    weight_decay: float = 0.0
    # Final fine-convergence phase: the last `cooldown_epochs` epochs run at
    # learning_rate * cooldown_factor, shrinking the SGD noise ball so
    # ensemble members settle tightly into their basins.
    cooldown_epochs: int = 0
    cooldown_factor: float = 0.1

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise InvalidInputError("learning_rate must be >= 0")
        if self.epochs < 1:
            raise InvalidInputError("epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if not 0 <= self.cooldown_epochs <= self.epochs:
            raise InvalidInputError("cooldown_epochs must be within total epochs")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "weight_decay": self.weight_decay,
            "cooldown_epochs": self.cooldown_epochs,
            "cooldown_factor": self.cooldown_factor,
        }


@dataclass
class LabeledDataset:
    """Feature matrix with integer class labels."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise InvalidInputError("features must be (n, d) and labels (n,)")
        if self.features.shape[0] != self.labels.shape[0]:
            raise InvalidInputError("features and labels disagree on n")
        if np.any(np.isnan(self.features)):
            raise InvalidInputError("features contain NaN")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise InvalidInputError("labels out of range")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.n_classes)


def init_params(arch: Arch, seed: int) -> ModelParams:
    """Fan-in-scaled uniform weights, zero biases; deterministic in (arch, seed)."""
    rng = np.random.default_rng([seed, INIT_STREAM])
    weights, biases = [], []
    for out_dim, in_dim in arch.layer_shapes():
        bound = 1.0 / math.sqrt(in_dim)
        weights.append(rng.uniform(-bound, bound, size=(out_dim, in_dim)))
        biases.append(np.zeros(out_dim))
    return ModelParams(arch=arch, weights=weights, biases=biases, seed=seed)


def _forward_activations(params: ModelParams, x: np.ndarray) -> list[np.ndarray]:
    """All layer activations for a batch, ending with the logits."""
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        h = z if i == last else np.tanh(z)
        acts.append(h)
    return acts


def batch_logits(params: ModelParams, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.arch.input_dim:
        raise InvalidInputError(
            f"features must be (n, {params.arch.input_dim}), got {features.shape}"
        )
    return _forward_activations(params, features)[-1]


def forward_logits(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Logit vector for a single example."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != params.arch.input_dim:
        raise InvalidInputError(f"expected a {params.arch.input_dim}-dim feature vector")
    return batch_logits(params, x[None, :])[0]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    peak = logits.max(axis=1, keepdims=True)
    shifted = logits - peak
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grad(
    params: ModelParams, batch: tuple[np.ndarray, np.ndarray]
) -> tuple[float, tuple[list[np.ndarray], list[np.ndarray]]]:
    """Mean cross-entropy over the batch and its exact parameter gradients.

    Returns (loss, (weight_grads, bias_grads)) with gradients shaped like
    the parameters they belong to.
    """
    features, labels = batch
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.shape[0] == 0:
        raise InvalidInputError("empty batch")
    acts = _forward_activations(params, features)
    logits = acts[-1]
    n = features.shape[0]
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(n), labels].mean())

    delta = np.exp(logp)
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    w_grads: list[np.ndarray] = [None] * len(params.weights)  # type: ignore[list-item]
    b_grads: list[np.ndarray] = [None] * len(params.biases)  # type: ignore[list-item]
    for layer in range(len(params.weights) - 1, -1, -1):
        a_prev = acts[layer]
        w_grads[layer] = delta.T @ a_prev
        b_grads[layer] = delta.sum(axis=0)
        if layer > 0:
            upstream = delta @ params.weights[layer]
            delta = upstream * (1.0 - acts[layer] ** 2)  # tanh'
    return loss, (w_grads, b_grads)


def train(dataset: LabeledDataset, config: TrainConfig, arch: Arch) -> ModelParams:
    """SGD with momentum over seeded shuffled minibatches.

    Deterministic given (dataset, config, arch). Raises
    TrainingDivergedError naming the epoch if the loss goes non-finite.
    """
    if len(dataset) == 0:
        raise InvalidInputError("cannot train on an empty dataset")
    if dataset.n_features != arch.input_dim:
        raise InvalidInputError("dataset feature width does not match architecture")
    params = init_params(arch, config.seed)
    shuffle_rng = np.random.default_rng([config.seed, SHUFFLE_STREAM])
    vel_w = [np.zeros_like(w) for w in params.weights]
    vel_b = [np.zeros_like(b) for b in params.biases]
    n = len(dataset)
    cooldown_start = config.epochs - config.cooldown_epochs
    for epoch in range(config.epochs):
        lr = config.learning_rate
        if epoch >= cooldown_start:
            lr *= config.cooldown_factor
        order = shuffle_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, (gw, gb) = loss_and_grad(params, (dataset.features[idx], dataset.labels[idx]))
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss in epoch {epoch}")
            for layer in range(len(params.weights)):
                g = gw[layer]
                if config.weight_decay:
                    g = g + config.weight_decay * params.weights[layer]
                vel_w[layer] = config.momentum * vel_w[layer] + g
                vel_b[layer] = config.momentum * vel_b[layer] + gb[layer]
                params.weights[layer] -= lr * vel_w[layer]
                params.biases[layer] -= lr * vel_b[layer]
    return params


def compute_margins(params: ModelParams, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-example margins of the model on the given labeled examples."""
    return margins_from_logits(batch_logits(params, features), labels)


def accuracy(params: ModelParams, dataset: LabeledDataset) -> float:
    preds = batch_logits(params, dataset.features).argmax(axis=1)
    return float((preds == dataset.labels).mean())


# ---------------------------------------------------------------------------
# Autoregressive helpers: sequences are modeled as a classifier over the
# (pad-extended) one-hot encoding of the last context_length tokens.
# ---------------------------------------------------------------------------


def _validate_tokens(sequence: np.ndarray, vocab_size: int) -> np.ndarray:
    seq = np.asarray(sequence, dtype=np.int64)
    if seq.ndim != 1:
        raise InvalidInputError("token sequence must be 1-D")
    if seq.size and (seq.min() < 0 or seq.max() >= vocab_size):
        raise InvalidInputError(f"token out of vocabulary range [0, {vocab_size})")
    return seq


def encode_prefixes(sequence: np.ndarray, arch: Arch) -> np.ndarray:
    """Feature rows for every prediction step of one sequence.

    Row t encodes the last ``context_length`` tokens of the prefix ending
    at position t, left-padded with the reserved pad token. The pad token
    appears only in inputs, never as a prediction target.
    """
    if not arch.is_autoregressive:
        raise InvalidInputError("architecture is not autoregressive")
    seq = _validate_tokens(sequence, arch.vocab_size)
    if seq.shape[0] < 2:
        raise InvalidInputError("need at least 2 tokens to form a prediction step")
    c, slot = arch.context_length, arch.vocab_size + 1
    n_steps = seq.shape[0] - 1
    window = np.full((n_steps, c), arch.pad_token, dtype=np.int64)
    for t in range(n_steps):
        prefix = seq[max(0, t + 1 - c) : t + 1]
        window[t, c - prefix.shape[0] :] = prefix
    features = np.zeros((n_steps, c * slot))
    rows = np.repeat(np.arange(n_steps), c)
    cols = (np.arange(c) * slot)[None, :] + window
    features[rows, cols.ravel()] = 1.0
    return features


def sequence_dataset(sequences: list[np.ndarray], arch: Arch) -> LabeledDataset:
    """Stack (prefix, next-token) pairs from many sequences for training."""
    feats = [encode_prefixes(s, arch) for s in sequences]
    targets = [_validate_tokens(s, arch.vocab_size)[1:] for s in sequences]
    return LabeledDataset(np.vstack(feats), np.concatenate(targets), arch.vocab_size)


def next_token_margins(params: ModelParams, sequence: np.ndarray) -> np.ndarray:
    """Margin of the true next token at every prediction step of a sequence."""
    arch = params.arch
    features = encode_prefixes(sequence, arch)
    targets = _validate_tokens(sequence, arch.vocab_size)[1:]
    return margins_from_logits(batch_logits(params, features), targets)


def token_margin_tensor(models: list[ModelParams], sequence: np.ndarray, sequence_id: str):
    """Stack one sequence's next-token margins across an ensemble."""
    from .metrics import TokenMarginTensor

    rows = np.stack([next_token_margins(m, sequence) for m in models])
    return TokenMarginTensor(values=rows, sequence_id=sequence_id)
