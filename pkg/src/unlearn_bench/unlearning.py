"""Unlearning algorithms behind one uniform interface.

Every method maps (params, dataset, forget, config) -> new params and is
looked up by name in the UNLEARNING_METHODS dictionary. To add a method,
define a function with that signature here (or in user code) and register
it; the orchestrator and CLI treat all entries identically. Methods derive
the retain set from the full dataset and the forget spec themselves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import (
    DuplicateMethodError,
    InvalidInputError,
    TrainingDivergedError,
    UnknownMethodError,
)
from .forget import ForgetSpec
from .models import (
    NOISE_STREAM,
    SHUFFLE_STREAM,
    LabeledDataset,
    ModelParams,
    TrainConfig,
    loss_and_grad,
    train,
)


@dataclass(frozen=True)
class UnlearnConfig:
    """Free parameters of an unlearning method."""

    method_name: str
    steps: int = 0
    learning_rate: float = 0.0
    noise_scale: float = 0.0
    seed: int = 0
    batch_size: int = 32
    # Full training recipe, consumed only by methods that retrain from
    # scratch; its seed is overridden by this config's seed.
    train_config: TrainConfig | None = None

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise InvalidInputError("steps must be >= 0")
        if self.noise_scale < 0:
            raise InvalidInputError("noise_scale must be >= 0")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        d = {
            "method_name": self.method_name,
            "steps": self.steps,
            "learning_rate": self.learning_rate,
            "noise_scale": self.noise_scale,
            "seed": self.seed,
            "batch_size": self.batch_size,
        }
        if self.train_config is not None:
            d["train_config"] = self.train_config.to_dict()
        return d


UnlearnMethod = Callable[[ModelParams, LabeledDataset, ForgetSpec, UnlearnConfig], ModelParams]

UNLEARNING_METHODS: dict[str, UnlearnMethod] = {}


def register_method(name: str, method: UnlearnMethod) -> None:
    if name in UNLEARNING_METHODS:
        raise DuplicateMethodError(f"method {name!r} is already registered")
    UNLEARNING_METHODS[name] = method


def get_method(name: str) -> UnlearnMethod:
    try:
        return UNLEARNING_METHODS[name]
    except KeyError:
        known = ", ".join(sorted(UNLEARNING_METHODS))
        raise UnknownMethodError(f"unknown method {name!r}; available: {known}") from None


def _sgd_steps(
    params: ModelParams,
    data: LabeledDataset,
    config: UnlearnConfig,
    noise_scale: float,
    ascend: bool = False,
) -> ModelParams:
    """Plain SGD steps on minibatches of ``data`` with optional gradient noise.

    The noise generator is a separate stream from the minibatch shuffler,
    so a zero noise scale reproduces the noiseless schedule exactly.
    """
    out = params.clone()
    if config.steps == 0:
        return out
    if len(data) == 0:
        raise InvalidInputError("no examples to take steps on")
    shuffle_rng = np.random.default_rng([config.seed, SHUFFLE_STREAM])
    noise_rng = np.random.default_rng([config.seed, NOISE_STREAM])
    n = len(data)
    batch = min(config.batch_size, n)
    sign = 1.0 if ascend else -1.0
    for step in range(config.steps):
        idx = shuffle_rng.choice(n, size=batch, replace=False)
        loss, (gw, gb) = loss_and_grad(out, (data.features[idx], data.labels[idx]))
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"non-finite loss at unlearning step {step}")
        for layer in range(len(out.weights)):
            g_w, g_b = gw[layer], gb[layer]
            if noise_scale > 0:
                g_w = g_w + noise_scale * noise_rng.standard_normal(g_w.shape)
                g_b = g_b + noise_scale * noise_rng.standard_normal(g_b.shape)
            out.weights[layer] += sign * config.learning_rate * g_w
            out.biases[layer] += sign * config.learning_rate * g_b
    return out


def _retain_subset(dataset: LabeledDataset, forget: ForgetSpec) -> LabeledDataset:
    return dataset.subset(forget.retain_indices(len(dataset)))


def noisy_descent(
    params: ModelParams, dataset: LabeledDataset, forget: ForgetSpec, config: UnlearnConfig
) -> ModelParams:
    """SGD on the retain set with isotropic Gaussian noise added per gradient."""
    return _sgd_steps(params, _retain_subset(dataset, forget), config, config.noise_scale)


def finetune_retain(
    params: ModelParams, dataset: LabeledDataset, forget: ForgetSpec, config: UnlearnConfig
) -> ModelParams:
    """Noiseless SGD on the retain set; the standard fine-tuning baseline."""
    return _sgd_steps(params, _retain_subset(dataset, forget), config, 0.0)


def gradient_ascent_forget(
    params: ModelParams, dataset: LabeledDataset, forget: ForgetSpec, config: UnlearnConfig
) -> ModelParams:
    """Gradient ascent on the forget-set loss to push forgotten points away."""
    forget_data = dataset.subset(np.asarray(forget.indices, dtype=np.int64))
    return _sgd_steps(params, forget_data, config, 0.0, ascend=True)


def retrain_oracle(
    dataset: LabeledDataset, forget, train_config: TrainConfig, arch
) -> ModelParams:
    """Full training on the retain set: the gold-standard unlearning method."""
    retain_idx = forget.retain_indices(len(dataset))
    return train(dataset.subset(retain_idx), train_config, arch)


def constant_margin_adversary(params: ModelParams) -> ModelParams:
    """Degenerate probe that outputs the same logits for every input.

    Zeroes every weight matrix and hidden bias but keeps the final bias, so
    the forward pass ignores its input entirely. Margins become constant
    per class, which fools indistinguishability-style metrics but is
    heavily penalized when compared against oracle margin distributions.
    """
    out = params.clone()
    for w in out.weights:
        w[:] = 0.0
    for b in out.biases[:-1]:
        b[:] = 0.0
    return out


def _retrain_method(
    params: ModelParams, dataset: LabeledDataset, forget: ForgetSpec, config: UnlearnConfig
) -> ModelParams:
    """Full training on the retain set from scratch: the gold standard."""
    if config.train_config is None:
        raise InvalidInputError("retrain requires config.train_config")
    cfg = replace(config.train_config, seed=config.seed)
    return retrain_oracle(dataset, forget, cfg, params.arch)


def _constant_margin_method(
    params: ModelParams, dataset: LabeledDataset, forget: ForgetSpec, config: UnlearnConfig
) -> ModelParams:
    """Gaming probe: constant logits for every input; heavily penalized."""
    return constant_margin_adversary(params)


register_method("noisy_descent", noisy_descent)
register_method("finetune_retain", finetune_retain)
register_method("gradient_ascent_forget", gradient_ascent_forget)
register_method("retrain", _retrain_method)
register_method("constant_margin_adversary", _constant_margin_method)
