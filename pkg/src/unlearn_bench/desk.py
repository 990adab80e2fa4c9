"""Default desk-scale benchmark: a seeded Gaussian-mixture task small enough
to regenerate end to end in minutes, with built-in forget sets numbered 1-6
(random and principal-component selections of 10, 100 and 1000 points)."""

from __future__ import annotations

from .data import DatasetSpec, materialize
from .forget import ForgetSpec, pca_forget, random_forget
from .models import TrainConfig
from .orchestrator import ExperimentPlan
from .unlearning import UnlearnConfig

# The class overlap is deliberate: unlearning only measurably changes points
# that are genuinely contested, and low separation gives every forget set a
# strong pretrain-vs-oracle signal. The cooldown phase settles each member
# tightly into its basin so ensemble spread reflects seeds, not SGD wobble.
DESK_DATASET = DatasetSpec(
    n_train=2000,
    n_val=500,
    n_features=20,
    n_classes=4,
    seed=1234,
    separation=0.35,
)

DESK_HIDDEN = (64,)

DESK_TRAIN_CONFIG = TrainConfig(
    learning_rate=0.15,
    momentum=0.9,
    epochs=100,
    batch_size=64,
    seed=0,  # placeholder; the orchestrator seeds each member
    weight_decay=0.0,
    cooldown_epochs=30,
    cooldown_factor=0.05,
)

# Built-in forget set ids, mirroring sizes from 10 to 1000 points.
BUILTIN_FORGET_SETS: dict[int, tuple[str, int]] = {
    1: ("random", 10),
    2: ("random", 100),
    3: ("random", 1000),
    4: ("pca", 10),
    5: ("pca", 100),
    6: ("pca", 1000),
}

_RANDOM_SELECT_SEED = 501


def desk_forget_specs(dataset_spec: DatasetSpec = DESK_DATASET) -> tuple[ForgetSpec, ...]:
    """The built-in forget sets for a dataset descriptor, in id order.

    Sizes that do not fit the dataset (size >= n) are skipped, so shrunken
    smoke-test datasets still expose the ids that make sense for them.
    """
    train, _ = materialize(dataset_spec)
    specs = []
    for fid in sorted(BUILTIN_FORGET_SETS):
        strategy, size = BUILTIN_FORGET_SETS[fid]
        if size >= len(train):
            continue
        if strategy == "random":
            specs.append(random_forget(train, size, seed=_RANDOM_SELECT_SEED + fid))
        else:
            specs.append(pca_forget(train, size))
    return tuple(specs)


def forget_id_name(fid: int) -> str:
    if fid not in BUILTIN_FORGET_SETS:
        raise KeyError(f"built-in forget set ids are {sorted(BUILTIN_FORGET_SETS)}")
    strategy, size = BUILTIN_FORGET_SETS[fid]
    return f"{strategy}_{size}"


def desk_plan(
    n_models: int = 100,
    dataset: DatasetSpec = DESK_DATASET,
    train_config: TrainConfig = DESK_TRAIN_CONFIG,
    hidden: tuple[int, ...] = DESK_HIDDEN,
    seed0: int = 1000,
) -> ExperimentPlan:
    return ExperimentPlan(
        dataset=dataset,
        n_models=n_models,
        train_config=train_config,
        forget_specs=desk_forget_specs(dataset),
        hidden=hidden,
        seed0=seed0,
    )


def default_unlearn_config(method_name: str, plan: ExperimentPlan) -> UnlearnConfig:
    """Tuned-for-the-desk-benchmark defaults for the shipped methods.

    Trained members sit in deep minima where retain gradients are tiny, so
    meaningful unlearning needs either many hot steps (finetune) or a noise
    kick that re-randomizes the basin before retain SGD re-converges
    (noisy descent).
    """
    base = dict(method_name=method_name, seed=plan.default_unlearn_seed(), batch_size=64)
    if method_name == "noisy_descent":
        return UnlearnConfig(steps=1500, learning_rate=0.15, noise_scale=0.05, **base)
    if method_name == "finetune_retain":
        return UnlearnConfig(steps=2000, learning_rate=0.15, **base)
    if method_name == "gradient_ascent_forget":
        return UnlearnConfig(steps=10, learning_rate=0.01, **base)
    return UnlearnConfig(**base)
