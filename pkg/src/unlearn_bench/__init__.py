"""Desk-scale benchmark harness for evaluating machine unlearning with the
KLoM (KL divergence of margins) metric."""

from .data import DatasetSpec, materialize
from .forget import ForgetSpec, first_principal_component, pca_forget, random_forget
from .metrics import (
    KlomReport,
    MarginTensor,
    TokenMarginTensor,
    build_histogram_pair,
    clip_margins,
    compute_margin,
    kl_divergence,
    klom_point,
    klom_set,
    sensitivity_curve,
    teacher_forcing_klom,
)
from .models import (
    Arch,
    LabeledDataset,
    ModelParams,
    TrainConfig,
    compute_margins,
    forward_logits,
    init_params,
    loss_and_grad,
    next_token_margins,
    train,
)
from .orchestrator import EnsembleHandle, ExperimentPlan, Orchestrator, baseline_klom
from .store import MarginStore
from .unlearning import (
    UNLEARNING_METHODS,
    UnlearnConfig,
    constant_margin_adversary,
    finetune_retain,
    get_method,
    gradient_ascent_forget,
    noisy_descent,
    register_method,
    retrain_oracle,
)

__version__ = "0.1.0"

__all__ = [
    "Arch",
    "DatasetSpec",
    "EnsembleHandle",
    "ExperimentPlan",
    "ForgetSpec",
    "KlomReport",
    "LabeledDataset",
    "MarginStore",
    "MarginTensor",
    "ModelParams",
    "Orchestrator",
    "TokenMarginTensor",
    "TrainConfig",
    "UNLEARNING_METHODS",
    "UnlearnConfig",
    "baseline_klom",
    "build_histogram_pair",
    "clip_margins",
    "compute_margin",
    "compute_margins",
    "constant_margin_adversary",
    "finetune_retain",
    "first_principal_component",
    "forward_logits",
    "get_method",
    "gradient_ascent_forget",
    "init_params",
    "kl_divergence",
    "klom_point",
    "klom_set",
    "loss_and_grad",
    "materialize",
    "next_token_margins",
    "noisy_descent",
    "pca_forget",
    "random_forget",
    "register_method",
    "retrain_oracle",
    "sensitivity_curve",
    "teacher_forcing_klom",
    "train",
]
