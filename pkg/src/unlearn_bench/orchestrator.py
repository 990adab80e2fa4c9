"""Benchmark protocol driver.

Trains N pretrain models on the full training set, N oracle models per
forget set on the corresponding retain set, applies unlearning methods to
the pretrain ensemble, extracts clipped margin tensors per split, and
computes KLoM reports. Every stage persists through the margin store and is
idempotent: re-running an identical plan verifies digests and reuses the
cached artifacts instead of retraining.

Seed discipline: pretrain member i trains with seed0 + i; oracle members
use a disjoint block at seed0 + oracle_seed_offset (+ a per-forget-set
stride); unlearning configs default to a third block so retrain-style
methods never share randomness with the oracles they are judged against.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import DatasetSpec, materialize
from .errors import InvalidInputError, StorageError
from .forget import ForgetSpec
from .metrics import CLIP_RANGE, KlomReport, MarginTensor, klom_set, margins_from_logits
from .models import Arch, LabeledDataset, TrainConfig, batch_logits, train
from .store import MarginStore
from .unlearning import UnlearnConfig, get_method

ORACLE_SEED_OFFSET = 1_000_000
UNLEARN_SEED_OFFSET = 2_000_000
ORACLE_FORGET_STRIDE = 10_000


@dataclass(frozen=True)
class ExperimentPlan:
    """Everything needed to reproduce one benchmark run."""

    dataset: DatasetSpec
    n_models: int
    train_config: TrainConfig
    forget_specs: tuple[ForgetSpec, ...]
    hidden: tuple[int, ...] = (32,)
    seed0: int = 1000
    methods: tuple[tuple[str, UnlearnConfig], ...] = ()

    def __post_init__(self) -> None:
        if self.n_models < 2:
            raise InvalidInputError("plan needs n_models >= 2")
        names = [s.name for s in self.forget_specs]
        if len(set(names)) != len(names):
            raise InvalidInputError("forget spec names must be unique")

    def forget_spec(self, forget_id: str) -> ForgetSpec:
        for spec in self.forget_specs:
            if spec.name == forget_id:
                return spec
        known = ", ".join(s.name for s in self.forget_specs)
        raise InvalidInputError(f"unknown forget set {forget_id!r}; plan has: {known}")

    def forget_index(self, forget_id: str) -> int:
        for i, spec in enumerate(self.forget_specs):
            if spec.name == forget_id:
                return i
        raise InvalidInputError(f"unknown forget set {forget_id!r}")

    def plan_hash(self) -> str:
        payload = {
            "dataset": self.dataset.to_dict(),
            "train_config": self.train_config.to_dict(),
            "n_models": self.n_models,
            "hidden": list(self.hidden),
            "seed0": self.seed0,
            "forget_specs": {
                s.name: hashlib.sha256(json.dumps(list(s.indices)).encode()).hexdigest()
                for s in self.forget_specs
            },
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    def default_unlearn_seed(self) -> int:
        return self.seed0 + UNLEARN_SEED_OFFSET


@dataclass(frozen=True)
class EnsembleHandle:
    """Reference to a persisted ensemble: who it is and where it lives."""

    kind: str
    forget_id: str | None
    method: str | None
    n_models: int
    seeds: tuple[int, ...] = field(repr=False)

    def __post_init__(self) -> None:
        if self.kind == "pretrain" and self.forget_id is not None:
            raise InvalidInputError("pretrain handles carry no forget_id")
        if self.kind in ("oracle", "unlearned") and self.forget_id is None:
            raise InvalidInputError(f"{self.kind} handles need a forget_id")
        if (self.kind == "unlearned") != (self.method is not None):
            raise InvalidInputError("method set iff kind is 'unlearned'")


# -- worker jobs (module level so a process pool can pickle them) -----------

_WORKER: dict = {}


def _init_train_worker(features, labels, n_classes, arch_dict, cfg_dict):
    _WORKER["dataset"] = LabeledDataset(features, labels, n_classes)
    _WORKER["arch"] = Arch.from_dict(arch_dict)
    _WORKER["cfg"] = cfg_dict


def _train_job(args):
    model_id, seed = args
    cfg = TrainConfig(**{**_WORKER["cfg"], "seed": seed})
    return model_id, train(_WORKER["dataset"], cfg, _WORKER["arch"])


def _init_unlearn_worker(features, labels, n_classes, forget_dict, method_name):
    _WORKER["dataset"] = LabeledDataset(features, labels, n_classes)
    _WORKER["forget"] = ForgetSpec.from_dict(forget_dict)
    _WORKER["method"] = get_method(method_name)


def _unlearn_job(args):
    model_id, params, config = args
    new_params = _WORKER["method"](params, _WORKER["dataset"], _WORKER["forget"], config)
    return model_id, new_params


class Orchestrator:
    """Runs the stages of one plan against one artifact store."""

    def __init__(self, plan: ExperimentPlan, store: MarginStore, workers: int = 1, force: bool = False):
        self.plan = plan
        self.store = store
        self.workers = max(1, workers)
        self.force = force
        self.train_set, self.val_set = materialize(plan.dataset)
        for spec in plan.forget_specs:
            if spec.size >= len(self.train_set):
                raise InvalidInputError(f"forget set {spec.name!r} leaves no retain data")
        self.arch = Arch.classifier(
            self.train_set.n_features, plan.hidden, self.train_set.n_classes
        )
        store.init_manifest(plan.plan_hash(), plan.dataset.to_dict())
        manifest = store.read_manifest()
        for spec in plan.forget_specs:
            if spec.name not in manifest["forget_specs"]:
                store.save_forget_spec(spec)

    # -- seeds -------------------------------------------------------------

    def pretrain_seeds(self) -> tuple[int, ...]:
        return tuple(self.plan.seed0 + i for i in range(self.plan.n_models))

    def oracle_seeds(self, forget_id: str) -> tuple[int, ...]:
        base = (
            self.plan.seed0
            + ORACLE_SEED_OFFSET
            + ORACLE_FORGET_STRIDE * self.plan.forget_index(forget_id)
        )
        return tuple(base + i for i in range(self.plan.n_models))

    # -- ensemble training ---------------------------------------------------

    def _run_jobs(self, jobs, job_fn, initializer, init_args, label: str) -> dict:
        """Run independent member jobs, sequentially or in a process pool.

        Results are keyed by model_id so completion order never matters.
        The first member failure aborts the stage, naming the member.
        """
        results: dict[int, object] = {}
        if self.workers == 1:
            initializer(*init_args)
            for job in jobs:
                model_id = job[0]
                try:
                    key, value = job_fn(job)
                except Exception as exc:
                    raise StorageError(f"{label}: member {model_id} failed: {exc}") from exc
                results[key] = value
            return results
        with ProcessPoolExecutor(
            max_workers=self.workers, initializer=initializer, initargs=init_args
        ) as pool:
            futures = {pool.submit(job_fn, job): job[0] for job in jobs}
            for future, model_id in futures.items():
                try:
                    key, value = future.result()
                except Exception as exc:
                    raise StorageError(f"{label}: member {model_id} failed: {exc}") from exc
                results[key] = value
        return results

    def _ensure_trained_ensemble(
        self,
        kind: str,
        forget_id: str | None,
        dataset: LabeledDataset,
        seeds: tuple[int, ...],
    ) -> EnsembleHandle:
        handle = EnsembleHandle(
            kind=kind, forget_id=forget_id, method=None, n_models=self.plan.n_models, seeds=seeds
        )
        if not self.force and self._reusable(kind, forget_id, None):
            return handle
        self.store.begin_ensemble(kind, forget_id, None, self.plan.n_models, seeds[0])
        jobs = [(i, seed) for i, seed in enumerate(seeds)]
        init_args = (
            dataset.features,
            dataset.labels,
            dataset.n_classes,
            self.arch.to_dict(),
            self.plan.train_config.to_dict(),
        )
        results = self._run_jobs(jobs, _train_job, _init_train_worker, init_args, f"{kind} training")
        for model_id in range(self.plan.n_models):
            self.store.save_checkpoint(results[model_id], kind, forget_id, None, model_id)
        self.store.complete_ensemble(kind, forget_id, None)
        return handle

    def _reusable(self, kind: str, forget_id: str | None, method: str | None) -> bool:
        record = self.store.ensemble_record(kind, forget_id, method)
        if not record or record["status"] != "complete":
            return False
        if record["n_models"] < self.plan.n_models:
            return False
        return self.store.verify_checkpoints(kind, forget_id, method, self.plan.n_models)

    def train_pretrain_ensemble(self) -> EnsembleHandle:
        """N models trained on the full training set."""
        return self._ensure_trained_ensemble("pretrain", None, self.train_set, self.pretrain_seeds())

    def train_oracle_ensemble(self, forget_id: str) -> EnsembleHandle:
        """N models retrained from scratch on the retain set of one forget set."""
        spec = self.plan.forget_spec(forget_id)
        retain = self.train_set.subset(spec.retain_indices(len(self.train_set)))
        return self._ensure_trained_ensemble(
            "oracle", forget_id, retain, self.oracle_seeds(forget_id)
        )

    def apply_unlearning(
        self,
        pretrain: EnsembleHandle,
        method_name: str,
        unlearn_config: UnlearnConfig,
        forget_id: str,
    ) -> EnsembleHandle:
        """Apply one registered method independently to each pretrain member."""
        get_method(method_name)  # fail fast on unknown names
        spec = self.plan.forget_spec(forget_id)
        base_cfg = replace(
            unlearn_config, method_name=method_name, train_config=self.plan.train_config
        )
        member_cfgs = [replace(base_cfg, seed=base_cfg.seed + i) for i in range(pretrain.n_models)]
        handle = EnsembleHandle(
            kind="unlearned",
            forget_id=forget_id,
            method=method_name,
            n_models=pretrain.n_models,
            seeds=tuple(c.seed for c in member_cfgs),
        )
        record = self.store.ensemble_record("unlearned", forget_id, method_name)
        if not self.force and record and record.get("unlearn_config") == base_cfg.to_dict():
            if self._reusable("unlearned", forget_id, method_name):
                return handle
        if record and record.get("unlearn_config") not in (None, base_cfg.to_dict()) and not self.force:
            raise StorageError(
                f"stored {method_name!r} run for {forget_id!r} used a different config; "
                "pass force=True to overwrite"
            )
        self.store.begin_ensemble(
            "unlearned", forget_id, method_name, pretrain.n_models, member_cfgs[0].seed
        )
        manifest = self.store.read_manifest()
        key = self.store.ensemble_key("unlearned", forget_id, method_name)
        manifest["ensembles"][key]["unlearn_config"] = base_cfg.to_dict()
        self.store.write_manifest(manifest)

        jobs = []
        for i in range(pretrain.n_models):
            params = self.store.load_checkpoint("pretrain", None, None, i, expected_arch=self.arch)
            jobs.append((i, params, member_cfgs[i]))
        init_args = (
            self.train_set.features,
            self.train_set.labels,
            self.train_set.n_classes,
            spec.to_dict(),
            method_name,
        )
        results = self._run_jobs(
            jobs, _unlearn_job, _init_unlearn_worker, init_args, f"unlearning {method_name}"
        )
        for model_id in range(pretrain.n_models):
            self.store.save_checkpoint(
                results[model_id], "unlearned", forget_id, method_name, model_id
            )
        self.store.complete_ensemble("unlearned", forget_id, method_name)
        return handle

    # -- margins -------------------------------------------------------------

    def _split_examples(self, split: str, forget_id: str | None) -> tuple[np.ndarray, np.ndarray]:
        if split == "val":
            return self.val_set.features, self.val_set.labels
        if forget_id is None:
            raise InvalidInputError(f"split {split!r} needs a forget_id")
        spec = self.plan.forget_spec(forget_id)
        if split == "forget":
            idx = np.asarray(spec.indices, dtype=np.int64)
        elif split == "retain":
            idx = spec.retain_indices(len(self.train_set))
        else:
            raise InvalidInputError(f"unknown split {split!r}")
        return self.train_set.features[idx], self.train_set.labels[idx]

    def extract_margins(
        self, handle: EnsembleHandle, split: str, forget_id: str | None = None
    ) -> MarginTensor:
        """Clipped margins of every ensemble member on one split's points.

        Row i is model i; columns follow the split's point order (forget
        specs keep their sorted index order, the retain split the sorted
        complement, and the val split the validation set order).
        """
        if handle.kind != "pretrain":
            if forget_id is not None and forget_id != handle.forget_id:
                raise InvalidInputError("forget_id does not match the ensemble handle")
            forget_id = handle.forget_id
        margin_fid = None if (split == "val" and handle.kind == "pretrain") else forget_id
        model_ids = list(range(handle.n_models))
        if not self.force and self.store.verify_margins(
            handle.kind, split, margin_fid, handle.method, model_ids
        ):
            return self.store.load_margins(handle.kind, split, margin_fid, handle.method, model_ids)
        features, labels = self._split_examples(split, forget_id)
        lo, hi = CLIP_RANGE
        rows = np.empty((handle.n_models, features.shape[0]), dtype=np.float32)
        for i in model_ids:
            params = self.store.load_checkpoint(
                handle.kind, handle.forget_id, handle.method, i, expected_arch=self.arch
            )
            margins = margins_from_logits(batch_logits(params, features), labels)
            rows[i] = np.clip(margins, lo, hi).astype(np.float32)
        self.store.save_margins(
            rows, handle.kind, split, margin_fid, handle.method, model_ids, split
        )
        return MarginTensor(values=rows, clipped=True, split_label=split)

    # -- reports ---------------------------------------------------------------

    def run_method(
        self, method_name: str, unlearn_config: UnlearnConfig, forget_id: str
    ) -> dict[str, dict[str, KlomReport]]:
        """Full pipeline for one method: returns KLoM reports per split for
        the method and for the pretrain baseline."""
        pretrain = self.train_pretrain_ensemble()
        oracle = self.train_oracle_ensemble(forget_id)
        unlearned = self.apply_unlearning(pretrain, method_name, unlearn_config, forget_id)
        n = self.plan.n_models
        method_reports: dict[str, KlomReport] = {}
        baseline_reports: dict[str, KlomReport] = {}
        for split in ("forget", "retain", "val"):
            oracle_margins = self.extract_margins(oracle, split, forget_id)
            unlearned_margins = self.extract_margins(unlearned, split, forget_id)
            pretrain_margins = self.extract_margins(pretrain, split, forget_id)
            method_reports[split] = klom_set(oracle_margins, unlearned_margins, n)
            baseline_reports[split] = baseline_klom(pretrain_margins, oracle_margins, n)
        return {"method": method_reports, "baseline": baseline_reports}


def baseline_klom(
    pretrain_margins: MarginTensor, oracle_margins: MarginTensor, n_models: int
) -> KlomReport:
    """How far the pretrain ensemble sits from the oracle ensemble.

    This is the score an unlearning method must undercut to be doing
    better than not unlearning at all.
    """
    return klom_set(oracle_margins, pretrain_margins, n_models)
