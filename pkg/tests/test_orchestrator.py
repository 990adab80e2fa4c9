import numpy as np
import pytest

from unlearn_bench.data import DatasetSpec
from unlearn_bench.errors import InvalidInputError, StorageError
from unlearn_bench.forget import ForgetSpec, random_forget
from unlearn_bench.metrics import klom_set
from unlearn_bench.models import TrainConfig
from unlearn_bench.orchestrator import (
    ExperimentPlan,
    EnsembleHandle,
    Orchestrator,
    baseline_klom,
)
from unlearn_bench.store import MarginStore
from unlearn_bench.unlearning import UnlearnConfig

SMALL_DATASET = DatasetSpec(
    n_train=120, n_val=40, n_features=6, n_classes=3, seed=77, separation=1.0
)
SMALL_TRAIN = TrainConfig(learning_rate=0.1, momentum=0.9, epochs=5, batch_size=16, seed=0)


def small_plan(n_models=4, **kwargs):
    from unlearn_bench.data import materialize

    train_set, _ = materialize(SMALL_DATASET)
    specs = (
        random_forget(train_set, 12, seed=1, name="fsA"),
        random_forget(train_set, 12, seed=2, name="fsB"),
    )
    defaults = dict(
        dataset=SMALL_DATASET,
        n_models=n_models,
        train_config=SMALL_TRAIN,
        forget_specs=specs,
        hidden=(8,),
        seed0=100,
    )
    defaults.update(kwargs)
    return ExperimentPlan(**defaults)


@pytest.fixture
def orch(tmp_path):
    plan = small_plan()
    store = MarginStore(tmp_path / "root")
    return Orchestrator(plan, store)


def checkpoint_bytes(store, kind, forget_id, method, n):
    return [
        store.checkpoint_path(kind, forget_id, method, i).read_bytes() for i in range(n)
    ]


# -- handles -----------------------------------------------------------------


def test_handle_invariants():
    with pytest.raises(InvalidInputError):
        EnsembleHandle(kind="pretrain", forget_id="x", method=None, n_models=2, seeds=(1, 2))
    with pytest.raises(InvalidInputError):
        EnsembleHandle(kind="oracle", forget_id=None, method=None, n_models=2, seeds=(1, 2))
    with pytest.raises(InvalidInputError):
        EnsembleHandle(kind="unlearned", forget_id="x", method=None, n_models=2, seeds=(1, 2))


def test_plan_validates():
    with pytest.raises(InvalidInputError):
        small_plan(n_models=1)
    with pytest.raises(InvalidInputError):
        small_plan().forget_spec("nope")


# -- training stages -----------------------------------------------------------


def test_pretrain_smoke_two_distinct_checkpoints(tmp_path):
    plan = small_plan(n_models=2)
    orch = Orchestrator(plan, MarginStore(tmp_path / "r"))
    handle = orch.train_pretrain_ensemble()
    blobs = checkpoint_bytes(orch.store, "pretrain", None, None, 2)
    assert blobs[0] != blobs[1]
    assert handle.seeds == (100, 101)


def test_rerun_reuses_cached_checkpoints_bitwise(tmp_path):
    plan = small_plan(n_models=3)
    store = MarginStore(tmp_path / "r")
    Orchestrator(plan, store).train_pretrain_ensemble()
    first = checkpoint_bytes(store, "pretrain", None, None, 3)
    mtimes = [store.checkpoint_path("pretrain", None, None, i).stat().st_mtime_ns for i in range(3)]
    Orchestrator(plan, store).train_pretrain_ensemble()
    second = checkpoint_bytes(store, "pretrain", None, None, 3)
    mtimes2 = [store.checkpoint_path("pretrain", None, None, i).stat().st_mtime_ns for i in range(3)]
    assert first == second
    assert mtimes == mtimes2  # cache hit: files were not rewritten


def test_oracle_ensembles_differ_across_forget_sets(orch):
    orch.train_oracle_ensemble("fsA")
    orch.train_oracle_ensemble("fsB")
    a = checkpoint_bytes(orch.store, "oracle", "fsA", None, 4)
    b = checkpoint_bytes(orch.store, "oracle", "fsB", None, 4)
    assert a != b


def test_seed_discipline(orch):
    pre = orch.train_pretrain_ensemble()
    ora = orch.train_oracle_ensemble("fsA")
    assert not set(pre.seeds) & set(ora.seeds)
    assert not set(orch.oracle_seeds("fsA")) & set(orch.oracle_seeds("fsB"))


def test_wrong_root_plan_rejected(tmp_path):
    store = MarginStore(tmp_path / "r")
    Orchestrator(small_plan(), store)
    other = small_plan(seed0=999)
    with pytest.raises(StorageError, match="different plan"):
        Orchestrator(other, store)


# -- unlearning stage ------------------------------------------------------------


def test_zero_step_method_margins_equal_pretrain(orch):
    pre = orch.train_pretrain_ensemble()
    cfg = UnlearnConfig(method_name="finetune_retain", steps=0, seed=9)
    unl = orch.apply_unlearning(pre, "finetune_retain", cfg, "fsA")
    for split in ("forget", "retain", "val"):
        a = orch.extract_margins(pre, split, "fsA")
        b = orch.extract_margins(unl, split, "fsA")
        assert np.array_equal(a.values, b.values)
        report = klom_set(a, b, 4)
        assert report.mean == 0.0


def test_unknown_method_fails_fast(orch):
    pre = orch.train_pretrain_ensemble()
    with pytest.raises(KeyError):
        orch.apply_unlearning(pre, "no_such_method", UnlearnConfig(method_name="x"), "fsA")


def test_changed_unlearn_config_rejected_without_force(tmp_path):
    plan = small_plan(n_models=2)
    store = MarginStore(tmp_path / "r")
    orch = Orchestrator(plan, store)
    pre = orch.train_pretrain_ensemble()
    orch.apply_unlearning(pre, "finetune_retain", UnlearnConfig(method_name="finetune_retain", steps=2, learning_rate=0.01, seed=1), "fsA")
    with pytest.raises(StorageError, match="different config"):
        orch.apply_unlearning(pre, "finetune_retain", UnlearnConfig(method_name="finetune_retain", steps=3, learning_rate=0.01, seed=1), "fsA")


def test_unlearned_member_derives_from_same_pretrain_member(orch):
    """With zero steps, unlearned checkpoint i equals pretrain checkpoint i's
    parameters (the seed bookkeeping may differ)."""
    pre = orch.train_pretrain_ensemble()
    cfg = UnlearnConfig(method_name="noisy_descent", steps=0, seed=50)
    orch.apply_unlearning(pre, "noisy_descent", cfg, "fsB")
    for i in range(4):
        a = orch.store.load_checkpoint("pretrain", None, None, i)
        b = orch.store.load_checkpoint("unlearned", "fsB", "noisy_descent", i)
        for x, y in zip(a.weights + a.biases, b.weights + b.biases):
            assert np.array_equal(x, y)


# -- margins ----------------------------------------------------------------------


def test_margin_columns_partition_training_set(orch):
    pre = orch.train_pretrain_ensemble()
    forget = orch.extract_margins(pre, "forget", "fsA")
    retain = orch.extract_margins(pre, "retain", "fsA")
    assert forget.n_points + retain.n_points == SMALL_DATASET.n_train
    spec = orch.plan.forget_spec("fsA")
    assert forget.n_points == spec.size


def test_margins_are_clipped_and_float32(orch):
    pre = orch.train_pretrain_ensemble()
    tensor = orch.extract_margins(pre, "val", "fsA")
    assert tensor.clipped
    assert tensor.values.dtype == np.float32
    assert np.all(np.abs(tensor.values) <= 100.0)


def test_val_margins_shared_across_forget_ids_for_pretrain(orch):
    pre = orch.train_pretrain_ensemble()
    a = orch.extract_margins(pre, "val", "fsA")
    path = orch.store.margin_path("pretrain", "val", None, None, 0)
    mtime = path.stat().st_mtime_ns
    b = orch.extract_margins(pre, "val", "fsB")
    assert np.array_equal(a.values, b.values)
    assert path.stat().st_mtime_ns == mtime  # second call reused the artifact


def test_margin_cache_round_trip_exact(orch):
    pre = orch.train_pretrain_ensemble()
    first = orch.extract_margins(pre, "forget", "fsA")
    again = orch.extract_margins(pre, "forget", "fsA")
    assert np.array_equal(first.values, again.values)


def test_baseline_klom_oracle_vs_itself_zero(orch):
    ora = orch.train_oracle_ensemble("fsA")
    margins = orch.extract_margins(ora, "forget", "fsA")
    report = baseline_klom(margins, margins, 4)
    assert report.mean == 0.0


def test_baseline_klom_positive_on_forget_split(tmp_path):
    # enough models and training for a visible pretrain-vs-oracle gap
    plan = small_plan(n_models=8)
    orch = Orchestrator(plan, MarginStore(tmp_path / "r"))
    pre = orch.train_pretrain_ensemble()
    ora = orch.train_oracle_ensemble("fsA")
    p = orch.extract_margins(pre, "forget", "fsA")
    o = orch.extract_margins(ora, "forget", "fsA")
    report = baseline_klom(p, o, 8)
    assert report.mean > 0.0
    assert report.split_label == "forget"


# -- parallel equivalence -----------------------------------------------------------


def test_parallel_training_matches_sequential(tmp_path):
    plan = small_plan(n_models=3)
    seq_store = MarginStore(tmp_path / "seq")
    par_store = MarginStore(tmp_path / "par")
    Orchestrator(plan, seq_store, workers=1).train_pretrain_ensemble()
    Orchestrator(plan, par_store, workers=2).train_pretrain_ensemble()
    assert checkpoint_bytes(seq_store, "pretrain", None, None, 3) == checkpoint_bytes(
        par_store, "pretrain", None, None, 3
    )


def test_run_method_end_to_end(tmp_path):
    plan = small_plan(n_models=3)
    orch = Orchestrator(plan, MarginStore(tmp_path / "r"))
    cfg = UnlearnConfig(method_name="finetune_retain", steps=5, learning_rate=0.05, seed=3)
    out = orch.run_method("finetune_retain", cfg, "fsA")
    for split in ("forget", "retain", "val"):
        assert out["method"][split].mean >= 0.0
        assert out["baseline"][split].mean >= 0.0
        assert out["method"][split].n_models_used == 3
