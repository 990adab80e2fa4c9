import csv

import numpy as np
import pytest

from unlearn_bench.cli import main

SMOKE = [
    "--n-train", "120",
    "--n-val", "40",
    "--epochs", "5",
    "--n-models", "4",
]


@pytest.fixture(scope="module")
def smoke_root(tmp_path_factory):
    """One tiny end-to-end run shared by the read-only command tests."""
    root = tmp_path_factory.mktemp("cli_root")
    rc = main(
        ["run", "--root", str(root), "--method", "noisy_descent", "--forget-set", "1",
         "--unlearn-steps", "5", "--unlearn-lr", "0.02"] + SMOKE
    )
    assert rc == 0
    return root


def test_run_prints_three_split_table(smoke_root, capsys):
    rc = main(
        ["run", "--root", str(smoke_root), "--method", "noisy_descent", "--forget-set", "1",
         "--unlearn-steps", "5", "--unlearn-lr", "0.02"] + SMOKE
    )
    out = capsys.readouterr().out
    assert rc == 0
    for token in ("forget", "retain", "val", "baseline_mean", "p95"):
        assert token in out


def test_run_missing_forget_set_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--root", str(tmp_path), "--method", "noisy_descent"] + SMOKE)
    assert exc.value.code != 0


def test_run_unknown_method_nonzero(tmp_path, capsys):
    rc = main(
        ["run", "--root", str(tmp_path), "--method", "nope", "--forget-set", "1"] + SMOKE
    )
    assert rc == 1
    assert "error during" in capsys.readouterr().err


def test_unknown_flag_rejected(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--root", str(tmp_path), "--method", "noisy_descent",
              "--forget-set", "1", "--frobnicate", "3"])
    assert exc.value.code != 0


def test_n_models_floor_enforced(tmp_path):
    with pytest.raises(SystemExit):
        main(["run", "--root", str(tmp_path), "--method", "noisy_descent",
              "--forget-set", "1", "--n-models", "1"])


def test_eval_margins_oracle_vs_itself_zero(smoke_root, capsys):
    rc = main(
        ["eval-margins", "--root", str(smoke_root), "--forget-set", "1", "--phase", "val",
         "--reference", "oracle", "--candidate", "oracle", "--n-models", "4"]
    )
    out = capsys.readouterr().out
    assert rc == 0
    assert "mean:   0" in out


def test_eval_margins_baseline_positive(smoke_root, capsys):
    rc = main(
        ["eval-margins", "--root", str(smoke_root), "--forget-set", "1", "--phase", "forget",
         "--reference", "oracle", "--candidate", "pretrain", "--n-models", "4"]
    )
    out = capsys.readouterr().out
    assert rc == 0
    mean = float(next(line for line in out.splitlines() if line.startswith("mean:")).split()[1])
    assert mean > 0.0


def test_eval_margins_requires_no_retraining(smoke_root, capsys):
    """Margins-only evaluation works even when checkpoints are tampered with,
    because it never touches them."""
    rc = main(
        ["eval-margins", "--root", str(smoke_root), "--forget-set", "1", "--phase", "val",
         "--reference", "oracle", "--candidate", "unlearned:noisy_descent", "--n-models", "4"]
    )
    assert rc == 0


def test_eval_margins_too_many_models_errors(smoke_root, capsys):
    rc = main(
        ["eval-margins", "--root", str(smoke_root), "--forget-set", "1", "--phase", "val",
         "--n-models", "64"]
    )
    assert rc == 1
    assert "stores only" in capsys.readouterr().err


def test_eval_margins_missing_artifacts(tmp_path, capsys):
    rc = main(
        ["eval-margins", "--root", str(tmp_path), "--forget-set", "1", "--phase", "val",
         "--n-models", "4"]
    )
    assert rc == 1


def test_sensitivity_outputs_csv_and_svg(smoke_root, capsys):
    out_dir = smoke_root / "sens"
    rc = main(
        ["sensitivity", "--root", str(smoke_root), "--forget-set", "1",
         "--n-grid", "2,3,4", "--n-models", "4", "--out", str(out_dir)]
    )
    assert rc == 0
    csv_path = out_dir / "sensitivity.csv"
    svg_path = out_dir / "sensitivity.svg"
    assert csv_path.exists() and svg_path.exists()
    with csv_path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 9  # 3 N values x 3 splits
    assert {row["split"] for row in rows} == {"forget", "retain", "val"}
    assert svg_path.read_text().lstrip().startswith("<?xml")


def test_sensitivity_identical_ensembles_flat_zero(smoke_root):
    out_dir = smoke_root / "sens_zero"
    rc = main(
        ["sensitivity", "--root", str(smoke_root), "--forget-set", "1",
         "--n-grid", "2,4", "--n-models", "4", "--out", str(out_dir),
         "--reference", "oracle", "--candidate", "oracle"]
    )
    assert rc == 0
    with (out_dir / "sensitivity.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert all(float(row["p95"]) == 0.0 for row in rows)


def test_report_table_and_csv_agree(smoke_root, capsys):
    csv_path = smoke_root / "report.csv"
    rc = main(
        ["report", "--root", str(smoke_root), "--forget-set", "1", "--n-models", "4",
         "--csv", str(csv_path)]
    )
    out = capsys.readouterr().out
    assert rc == 0
    assert "pretrain_baseline" in out
    with csv_path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert {row["method"] for row in rows} >= {"noisy_descent", "pretrain_baseline"}
    for row in rows:
        for cell in row.values():
            assert cell in out  # the printed table shows the same 6-digit numbers


def test_report_without_runs_errors(tmp_path, capsys):
    rc = main(["report", "--root", str(tmp_path), "--forget-set", "1", "--n-models", "4"])
    assert rc == 1


def test_list_methods(capsys):
    rc = main(["list-methods"])
    out = capsys.readouterr().out
    assert rc == 0
    for name in ("noisy_descent", "retrain", "constant_margin_adversary"):
        assert name in out


def test_forget_set_accepts_spec_path(tmp_path, capsys):
    from unlearn_bench.data import materialize, DatasetSpec
    from unlearn_bench.forget import random_forget

    dataset = DatasetSpec(n_train=120, n_val=40, n_features=20, n_classes=4,
                          seed=DatasetSpec().seed, separation=DatasetSpec().separation)
    spec_dataset = DatasetSpec(n_train=120, n_val=40)
    train_set, _ = materialize(spec_dataset)
    spec = random_forget(train_set, 9, seed=44, name="custom_nine")
    spec_path = tmp_path / "custom.json"
    spec.save(spec_path)
    rc = main(
        ["run", "--root", str(tmp_path / "root"), "--method", "finetune_retain",
         "--forget-set", str(spec_path), "--unlearn-steps", "3", "--unlearn-lr", "0.02"]
        + SMOKE
    )
    out = capsys.readouterr().out
    assert rc == 0
    assert "custom_nine" in out
