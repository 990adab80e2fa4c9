"""Command-line front end.

Subcommands:
  run           train/reuse ensembles, apply one unlearning method, print KLoM
  eval-margins  score two stored margin ensembles against each other
  sensitivity   KLoM distribution summaries vs ensemble size (CSV + boxplot)
  report        compare every stored method against the pretrain baseline
  list-methods  show the registered unlearning methods

The artifact root comes from --root or the UNLEARN_BENCH_ROOT environment
variable. Numbers are printed with 6 significant digits so runs diff cleanly.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace
from pathlib import Path

from .data import DatasetSpec
from .desk import (
    BUILTIN_FORGET_SETS,
    DESK_DATASET,
    DESK_TRAIN_CONFIG,
    default_unlearn_config,
    desk_plan,
    forget_id_name,
)
from .errors import InvalidInputError, StorageError
from .forget import ForgetSpec
from .metrics import klom_set, sensitivity_curve
from .orchestrator import ExperimentPlan, Orchestrator, baseline_klom
from .store import MarginStore
from .unlearning import UNLEARNING_METHODS, UnlearnConfig

DEFAULT_ROOT_ENV = "UNLEARN_BENCH_ROOT"
DEFAULT_N_GRID = (2, 5, 10, 20, 50, 100)
SPLIT_ORDER = ("forget", "retain", "val")


def fmt(v: float) -> str:
    return f"{v:.6g}"


def _resolve_root(args) -> Path:
    root = args.root or os.environ.get(DEFAULT_ROOT_ENV) or "artifacts"
    return Path(root)


def _resolve_forget(token: str) -> tuple[str, ForgetSpec | None]:
    """A --forget-set value is a built-in id, a spec name, or a spec file."""
    if token.isdigit():
        return forget_id_name(int(token)), None
    path = Path(token)
    if path.exists():
        spec = ForgetSpec.load(path)
        return spec.name, spec
    return token, None


def _build_plan(args, extra_spec: ForgetSpec | None) -> ExperimentPlan:
    dataset = replace(
        DESK_DATASET,
        n_train=args.n_train,
        n_val=args.n_val,
        seed=args.data_seed,
        separation=args.separation,
    )
    cooldown = args.epochs * DESK_TRAIN_CONFIG.cooldown_epochs // DESK_TRAIN_CONFIG.epochs
    train_config = replace(DESK_TRAIN_CONFIG, epochs=args.epochs, cooldown_epochs=cooldown)
    plan = desk_plan(
        n_models=args.n_models, dataset=dataset, train_config=train_config, seed0=args.seed
    )
    if extra_spec is not None and all(s.name != extra_spec.name for s in plan.forget_specs):
        plan = replace(plan, forget_specs=plan.forget_specs + (extra_spec,))
    return plan


def _parse_kind(token: str) -> tuple[str, str | None]:
    if token in ("pretrain", "oracle"):
        return token, None
    if token.startswith("unlearned:"):
        method = token.split(":", 1)[1]
        if not method:
            raise InvalidInputError("use unlearned:<method>")
        return "unlearned", method
    raise InvalidInputError(
        f"bad kind {token!r}; expected pretrain, oracle, or unlearned:<method>"
    )


def _load_margin_pair(store, kind, method, phase, forget_id, n_models):
    margin_fid = None if (kind == "pretrain" and phase == "val") else forget_id
    record = store.ensemble_record(kind, None if kind == "pretrain" else forget_id, method)
    if record is not None and n_models > record["n_models"]:
        raise InvalidInputError(
            f"requested {n_models} models but {kind} stores only {record['n_models']}"
        )
    return store.load_margins(kind, phase, margin_fid, method, list(range(n_models)))


# -- subcommands -------------------------------------------------------------


def cmd_run(args) -> int:
    forget_id, extra_spec = _resolve_forget(args.forget_set)
    plan = _build_plan(args, extra_spec)
    plan.forget_spec(forget_id)  # validate before any training
    store = MarginStore(_resolve_root(args))
    orch = Orchestrator(plan, store, workers=args.workers, force=args.force)
    cfg = default_unlearn_config(args.method, plan)
    if args.unlearn_steps is not None:
        cfg = replace(cfg, steps=args.unlearn_steps)
    if args.unlearn_lr is not None:
        cfg = replace(cfg, learning_rate=args.unlearn_lr)
    if args.noise_scale is not None:
        cfg = replace(cfg, noise_scale=args.noise_scale)

    stage = "setup"
    try:
        stage = "pretrain ensemble"
        pretrain = orch.train_pretrain_ensemble()
        print(f"[ok] {stage}: N={plan.n_models}")
        stage = "oracle ensemble"
        oracle = orch.train_oracle_ensemble(forget_id)
        print(f"[ok] {stage}: forget set {forget_id}")
        stage = f"unlearning ({args.method})"
        unlearned = orch.apply_unlearning(pretrain, args.method, cfg, forget_id)
        print(f"[ok] {stage}")
        stage = "margin extraction and scoring"
        rows = []
        for split in SPLIT_ORDER:
            o = orch.extract_margins(oracle, split, forget_id)
            u = orch.extract_margins(unlearned, split, forget_id)
            p = orch.extract_margins(pretrain, split, forget_id)
            method_report = klom_set(o, u, plan.n_models)
            base_report = baseline_klom(p, o, plan.n_models)
            rows.append((split, method_report, base_report))
        print(f"[ok] {stage}")
    except Exception as exc:
        print(f"error during {stage}: {exc}", file=sys.stderr)
        return 1

    print()
    print(f"KLoM vs oracle ensemble  (method={args.method}, forget_set={forget_id}, "
          f"N={plan.n_models}; lower is better, smoothing cap ~= 11.5)")
    header = f"{'split':<8} {'mean':>12} {'p95':>12} {'baseline_mean':>14} {'baseline_p95':>13}"
    print(header)
    print("-" * len(header))
    for split, rep, base in rows:
        print(
            f"{split:<8} {fmt(rep.mean):>12} {fmt(rep.p95):>12} "
            f"{fmt(base.mean):>14} {fmt(base.p95):>13}"
        )
    return 0


def cmd_eval_margins(args) -> int:
    forget_id, _ = _resolve_forget(args.forget_set)
    store = MarginStore(_resolve_root(args))
    try:
        ref_kind, ref_method = _parse_kind(args.reference)
        cand_kind, cand_method = _parse_kind(args.candidate)
        reference = _load_margin_pair(
            store, ref_kind, ref_method, args.phase, forget_id, args.n_models
        )
        candidate = _load_margin_pair(
            store, cand_kind, cand_method, args.phase, forget_id, args.n_models
        )
        report = klom_set(reference, candidate, args.n_models)
    except Exception as exc:
        print(f"error during margin evaluation: {exc}", file=sys.stderr)
        return 1
    print(
        f"KLoM({args.reference} || {args.candidate})  phase={args.phase} "
        f"forget_set={forget_id} N={args.n_models}"
    )
    print(f"points: {report.per_point.shape[0]}")
    print(f"mean:   {fmt(report.mean)}")
    print(f"p95:    {fmt(report.p95)}")
    return 0


def cmd_sensitivity(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    forget_id, _ = _resolve_forget(args.forget_set)
    store = MarginStore(_resolve_root(args))
    n_values = [int(tok) for tok in args.n_grid.split(",") if tok]
    out_dir = Path(args.out) if args.out else _resolve_root(args) / f"sensitivity_{forget_id}"
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        ref_kind, ref_method = _parse_kind(args.reference)
        cand_kind, cand_method = _parse_kind(args.candidate)
        per_split_rows: dict[str, list[dict]] = {}
        for split in SPLIT_ORDER:
            reference = _load_margin_pair(
                store, ref_kind, ref_method, split, forget_id, max(n_values)
            )
            candidate = _load_margin_pair(
                store, cand_kind, cand_method, split, forget_id, max(n_values)
            )
            per_split_rows[split] = sensitivity_curve(reference, candidate, n_values)
    except Exception as exc:
        print(f"error during sensitivity analysis: {exc}", file=sys.stderr)
        return 1

    csv_path = out_dir / "sensitivity.csv"
    columns = ["split", "n_models", "mean", "min", "q25", "median", "q75", "p95", "max"]
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for split in SPLIT_ORDER:
            for row in per_split_rows[split]:
                writer.writerow([split] + [fmt(row[c]) if c != "n_models" else row[c] for c in columns[1:]])

    fig, axes = plt.subplots(3, 1, figsize=(7, 9), sharex=True)
    for ax, split in zip(axes, SPLIT_ORDER):
        rows = per_split_rows[split]
        stats = [
            {
                "label": str(r["n_models"]),
                "med": r["median"],
                "q1": r["q25"],
                "q3": r["q75"],
                "whislo": r["min"],
                "whishi": r["max"],
                "fliers": [],
            }
            for r in rows
        ]
        ax.bxp(stats, showfliers=False)
        ax.plot(
            range(1, len(rows) + 1),
            [r["p95"] for r in rows],
            "o",
            color="red",
            label="95th percentile",
        )
        ax.set_ylabel("KLoM")
        ax.set_title(f"{split} split")
        ax.legend(loc="upper right", fontsize=8)
    axes[-1].set_xlabel("ensemble size N")
    fig.tight_layout()
    svg_path = out_dir / "sensitivity.svg"
    fig.savefig(svg_path, format="svg")
    plt.close(fig)
    print(f"wrote {csv_path}")
    print(f"wrote {svg_path}")
    return 0


def cmd_report(args) -> int:
    forget_id, _ = _resolve_forget(args.forget_set)
    store = MarginStore(_resolve_root(args))
    try:
        manifest = store.read_manifest()
        methods = sorted(
            rec["method"]
            for rec in manifest["ensembles"].values()
            if rec["kind"] == "unlearned"
            and rec["forget_id"] == forget_id
            and rec["status"] == "complete"
        )
        if not methods:
            raise StorageError(f"no completed unlearned runs stored for {forget_id!r}")
        n = args.n_models
        table: list[tuple[str, dict[str, tuple[float, float]]]] = []
        oracle = {
            split: _load_margin_pair(store, "oracle", None, split, forget_id, n)
            for split in SPLIT_ORDER
        }
        for method in methods:
            cells = {}
            for split in SPLIT_ORDER:
                cand = _load_margin_pair(store, "unlearned", method, split, forget_id, n)
                rep = klom_set(oracle[split], cand, n)
                cells[split] = (rep.mean, rep.p95)
            table.append((method, cells))
        base_cells = {}
        for split in SPLIT_ORDER:
            cand = _load_margin_pair(store, "pretrain", None, split, forget_id, n)
            rep = baseline_klom(cand, oracle[split], n)
            base_cells[split] = (rep.mean, rep.p95)
        table.append(("pretrain_baseline", base_cells))
    except Exception as exc:
        print(f"error during report: {exc}", file=sys.stderr)
        return 1

    table.sort(key=lambda item: item[1]["forget"][0])
    columns = ["method"] + [f"{s}_{m}" for s in SPLIT_ORDER for m in ("mean", "p95")]
    out_rows = []
    for method, cells in table:
        out_rows.append(
            [method] + [fmt(cells[s][i]) for s in SPLIT_ORDER for i in (0, 1)]
        )

    widths = [max(len(r[i]) for r in [columns] + out_rows) for i in range(len(columns))]
    print(f"method comparison  forget_set={forget_id} N={args.n_models} (sorted by forget mean)")
    print("  ".join(c.ljust(w) for c, w in zip(columns, widths)))
    for row in out_rows:
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)))

    csv_path = Path(args.csv) if args.csv else _resolve_root(args) / f"report_{forget_id}.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        writer.writerows(out_rows)
    print(f"wrote {csv_path}")
    return 0


def cmd_list_methods(args) -> int:
    for name in sorted(UNLEARNING_METHODS):
        doc = (UNLEARNING_METHODS[name].__doc__ or "").strip().splitlines()
        summary = doc[0] if doc else ""
        print(f"{name:<28} {summary}")
    return 0


# -- argument parsing ---------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--root", default=None, help=f"artifact root (or ${DEFAULT_ROOT_ENV})")
    parser.add_argument("--n-models", type=int, default=100, help="ensemble size N (>= 2)")


def _add_forget(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--forget-set",
        required=True,
        help="built-in id (1-6), spec name, or path to a serialized forget spec",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unlearn-bench",
        description="Train ensembles, apply unlearning methods, and score them "
        "with the KLoM (KL divergence of margins) metric.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="full pipeline for one method on one forget set")
    _add_common(run)
    _add_forget(run)
    run.add_argument("--method", required=True, help="registered unlearning method name")
    run.add_argument("--seed", type=int, default=1000, help="base seed for the pretrain ensemble")
    run.add_argument("--workers", type=int, default=1, help="parallel training workers")
    run.add_argument("--force", action="store_true", help="recompute instead of reusing cache")
    run.add_argument("--n-train", type=int, default=DESK_DATASET.n_train)
    run.add_argument("--n-val", type=int, default=DESK_DATASET.n_val)
    run.add_argument("--data-seed", type=int, default=DESK_DATASET.seed)
    run.add_argument("--separation", type=float, default=DESK_DATASET.separation)
    run.add_argument("--epochs", type=int, default=DESK_TRAIN_CONFIG.epochs)
    run.add_argument("--unlearn-steps", type=int, default=None)
    run.add_argument("--unlearn-lr", type=float, default=None)
    run.add_argument("--noise-scale", type=float, default=None)
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval-margins", help="score stored margins without any training")
    _add_common(ev)
    _add_forget(ev)
    ev.add_argument("--phase", required=True, choices=["forget", "retain", "val"])
    ev.add_argument("--reference", default="oracle", help="pretrain | oracle | unlearned:<method>")
    ev.add_argument("--candidate", default="pretrain", help="pretrain | oracle | unlearned:<method>")
    ev.set_defaults(func=cmd_eval_margins)

    sens = sub.add_parser("sensitivity", help="KLoM distributions vs ensemble size")
    _add_common(sens)
    _add_forget(sens)
    sens.add_argument("--n-grid", default=",".join(str(n) for n in DEFAULT_N_GRID))
    sens.add_argument("--reference", default="oracle")
    sens.add_argument("--candidate", default="pretrain")
    sens.add_argument("--out", default=None, help="output directory for CSV and SVG")
    sens.set_defaults(func=cmd_sensitivity)

    rep = sub.add_parser("report", help="compare stored methods against the baseline")
    _add_common(rep)
    _add_forget(rep)
    rep.add_argument("--csv", default=None, help="CSV output path")
    rep.set_defaults(func=cmd_report)

    lm = sub.add_parser("list-methods", help="show registered unlearning methods")
    lm.set_defaults(func=cmd_list_methods)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "n_models", 2) < 2:
        parser.error("--n-models must be at least 2")
    try:
        return args.func(args)
    except (ValueError, KeyError, StorageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
