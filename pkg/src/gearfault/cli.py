"""
Command-line interface.

Subcommands ``gen``, ``eda``, ``train``, ``ensemble`` and ``report`` each take
``--config``, ``--out``, ``--seed`` and ``-v``/``-q``. Every command writes
``resolved_config.json`` next to its outputs.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from . import __version__
from .config import RunConfig, load_config
from .dataset import Dataset, load_csv, make_split_plan, save_csv
from .eda import channel_stats, class_stats, export_stats, write_eda_summary
from .ensemble import combine, predict, read_probability_csv, write_probability_csv
from .errors import GearfaultError
from .evaluation import (
    METHODS,
    FoldReport,
    accuracy_percent,
    confusion_matrix,
    confusions_of,
    ensemble_reports,
    load_reports,
    probability_path,
    render_report,
    render_report_pdf,
    report_path,
    run_cv,
    run_fold,
    summarize,
)
from .fileio import read_json, write_json
from .presets import get_preset, preset_gen_config
from .synthgen import generate, sidecar_path, write_sidecar

logger = logging.getLogger("gearfault.cli")

RULES = ("average", "max")


def _override(config: RunConfig, section: Optional[str] = None, **values: Any) -> RunConfig:
    data = config.model_dump()
    target = data if section is None else data[section]
    target.update(values)
    return RunConfig.model_validate(data)


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config = config.with_seed(args.seed)
    if args.out is not None:
        config = _override(config, out=args.out)
    return config


def _load_dataset(path: str, config: RunConfig) -> Dataset:
    """Load a dataset CSV, taking its geometry from the generator sidecar when present."""
    sidecar = sidecar_path(path)
    if sidecar.exists():
        meta = read_json(sidecar)
        gen = meta["config"]
        return load_csv(
            path,
            series_length=gen["series_length"],
            num_channels=gen["num_channels"],
            class_names=meta.get("class_names"),
            sampling_rate_hz=gen["sampling_rate_hz"],
        )
    return load_csv(path, series_length=config.gen.series_length, num_channels=config.gen.num_channels)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen(args: argparse.Namespace, config: RunConfig) -> int:
    if args.preset:
        gen = preset_gen_config(
            get_preset(args.preset),
            samples_per_class=args.per_class or config.gen.samples_per_class,
            seed=config.gen.seed,
            series_length=args.length or config.gen.series_length,
        )
    else:
        updates: Dict[str, Any] = {}
        if args.classes is not None:
            updates.update(num_classes=args.classes, base_freqs_hz=None, class_channel_stddev=None)
        if args.channels is not None:
            updates.update(num_channels=args.channels, class_channel_stddev=None)
        if args.per_class is not None:
            updates["samples_per_class"] = args.per_class
        if args.length is not None:
            updates["series_length"] = args.length
        gen = type(config.gen).model_validate({**config.gen.model_dump(), **updates})
    config = _override(config, "gen", **gen.model_dump())

    dataset = generate(config.gen)
    output = Path(args.output)
    save_csv(dataset, output)
    write_sidecar(config.gen, output)
    config.write_resolved(output.parent / "resolved_config.json")
    print(f"Wrote {len(dataset)} samples to {output}")
    return 0


def cmd_eda(args: argparse.Namespace, config: RunConfig) -> int:
    dataset = _load_dataset(args.data, config)
    out = Path(config.out)
    per_channel = channel_stats(dataset)
    per_class = class_stats(dataset)
    export_stats(per_channel, out / "channel_stats.csv")
    export_stats(per_class, out / "class_stats.csv")
    write_eda_summary(per_channel, per_class, out / "eda_summary.json")
    config.write_resolved(out / "resolved_config.json")
    print(f"Wrote EDA statistics for {len(dataset)} samples to {out}")
    return 0


def _fit_config_to_data(args: argparse.Namespace, config: RunConfig, dataset: Dataset) -> RunConfig:
    for section in ("msresnet", "lstmfcn"):
        config = _override(config, section, num_classes=dataset.num_classes)
        if args.epochs is not None:
            config = _override(config, section, epochs=args.epochs)
    split: Dict[str, Any] = {}
    if args.plan_seed is not None:
        split["seed"] = args.plan_seed
    if args.folds is not None:
        split["num_folds"] = args.folds
    if args.no_stratify:
        split["stratified"] = False
    return _override(config, "split", **split) if split else config


def cmd_train(args: argparse.Namespace, config: RunConfig) -> int:
    dataset = _load_dataset(args.data, config)
    config = _fit_config_to_data(args, config, dataset)
    out = Path(config.out)
    split = config.split
    plan = make_split_plan(dataset, split.num_folds, split.fractions, split.seed, split.stratified)
    write_json(out / "plan.json", plan.to_dict())
    config.write_resolved(out / "resolved_config.json")

    if args.fold is not None:
        reports = [run_fold(dataset, args.model, plan, args.fold, config, out)]
    else:
        reports = run_cv(dataset, args.model, plan, config, out)
    for report in reports:
        print(f"{report.method} fold {report.fold_index}: {report.accuracy_percent:.3f}%")
    if len(reports) > 1:
        summary = summarize(reports)
        print(f"{summary.method}: {summary.mean:.3f} ± {summary.std:.3f}")
    return 0


def cmd_ensemble(args: argparse.Namespace, config: RunConfig) -> int:
    out = Path(config.out)
    mats = [read_probability_csv(p) for p in args.inputs]
    combined = combine(mats, args.rule)
    method = f"ensemble_{args.rule}"
    write_probability_csv(combined, probability_path(out, method, args.fold))
    config.write_resolved(out / "resolved_config.json")
    if combined.has_labels:
        confusion = confusion_matrix(combined.true_labels, predict(combined), combined.num_classes)
        report = FoldReport(args.fold, method, accuracy_percent(confusion), confusion, 0.0)
        report.save(report_path(out, method, args.fold))
        print(f"{method} accuracy: {report.accuracy_percent!r}")
    else:
        logger.warning("Inputs carry no true labels; no accuracy computed")
    return 0


def _ensemble_rows(
    run_dir: Path, out: Path, grouped: Dict[str, List[FoldReport]], rules: Sequence[str]
) -> List[List[FoldReport]]:
    members = [m for m in METHODS if m in grouped]
    if len(members) < 2:
        return []
    folds = sorted(set.intersection(*({r.fold_index for r in grouped[m]} for m in members)))
    seconds_by = {m: {r.fold_index: r.train_seconds for r in grouped[m]} for m in members}
    paths = [[probability_path(run_dir, m, k) for m in members] for k in folds]
    member_seconds = [sum(seconds_by[m][k] for m in members) for k in folds]
    rows = []
    for rule in rules:
        rows.append(ensemble_reports(paths, rule, member_seconds, out, folds))
    return rows


def cmd_report(args: argparse.Namespace, config: RunConfig) -> int:
    out = Path(config.out)
    run_dir = Path(args.runs) if args.runs else out
    grouped = load_reports(run_dir)
    grouped = {m: r for m, r in grouped.items() if not m.startswith("ensemble_")}
    if not grouped:
        raise FileNotFoundError(f"no fold reports found in {run_dir}")
    rows = [grouped[m] for m in METHODS if m in grouped]
    rows += [grouped[m] for m in sorted(grouped) if m not in METHODS]
    rows += _ensemble_rows(run_dir, out, grouped, args.rules)
    summaries = [summarize(reports) for reports in rows]
    confusions = confusions_of([r for reports in rows for r in reports])
    render_report(summaries, confusions, out)
    write_json(out / "summary.json", [s.to_dict() for s in summaries])
    if args.pdf:
        render_report_pdf(summaries, out / "summary.pdf")
    config.write_resolved(out / "resolved_config.json")
    for s in summaries:
        print(f"{s.method}: {s.mean:.3f} ± {s.std:.3f}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Path to a JSON (or YAML) run configuration")
    common.add_argument("--out", help="Output directory (overrides the config's 'out')")
    common.add_argument("--seed", type=int, help="Seed applied to every seeded config section")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings only")

    parser = argparse.ArgumentParser(prog="gearfault", description="Vibration fault-detection ensemble")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[common], help="Generate a synthetic dataset")
    gen.add_argument("-o", "--output", required=True, help="Dataset CSV to write")
    gen.add_argument("--classes", type=int)
    gen.add_argument("--per-class", type=int)
    gen.add_argument("--length", type=int)
    gen.add_argument("--channels", type=int)
    gen.add_argument("--preset", choices=("op1500", "op2700"))
    gen.set_defaults(func=cmd_gen)

    eda = sub.add_parser("eda", parents=[common], help="Per-channel and per-class statistics")
    eda.add_argument("--data", required=True, help="Dataset CSV")
    eda.set_defaults(func=cmd_eda)

    train = sub.add_parser("train", parents=[common], help="Cross-validate one method")
    train.add_argument("--model", required=True, choices=METHODS)
    train.add_argument("--data", required=True, help="Dataset CSV")
    train.add_argument("--plan-seed", type=int, help="Seed of the split plan")
    train.add_argument("--fold", type=int, help="Run only this fold")
    train.add_argument("--folds", type=int, help="Number of folds")
    train.add_argument("--no-stratify", action="store_true")
    train.add_argument("--epochs", type=int, help="Override the deep models' epoch count")
    train.set_defaults(func=cmd_train)

    ens = sub.add_parser("ensemble", parents=[common], help="Combine probability CSVs")
    ens.add_argument("--rule", required=True, choices=RULES)
    ens.add_argument("--inputs", required=True, nargs="+", help="Probability CSVs of the members")
    ens.add_argument("--fold", type=int, default=0, help="Fold id used in output names")
    ens.set_defaults(func=cmd_ensemble)

    report = sub.add_parser("report", parents=[common], help="Summary tables from fold reports")
    report.add_argument("--runs", help="Directory holding fold reports (default: --out)")
    report.add_argument("--rules", nargs="*", choices=RULES, default=list(RULES))
    report.add_argument("--pdf", action="store_true", help="Also render summary.pdf")
    report.set_defaults(func=cmd_report)
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    logging.getLogger("gearfault").setLevel(level)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args)
    try:
        config = _resolve_config(args)
        return args.func(args, config)
    except (GearfaultError, ValueError, OSError) as e:
        logger.error("%s failed: %s", args.command, e)
        print(f"error: {e}", file=sys.stderr)
        return 1
