"""Command-line entry point.

Every subcommand accepts ``--config FILE`` (JSON mirroring
:class:`~uqmt.experiments.ExperimentConfig`) and a flag per config field,
e.g. ``--seed 3`` or ``--estimators '[{"kind": "HTS"}]'``. Flags win over the
file. Exit codes: 0 success, 2 config error, 3 training failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .calibration import fit_scales_by_tag, fit_variance_scale
from .datagen import DatasetError, SyntheticScenario, generate, load_dataset, save_dataset
from .estimators import load_estimator
from .experiments import (ConfigError, ExperimentConfig, fit_and_calibrate, make_splits, run_bench,
                          run_comparison, run_dup_ablation, run_noisy_reference, run_ood_sharpness,
                          write_predictions_csv)
from .metrics import format_table, report
from .nn import TrainingError

EXIT_OK, EXIT_CONFIG, EXIT_TRAINING, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("uqmt")


class TrainingFailed(Exception):
    pass


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _json(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"not valid JSON: {exc}") from None


def _optional_str(text: str):
    return None if text.lower() in ("", "none", "null") else text


_FIELD_TYPES = {"scenario": _json, "data_path": _optional_str, "estimators": _json, "training": _json,
                "split": _json, "dup_split": _json, "seed": int, "bins": int, "calibrate": _bool,
                "per_tag_calibration": _bool, "bench_repeats": int, "output_dir": _optional_str}


def _config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config")
    for f in fields(ExperimentConfig):
        dashed = f.name.replace("_", "-")
        names = [f"--{f.name}"] + ([f"--{dashed}"] if dashed != f.name else [])
        p.add_argument(*names, dest=f.name, type=_FIELD_TYPES[f.name], default=argparse.SUPPRESS,
                       help=f"override config field {f.name!r}")


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    base = {}
    if getattr(args, "config", None):
        try:
            base = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: {exc}") from None
        if not isinstance(base, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
    for f in fields(ExperimentConfig):
        if f.name in vars(args):
            base[f.name] = getattr(args, f.name)
    if base.get("data_path"):
        base.setdefault("scenario", None)
    try:
        return ExperimentConfig.from_dict(base)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _out_dir(config: ExperimentConfig, default: str) -> Path:
    return Path(config.output_dir or default)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    scenario = dict(args.scenario or {})
    for key in ("kind", "n", "d", "seed"):
        if getattr(args, key) is not None:
            scenario[key] = getattr(args, key)
    try:
        ds = generate(SyntheticScenario(**scenario))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} records to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = build_config(args)
    out = _out_dir(config, "run")
    splits = make_splits(config)
    split_dir = out / "splits"
    split_dir.mkdir(parents=True, exist_ok=True)
    for name in ("train", "error", "dev", "test"):
        save_dataset(getattr(splits, name), split_dir / f"{name}.jsonl")
    for name, cfg in config.estimator_configs().items():
        est = fit_and_calibrate(cfg, splits, config.calibrate, config.per_tag_calibration)
        est.save(out / name)
        print(f"trained {name} -> {out / name}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    est = load_estimator(args.model)
    data = load_dataset(args.data)
    preds = est.predict(data, seed=args.seed, calibrated=False)
    if args.per_tag:
        est.tag_scales, est.calibration = fit_scales_by_tag(preds, data.name), None
        print("scales: " + ", ".join(f"{k}={v.scale:.6g}" for k, v in est.tag_scales.items()))
    else:
        est.calibration, est.tag_scales = fit_variance_scale(preds, data.name), None
        print(f"scale: {est.calibration.scale:.6g}")
    est.save(args.model)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    est = load_estimator(args.model)
    data = load_dataset(args.data)
    preds = est.predict(data, seed=args.seed, calibrated=not args.raw)
    rep = report(preds, args.bins)
    name = Path(args.model).name
    table = format_table({name: rep})
    print(table, end="")
    if args.output_dir:
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "evaluate.json").write_text(json.dumps({"estimator": name, "data": str(args.data),
                                                       "results": rep.to_dict()}, indent=2, sort_keys=True) + "\n")
        (out / "evaluate.txt").write_text(table)
        write_predictions_csv(preds, out / f"evaluate_predictions_{name}.csv")
    return EXIT_OK


def cmd_compare(args) -> int:
    result = run_comparison(build_config(args))
    print(result.table, end="")
    print(f"config hash {result.config_hash}")
    if result.errors:
        raise TrainingFailed(f"{len(result.errors)} estimator(s) failed: {', '.join(result.errors)}")
    return EXIT_OK


def cmd_noisy_ref(args) -> int:
    config = build_config(args)
    acc = run_noisy_reference(config)
    for k, v in acc.items():
        print(f"{k:<10}{v:>8.3f}")
    missing = set(config.estimator_configs()) - set(acc)
    if missing:
        raise TrainingFailed(f"estimator(s) failed: {', '.join(sorted(missing))}")
    return EXIT_OK


def cmd_ood(args) -> int:
    config = build_config(args)
    rows = run_ood_sharpness(config)
    print(f"{'estimator':<10}{'in':>10}{'ood':>10}{'ratio':>10}")
    for k, r in rows.items():
        print(f"{k:<10}{r.in_domain:>10.4f}{r.ood:>10.4f}{r.ratio:>10.3f}")
    missing = set(config.estimator_configs()) - set(rows)
    if missing:
        raise TrainingFailed(f"estimator(s) failed: {', '.join(sorted(missing))}")
    return EXIT_OK


def cmd_bench(args) -> int:
    rows = run_bench(build_config(args))
    print(f"{'estimator':<10}{'train [s]':>12}{'infer [s]':>12}")
    for k, r in rows.items():
        print(f"{k:<10}{r.train_seconds:>12.4f}{r.inference_seconds:>12.5f}")
    return EXIT_OK


def cmd_ablate_dup(args) -> int:
    print(format_table(run_dup_ablation(build_config(args))), end="")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uqmt", description="Uncertainty estimators for regression.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic scenario as JSONL")
    p.add_argument("--scenario", type=_json, help="scenario parameters as JSON")
    p.add_argument("--kind")
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train and calibrate estimators, saving bundles and splits")
    _config_flags(p)
    p.set_defaults(func=cmd_train)

    for name, func, hlp in (("calibrate", cmd_calibrate, "refit the variance scale of a saved estimator"),
                            ("evaluate", cmd_evaluate, "score a saved estimator on a dataset")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--model", required=True, help="estimator bundle directory")
        p.add_argument("--data", required=True, help="JSONL dataset")
        p.add_argument("--seed", type=int, default=0, help="sampling seed for MC estimators")
        if name == "calibrate":
            p.add_argument("--per-tag", action="store_true", help="one scale per domain tag")
        else:
            p.add_argument("--bins", type=int, default=100)
            p.add_argument("--raw", action="store_true", help="skip the stored calibration")
            p.add_argument("--output_dir", "--output-dir", dest="output_dir")
        p.set_defaults(func=func)

    for name, func, hlp in (("compare", cmd_compare, "train, calibrate and score estimators side by side"),
                            ("noisy-ref", cmd_noisy_ref, "clean-vs-noisy reference detection"),
                            ("ood", cmd_ood, "in-domain vs out-of-domain sharpness"),
                            ("bench", cmd_bench, "training and inference wall-clock times"),
                            ("ablate-dup", cmd_ablate_dup, "DUP with each error loss")):
        p = sub.add_parser(name, help=hlp)
        _config_flags(p)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, TrainingFailed) as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (OSError, DatasetError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
