"""Command-line entry point: ``lsidn <subcommand> ...``.

Every subcommand writes JSON lines (one record per metric) and, where rows
aggregate over seeds, a CSV summary.  Failures exit nonzero with one line
on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..model import VARIANTS
from ..numerics import load_checkpoint
from .config import AUGMENTATIONS, ConfigError, ExperimentConfig, SyntheticSpec, load_config, load_spec
from .dataset import build_dataset
from .experiments import (NOISE_RATES, ROBUSTNESS_VARIANTS, metric_rows, run_ablation, run_robustness, run_sweep,
                          write_csv_summary, write_jsonl)
from .storage import load_sequences, preprocess, resolve_omega
from .synthetic import generate_synthetic
from .train import TrainingError, alpha_analysis, build_model, evaluate, save_result, train

log = logging.getLogger("lsidn")


def _floats(text: str) -> list:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("expected at least one value")
    return values


def _names(text: str) -> list:
    return [v.strip() for v in text.split(",") if v.strip()]


def _config(args) -> tuple:
    if getattr(args, "config", None):
        return load_config(args.config)
    return ExperimentConfig(), set()


def _experiment_inputs(args) -> tuple:
    """(config, sequences) with the data directory's omega unless the config overrides it."""
    config, set_keys = _config(args)
    if getattr(args, "seed", None) is not None:
        config = config.replace(seed=args.seed)
    if args.data:
        sequences, meta = load_sequences(args.data)
    else:
        sequences, meta = _default_sequences(), {}
    return resolve_omega(config, set_keys, meta), [s for s in sequences if len(s)]


def _default_sequences():
    from ..data import events_to_sequences
    from .synthetic import generate_events
    return events_to_sequences(generate_events(SyntheticSpec()))


def _emit(rows, out: str | None, name: str):
    """Rows go to ``out/name.jsonl`` plus a CSV summary, or to stdout as JSON lines."""
    if out:
        out_dir = Path(out)
        write_jsonl(rows, out_dir / f"{name}.jsonl")
        write_csv_summary(rows, out_dir / f"{name}_summary.csv")
    else:
        for row in rows:
            print(json.dumps(row, sort_keys=True))


def _model_from_checkpoint(path):
    arrays, meta = load_checkpoint(path)
    if "config" not in meta:
        raise ValueError(f"{path}: checkpoint lacks its training config")
    config = ExperimentConfig(**meta["config"])
    return arrays, config


def _restore(arrays, config, dataset):
    model = build_model(config, len(dataset.vocab))
    model.load_arrays(arrays)
    return model


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args):
    spec = load_spec(args.spec) if args.spec else SyntheticSpec()
    if args.seed is not None:
        spec.seed = args.seed
    events = generate_synthetic(spec, args.out)
    print(json.dumps({"events": len(events), "out": args.out}))


def cmd_preprocess(args):
    info = preprocess(args.events, args.omega, args.out, max_len=args.max_len)
    print(json.dumps(info["meta"], sort_keys=True))


def cmd_train(args):
    config, sequences = _experiment_inputs(args)
    dataset = build_dataset(sequences, config)
    result = train(config, dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_result(out / "checkpoint.json", result)
    write_jsonl(result.log_rows, out / "train_log.jsonl")
    rows = []
    for split in ("val", "test"):
        rows += metric_rows(evaluate(result.model, dataset, config, split), split, config.label, config.seed)
    _emit(rows, args.out, "metrics")
    print(json.dumps({"best_epoch": result.best_epoch, "best_val_auc": result.best_val_auc,
                      "checkpoint": str(out / "checkpoint.json")}))


def cmd_eval(args):
    arrays, config = _model_from_checkpoint(args.checkpoint)
    sequences, _ = load_sequences(args.data)
    dataset = build_dataset([s for s in sequences if len(s)], config)
    model = _restore(arrays, config, dataset)
    rows = metric_rows(evaluate(model, dataset, config, args.split), args.split, config.label, config.seed)
    _emit(rows, args.out, "metrics")


def cmd_ablate(args):
    config, sequences = _experiment_inputs(args)
    dataset = build_dataset(sequences, config)
    variants = _names(args.variants) if args.variants else VARIANTS
    _emit(run_ablation(config, dataset, n_seeds=args.seeds, variants=variants), args.out, "ablation")


def cmd_robustness(args):
    config, sequences = _experiment_inputs(args)
    rows = run_robustness(config, sequences, rates=args.rates, n_seeds=args.seeds,
                          variants=_names(args.variants), augmentations=_names(args.augmentations))
    _emit(rows, args.out, "robustness")


def cmd_sweep(args):
    config, sequences = _experiment_inputs(args)
    rows = run_sweep(config, sequences, args.param, args.values, n_seeds=args.seeds)
    _emit(rows, args.out, f"sweep_{args.param}")


def cmd_analyze_alpha(args):
    arrays, config = _model_from_checkpoint(args.checkpoint)
    sequences, _ = load_sequences(args.data)
    dataset = build_dataset([s for s in sequences if len(s)], config)
    model = _restore(arrays, config, dataset)
    report = alpha_analysis(model, dataset, config)
    rows = []
    for group, stats in report.items():
        rows.append({"metric": "mean_alpha", "value": stats["mean_alpha"], "group": group, "count": stats["count"],
                     "split": "test", "variant": config.label, "seed": config.seed})
    _emit(rows, args.out, "alpha")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lsidn", description="Long/short-term interest recommender experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic event log")
    p.add_argument("--spec", help="key = value synthetic spec file (defaults when omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="normalise an event log and record session diagnostics")
    p.add_argument("--events", required=True)
    p.add_argument("--omega", type=float, required=True, help="session gap threshold in minutes")
    p.add_argument("--out", required=True)
    p.add_argument("--max-len", type=int, help="keep only each user's most recent events")
    p.set_defaults(func=cmd_preprocess)

    def experiment(name, helptext, data_required=True, out_required=False):
        q = sub.add_parser(name, help=helptext)
        q.add_argument("--config")
        q.add_argument("--data", required=data_required,
                       help="preprocessed directory or event TSV" + ("" if data_required else
                                                                    " (default synthetic data when omitted)"))
        q.add_argument("--out", required=out_required)
        q.add_argument("--seed", type=int, help="override the config seed")
        return q

    p = experiment("train", "train one variant and save its best checkpoint", out_required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("val", "test"), default="test")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = experiment("ablate", "train and test the ablation variants")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--variants", help=f"comma-separated subset of: {', '.join(VARIANTS)}")
    p.set_defaults(func=cmd_ablate)

    p = experiment("robustness", "noise-injection drop rates")
    p.add_argument("--rates", type=_floats, default=list(NOISE_RATES))
    p.add_argument("--variants", default=",".join(ROBUSTNESS_VARIANTS))
    p.add_argument("--augmentations", default=",".join(AUGMENTATIONS))
    p.add_argument("--seeds", type=int, default=1)
    p.set_defaults(func=cmd_robustness)

    p = experiment("sweep", "one-parameter sensitivity sweep", data_required=False)
    p.add_argument("--param", required=True, choices=("tau", "lambda", "omega"))
    p.add_argument("--values", type=_floats, required=True)
    p.add_argument("--seeds", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze-alpha", help="mean fusion weight per behavior type on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze_alpha)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, TrainingError, ValueError, KeyError, OSError) as exc:
        message = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"lsidn {args.command}: error: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
