"""Ablation, robustness and sweep runners plus their JSON-lines / CSV writers."""
from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np

from ..metrics import drop_rate
from ..model import VARIANTS, canonical_variant
from .config import AUGMENTATIONS, ExperimentConfig
from .dataset import build_dataset
from .train import Evaluator, evaluate, train

log = logging.getLogger(__name__)

NOISE_RATES = (0.0, 0.1, 0.2, 0.3)
ROBUSTNESS_VARIANTS = ("full", "w/o SD", "w/o LD")
SWEEP_PARAMS = {"tau": "tau", "lambda": "lam", "lam": "lam", "omega": "omega_minutes",
                "omega_minutes": "omega_minutes"}


def seeds_for(config: ExperimentConfig, n_seeds: int) -> list:
    if n_seeds < 1:
        raise ValueError("need at least one seed")
    return [config.seed + k for k in range(n_seeds)]


def metric_rows(metrics: dict, split: str, variant: str, seed: int, **extra) -> list:
    """One ``{metric, value, split, variant, seed, ...}`` record per metric."""
    return [{"metric": name, "value": float(value), "split": split, "variant": variant, "seed": seed, **extra}
            for name, value in metrics.items()]


def train_and_test(config: ExperimentConfig, dataset, evaluator: Evaluator | None = None) -> dict:
    evaluator = evaluator or Evaluator(dataset, config)
    result = train(config, dataset, evaluator)
    return evaluate(result.model, dataset, config, "test", evaluator)


def run_ablation(config: ExperimentConfig, dataset, n_seeds: int = 1, variants=VARIANTS) -> list:
    """Train and test every variant on a shared dataset and shared evaluation pools."""
    if config.model != "lsidn":
        raise ValueError("ablation variants apply to the lsidn model only")
    rows = []
    for seed in seeds_for(config, n_seeds):
        base = config.replace(seed=seed)
        evaluator = Evaluator(dataset, base)
        for variant in variants:
            cfg = base.replace(variant=canonical_variant(variant))
            metrics = train_and_test(cfg, dataset, evaluator)
            log.info("ablation seed=%d variant=%s AUC=%.4f", seed, cfg.variant, metrics["AUC"])
            rows += metric_rows(metrics, "test", cfg.variant, seed, augmentation=cfg.augmentation)
    return rows


def _robustness_series(variants, augmentations) -> list:
    series = [(canonical_variant(v), "exchange") for v in variants]
    series += [("full", a) for a in augmentations if ("full", a) not in series]
    return series


def run_robustness(config: ExperimentConfig, sequences, rates=NOISE_RATES, n_seeds: int = 1,
                   variants=ROBUSTNESS_VARIANTS, augmentations=AUGMENTATIONS) -> list:
    """Test metrics and drop rates relative to the clean run, per (variant, augmentation) series.

    Noise is injected into train and validation only; the test split and its
    candidate pools are the same at every rate.
    """
    if config.model != "lsidn":
        raise ValueError("robustness variants apply to the lsidn model only")
    rates = [float(r) for r in rates]
    if 0.0 not in rates:
        raise ValueError("robustness needs the clean rate 0 as its reference")
    for kind in augmentations:
        if kind not in AUGMENTATIONS:
            raise ValueError(f"unknown augmentation {kind!r}")
    rates = [0.0] + [r for r in rates if r != 0.0]
    series = _robustness_series(variants, augmentations)
    rows = []
    for seed in seeds_for(config, n_seeds):
        clean = {}
        for rate in rates:
            base = config.replace(seed=seed, noise_rate=rate)
            dataset = build_dataset(sequences, base)
            evaluator = Evaluator(dataset, base)
            for variant, kind in series:
                cfg = base.replace(variant=variant, augmentation=kind)
                metrics = train_and_test(cfg, dataset, evaluator)
                if rate == 0.0:
                    clean[variant, kind] = metrics
                drops = {f"drop_{k}": drop_rate(clean[variant, kind][k], v) for k, v in metrics.items()}
                log.info("robustness seed=%d rate=%.2f %s/%s AUC=%.4f", seed, rate, variant, kind, metrics["AUC"])
                rows += metric_rows({**metrics, **drops}, "test", variant, seed, augmentation=kind, noise_rate=rate)
    return rows


def run_sweep(config: ExperimentConfig, sequences, param: str, values, n_seeds: int = 1) -> list:
    """One train/test per value of ``tau``, ``lambda`` or ``omega``; all else stays at ``config``.

    Changing omega re-divides sessions, so the dataset is rebuilt per value.
    """
    if param not in SWEEP_PARAMS:
        raise ValueError(f"cannot sweep {param!r}; choose from tau, lambda, omega")
    values = [float(v) for v in values]
    if not values:
        raise ValueError("sweep needs at least one value")
    field = SWEEP_PARAMS[param]
    name = {"lam": "lambda", "omega_minutes": "omega"}.get(field, field)
    rows = []
    shared = None if field == "omega_minutes" else build_dataset(sequences, config)
    for seed in seeds_for(config, n_seeds):
        for value in values:
            cfg = config.replace(seed=seed, **{field: value})
            cfg.validate()
            dataset = shared if shared is not None else build_dataset(sequences, cfg)
            metrics = train_and_test(cfg, dataset)
            log.info("sweep seed=%d %s=%g AUC=%.4f", seed, name, value, metrics["AUC"])
            rows += metric_rows(metrics, "test", cfg.label, seed, param=name, param_value=value)
    return rows


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def write_jsonl(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path) -> list:
    with Path(path).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]


def summarize(rows) -> list:
    """Aggregate rows over seeds: mean, median, std and count per remaining key combination."""
    groups = {}
    for row in rows:
        key = tuple(sorted((k, v) for k, v in row.items() if k not in ("value", "seed")))
        groups.setdefault(key, []).append(row["value"])
    out = []
    for key, values in groups.items():
        v = np.asarray(values, dtype=np.float64)
        out.append({**dict(key), "n_seeds": len(v), "mean": float(v.mean()), "median": float(np.median(v)),
                    "std": float(v.std())})
    return out


def write_csv_summary(rows, path):
    summary = summarize(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = []
    for row in summary:
        keys += [k for k in row if k not in keys]
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(summary)
    return summary


def median_value(rows, metric: str, **match) -> float:
    """Median over seeds of ``metric`` among rows matching every ``match`` field."""
    vals = [r["value"] for r in rows if r["metric"] == metric and all(r.get(k) == v for k, v in match.items())]
    if not vals:
        raise KeyError(f"no rows for metric {metric!r} matching {match}")
    return float(np.median(vals))
