"""Experiment and synthetic-data configuration, read from ``key = value`` files."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from ..augment import BASELINE_KINDS
from ..model import canonical_variant

AUGMENTATIONS = ("exchange",) + BASELINE_KINDS
MODELS = ("lsidn", "gru")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    d: int = 40
    batch_size: int = 500
    max_seq_len: int = 50
    b: int = 5
    l: int = 10  # noqa: E741
    r: int = 30
    gamma: float = 0.4
    lam: float = 0.1
    beta: float = 0.1
    tau: float = 0.2
    omega_minutes: float = 360.0
    n_scored: int = 5
    lr: float = 1e-3
    init_scale: float = 0.01
    patience: int = 5
    max_epochs: int = 30
    seed: int = 0
    variant: str = "full"
    model: str = "lsidn"
    ssl_denominator: str = "standard"
    similarity: str = "dot"
    augmentation: str = "exchange"
    noise_rate: float = 0.0
    eval_negatives: int = 49
    heads: int = 2
    positional: bool = True
    val_frac: float = 0.1
    test_frac: float = 0.1

    def __post_init__(self):
        self.variant = canonical_variant(self.variant)
        self.validate()

    @property
    def label(self) -> str:
        """Variant name for LSIDN runs, the model name for baselines."""
        return self.variant if self.model == "lsidn" else self.model

    @property
    def omega_seconds(self) -> float:
        return self.omega_minutes * 60.0

    def validate(self):
        for name in ("d", "batch_size", "max_seq_len", "b", "l", "r", "n_scored", "patience",
                     "max_epochs", "eval_negatives", "heads"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("tau", "omega_minutes", "lr", "init_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.lam < 0 or self.beta < 0:
            raise ConfigError("lam and beta must be non-negative")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if not 0.0 <= self.noise_rate <= 0.5:
            raise ConfigError("noise_rate must lie in [0, 0.5]")
        if self.n_scored < 2:
            raise ConfigError("n_scored must be at least 2 (one positive, one negative)")
        if self.d % self.heads:
            raise ConfigError("d must be divisible by heads")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {', '.join(MODELS)}")
        if self.ssl_denominator not in ("standard", "literal"):
            raise ConfigError("ssl_denominator must be 'standard' or 'literal'")
        if self.similarity not in ("dot", "cosine"):
            raise ConfigError("similarity must be 'dot' or 'cosine'")
        if self.augmentation not in AUGMENTATIONS:
            raise ConfigError(f"augmentation must be one of {', '.join(AUGMENTATIONS)}")
        if not (0 < self.val_frac < 1 and 0 < self.test_frac < 1 and self.val_frac + self.test_frac < 1):
            raise ConfigError("val_frac and test_frac must be in (0, 1) and sum below 1")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class SyntheticSpec:
    n_users: int = 200
    n_items: int = 500
    n_categories: int = 20
    sessions_per_user: int = 6
    session_len_min: int = 3
    session_len_max: int = 8
    omega_minutes: float = 360.0
    intra_gap_min: float = 1.0        # minutes
    intra_gap_max: float = 30.0
    inter_gap_min: float = 720.0
    inter_gap_max: float = 2880.0
    long_pref_strength: float = 0.5
    intent_switch_prob: float = 0.1
    noise_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.n_categories < 2:
            raise ConfigError("n_categories must be at least 2")
        if self.n_items < self.n_categories:
            raise ConfigError("need at least one item per category")
        if self.n_users < 1 or self.sessions_per_user < 1:
            raise ConfigError("n_users and sessions_per_user must be positive")
        if not 1 <= self.session_len_min <= self.session_len_max:
            raise ConfigError("session length range must satisfy 1 <= min <= max")
        if not 0 < self.intra_gap_min <= self.intra_gap_max < self.omega_minutes:
            raise ConfigError("intra-session gaps must stay below omega")
        if not self.omega_minutes < self.inter_gap_min <= self.inter_gap_max:
            raise ConfigError("inter-session gaps must exceed omega")
        for name in ("long_pref_strength", "intent_switch_prob", "noise_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")


_ALIASES = {"lambda": "lam", "omega": "omega_minutes", "batch": "batch_size", "N": "n_scored"}


def _coerce(kind, raw: str, key: str):
    try:
        if kind in (bool, "bool"):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(kind, '__name__', kind)}") from None


def parse_key_values(text: str, cls, source: str = "<config>") -> tuple:
    """Parse ``key = value`` lines into ``cls``; returns (instance, keys that were set)."""
    types = {f.name: f.type for f in fields(cls)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key, key)
        if key not in types:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(types[key], raw, key)
    try:
        return cls(**values), set(values)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> tuple:
    return parse_key_values(Path(path).read_text(), ExperimentConfig, str(path))


def load_spec(path) -> SyntheticSpec:
    return parse_key_values(Path(path).read_text(), SyntheticSpec, str(path))[0]


def dump_key_values(obj) -> str:
    return "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(obj).items())
