"""Mini-batch training with validation-AUC early stopping, and evaluation."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..metrics import alpha_split_analysis, auc, score_matrix_metrics
from ..model import LSIDN, GRUBaseline
from ..numerics import Adam, save_checkpoint
from .config import ExperimentConfig
from .dataset import Dataset, Encoded, encode, eval_batches, eval_pools, training_batch

log = logging.getLogger(__name__)

EVAL_BATCH = 256
_EVAL_STREAM = {"val": 1, "test": 2}


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: LSIDN
    config: ExperimentConfig
    best_params: dict
    best_epoch: int
    best_val_auc: float
    log_rows: list = field(default_factory=list)


def build_model(config: ExperimentConfig, n_rows: int, rng=None) -> LSIDN:
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    if config.model == "gru":
        return GRUBaseline(n_rows, rng, d=config.d, init=config.init_scale)
    return LSIDN(n_rows, rng, d=config.d, heads=config.heads, session_len=config.l,
                 long_len=config.max_seq_len, positional=config.positional, variant=config.variant,
                 init=config.init_scale)


def score(model: LSIDN, enc: Encoded, pools: np.ndarray, with_alpha: bool = False):
    scores = np.zeros(pools.shape)
    alphas = np.zeros(pools.shape)
    for idx, batch in eval_batches(enc, pools, EVAL_BATCH):
        out = model.forward(batch)
        scores[idx] = out.scores.data
        alphas[idx] = out.alpha
    return (scores, alphas) if with_alpha else scores


class Evaluator:
    """Fixed candidate pools per split, shared by every variant trained on a dataset."""

    def __init__(self, dataset: Dataset, config: ExperimentConfig):
        self.dataset = dataset
        self.config = config
        self._pools = {}

    def pools(self, split: str, enc: Encoded) -> np.ndarray:
        if split not in self._pools:
            rng = np.random.default_rng([self.config.seed, _EVAL_STREAM[split]])
            self._pools[split] = eval_pools(enc, self.dataset, self.config.eval_negatives, rng)
        return self._pools[split]

    def metrics(self, model: LSIDN, split: str, enc: Encoded) -> dict:
        scores = score(model, enc, self.pools(split, enc))
        return score_matrix_metrics(enc.user_ids, scores)

    def val_auc(self, model: LSIDN, enc: Encoded) -> float:
        scores = score(model, enc, self.pools("val", enc))
        labels = np.zeros(scores.shape, dtype=int)
        labels[:, 0] = 1
        return auc(list(zip(scores.ravel(), labels.ravel())))


def train(config: ExperimentConfig, dataset: Dataset, evaluator: Evaluator | None = None) -> TrainResult:
    """Train one variant; returns the model loaded with its best-validation parameters."""
    if not dataset.train or not dataset.val:
        raise TrainingError("training and validation splits must be non-empty")
    init_ss, shuffle_ss, neg_ss, aug_ss = np.random.SeedSequence(config.seed).spawn(4)
    model = build_model(config, len(dataset.vocab), np.random.default_rng(init_ss))
    flags = model.flags
    params = model.active_parameters()
    opt = Adam(params, lr=config.lr)
    shuffle_rng, neg_rng, aug_rng = (np.random.default_rng(s) for s in (shuffle_ss, neg_ss, aug_ss))
    evaluator = evaluator or Evaluator(dataset, config)

    train_enc = encode(dataset.train, dataset.vocab, config, flags)
    val_enc = encode(dataset.val, dataset.vocab, config, flags)
    n = len(train_enc)
    best_auc, best_epoch, best_params, stale = -np.inf, 0, model.state_arrays(), 0
    rows = []
    for epoch in range(1, config.max_epochs + 1):
        start = time.perf_counter()
        perm = shuffle_rng.permutation(n)
        sums = {"total": 0.0, "main": 0.0, "ssl": 0.0, "reg": 0.0}
        n_batches = n_ssl = 0
        for lo in range(0, n, config.batch_size):
            idx = perm[lo:lo + config.batch_size]
            if len(np.unique(train_enc.target[idx])) < 2:
                continue
            batch = training_batch(train_enc, idx, config, flags, neg_rng, aug_rng, dataset.vocab)
            bundle = model.loss(batch, lam=config.lam, beta=config.beta, tau=config.tau,
                                denominator=config.ssl_denominator, similarity=config.similarity)
            values = bundle.values()
            if not np.isfinite(values["total"]):
                raise TrainingError(f"non-finite loss at epoch {epoch}: {values}")
            bundle.total.backward()
            opt.step()
            n_batches += 1
            for key in ("total", "main", "reg"):
                sums[key] += values[key]
            if values["ssl"] is not None:
                sums["ssl"] += values["ssl"]
                n_ssl += 1
        if n_batches == 0:
            raise TrainingError("no usable training batch (each needs two distinct positives)")
        val_auc = evaluator.val_auc(model, val_enc)
        improved = val_auc > best_auc
        if improved:
            best_auc, best_epoch, best_params, stale = val_auc, epoch, model.state_arrays(), 0
        else:
            stale += 1
        rows.append({
            "epoch": epoch,
            "variant": config.label,
            "seed": config.seed,
            "loss": sums["total"] / n_batches,
            "main_loss": sums["main"] / n_batches,
            "ssl_loss": sums["ssl"] / n_ssl if n_ssl else None,
            "reg": sums["reg"] / n_batches,
            "val_auc": val_auc,
            "best": improved,
        })
        log.info("epoch %d variant=%s loss=%.4f val_auc=%.4f (%.1fs)", epoch, config.label,
                 rows[-1]["loss"], val_auc, time.perf_counter() - start)
        if stale >= config.patience:
            break
    model.load_arrays(best_params)
    return TrainResult(model, config, best_params, best_epoch, float(best_auc), rows)


def evaluate(model: LSIDN, dataset: Dataset, config: ExperimentConfig, split: str = "test",
             evaluator: Evaluator | None = None) -> dict:
    evaluator = evaluator or Evaluator(dataset, config)
    instances = {"val": dataset.val, "test": dataset.test}[split]
    enc = encode(instances, dataset.vocab, config, model.flags)
    return evaluator.metrics(model, split, enc)


def alpha_analysis(model: LSIDN, dataset: Dataset, config: ExperimentConfig) -> dict:
    """Mean fusion weight on each test target's own positive, grouped by behavior type."""
    enc = encode(dataset.test, dataset.vocab, config, model.flags)
    pools = enc.target[:, None]
    _, alphas = score(model, enc, pools, with_alpha=True)
    groups = [inst.target.behavior.value for inst in enc.instances]
    return alpha_split_analysis(alphas[:, 0], groups, expected=("click", "buy"))


def checkpoint_meta(config: ExperimentConfig, result: TrainResult) -> dict:
    return {"config": config.as_dict(), "best_epoch": result.best_epoch, "best_val_auc": result.best_val_auc}


def save_result(path, result: TrainResult):
    save_checkpoint(path, result.best_params, checkpoint_meta(result.config, result))
