"""Turn event sequences into time-split instance sets and fixed-shape batches."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..augment import MASK_ITEM, make_views
from ..data import Event, Session, events_to_sequences, prefix_expand, sample_negative_items, sess_div
from ..encoders import log_gaps
from ..model import VariantFlags
from .config import ExperimentConfig

PAD, MASK = 0, 1


class Vocab:
    """Item id <-> embedding row; rows 0 and 1 are padding and the mask token."""

    def __init__(self, item_ids):
        self.items = sorted(set(item_ids))
        self._index = {item: k + 2 for k, item in enumerate(self.items)}
        self._index[MASK_ITEM] = MASK

    def __len__(self):
        return len(self.items) + 2

    def index(self, item_id) -> int:
        try:
            return self._index[item_id]
        except KeyError:
            raise KeyError(f"item {item_id!r} not in vocabulary") from None

    def indices(self, item_ids) -> list:
        return [self.index(i) for i in item_ids]


@dataclass
class Dataset:
    sequences: list
    config: ExperimentConfig
    vocab: Vocab
    train: list
    val: list
    test: list
    cutoffs: tuple
    user_items: dict = field(repr=False)
    item_category: dict = field(repr=False)


def time_cutoffs(sequences, val_frac: float, test_frac: float) -> tuple:
    stamps = np.array([e.timestamp for s in sequences for e in s.events], dtype=np.float64)
    if stamps.size == 0:
        raise ValueError("no events to split")
    return (float(np.quantile(stamps, 1.0 - val_frac - test_frac)),
            float(np.quantile(stamps, 1.0 - test_frac)))


def _clip_future(inst, t_end: float):
    fut = inst.future_sub_session
    if fut is None:
        return inst
    kept = tuple(e for e in fut.events if e.timestamp < t_end)
    return replace(inst, future_sub_session=Session(kept, fut.index) if kept else None)


def split_instances(sequences, config: ExperimentConfig) -> tuple:
    """Expand every user and assign instances to train/val/test by target time.

    Training futures are clipped at the validation cutoff; evaluation
    instances carry no future sub-session at all.
    """
    t_val, t_test = time_cutoffs(sequences, config.val_frac, config.test_frac)
    train, val, test = [], [], []
    for seq in sequences:
        sessions = sess_div(seq, config.omega_seconds)
        for inst in prefix_expand(sessions, config.r, config.b, seq.user_id):
            t = inst.target.timestamp
            if t < t_val:
                train.append(_clip_future(inst, t_val))
            elif t < t_test:
                val.append(inst.without_future())
            else:
                test.append(inst.without_future())
    return train, val, test, (t_val, t_test)


def inject_noise(instances, rate: float, rng, user_items: dict, catalog) -> list:
    """Append floor(rate * n) positive-labelled instances whose targets the user never touched.

    Each adversarial instance reuses the context of a randomly chosen original.
    """
    if not 0.0 <= rate <= 0.5:
        raise ValueError(f"noise rate {rate} outside [0, 0.5]")
    n_add = int(np.floor(rate * len(instances) + 1e-9))
    if n_add == 0:
        return list(instances)
    items = sorted(catalog)
    added = []
    for k in rng.integers(0, len(instances), size=n_add):
        base = instances[int(k)]
        seen = user_items[base.user_id]
        while True:
            item = items[int(rng.integers(len(items)))]
            if item not in seen:
                break
        t = base.target
        added.append(replace(base, target=Event(t.user_id, item, catalog[item], t.behavior, t.timestamp)))
    return list(instances) + added


def build_dataset(sequences, config: ExperimentConfig) -> Dataset:
    sequences = [s for s in sequences if len(s)]
    train, val, test, cutoffs = split_instances(sequences, config)
    user_items = {s.user_id: {e.item_id for e in s.events} for s in sequences}
    catalog = {e.item_id: e.category_id for s in sequences for e in s.events}
    if config.noise_rate > 0:
        rng = np.random.default_rng([config.seed, 7919])
        train = inject_noise(train, config.noise_rate, rng, user_items, catalog)
        val = inject_noise(val, config.noise_rate, rng, user_items, catalog)
    if not train or not val or not test:
        raise ValueError(f"empty split (train={len(train)}, val={len(val)}, test={len(test)})")
    return Dataset(sequences, config, Vocab(catalog), train, val, test, cutoffs, user_items, catalog)


def dataset_from_events(events, config: ExperimentConfig) -> Dataset:
    return build_dataset(events_to_sequences(events), config)


# ---------------------------------------------------------------------------
# fixed-shape encoding
# ---------------------------------------------------------------------------

@dataclass
class Encoded:
    """Per-instance arrays in a common padded layout."""
    instances: list
    user_ids: list
    target: np.ndarray
    target_ts: np.ndarray
    hist: np.ndarray
    hist_mask: np.ndarray
    sess_mask: np.ndarray
    cur: np.ndarray
    cur_mask: np.ndarray
    recent: np.ndarray
    recent_mask: np.ndarray
    gap_prev: np.ndarray
    gap_target: np.ndarray
    ssl_ok: np.ndarray

    def __len__(self):
        return len(self.instances)


@dataclass
class Batch:
    candidates: np.ndarray
    labels: np.ndarray
    hist: np.ndarray
    hist_mask: np.ndarray
    sess_mask: np.ndarray
    cur: np.ndarray
    cur_mask: np.ndarray
    recent: np.ndarray
    recent_mask: np.ndarray
    gap_prev: np.ndarray
    gap_target: np.ndarray
    view_a: np.ndarray | None = None
    view_a_mask: np.ndarray | None = None
    view_b: np.ndarray | None = None
    view_b_mask: np.ndarray | None = None


def _fill_left(row_ids, row_mask, ids):
    row_ids[:len(ids)] = ids
    row_mask[:len(ids)] = True


def encode_sessions(sessions, vocab: Vocab, width: int) -> tuple:
    """Most recent ``width`` events of each session, left-aligned."""
    ids = np.zeros((len(sessions), width), dtype=np.int64)
    mask = np.zeros((len(sessions), width), dtype=bool)
    for k, sess in enumerate(sessions):
        _fill_left(ids[k], mask[k], vocab.indices(sess.items[-width:]))
    return ids, mask


def encode(instances, vocab: Vocab, config: ExperimentConfig, flags: VariantFlags) -> Encoded:
    n = len(instances)
    if flags.session_division:
        n_sess, width = config.b, config.l
    else:
        n_sess, width = 1, config.max_seq_len
    l, r = config.l, config.r  # noqa: E741
    hist = np.zeros((n, n_sess, width), dtype=np.int64)
    hist_mask = np.zeros((n, n_sess, width), dtype=bool)
    cur = np.zeros((n, l), dtype=np.int64)
    cur_mask = np.zeros((n, l), dtype=bool)
    recent = np.zeros((n, r), dtype=np.int64)
    recent_mask = np.zeros((n, r), dtype=bool)
    gap_prev = np.zeros((n, r))
    gap_target = np.zeros((n, r))
    for k, inst in enumerate(instances):
        if flags.session_division:
            sessions = inst.historical_sessions[-n_sess:]
        else:
            prior = inst.prior_events[-width:]
            sessions = (Session(prior),) if prior else ()
        # oldest first, right-aligned so padded slots precede real sessions
        offset = n_sess - len(sessions)
        for j, sess in enumerate(sessions):
            _fill_left(hist[k, offset + j], hist_mask[k, offset + j], vocab.indices(sess.items[-width:]))
        _fill_left(cur[k], cur_mask[k], vocab.indices(inst.past_sub_session.items[-l:]))
        rec = inst.recent_items[-r:]
        if rec:
            start = r - len(rec)
            recent[k, start:] = vocab.indices([e.item_id for e in rec])
            recent_mask[k, start:] = True
            p, q = log_gaps([e.timestamp for e in rec], inst.target.timestamp)
            gap_prev[k, start:], gap_target[k, start:] = p, q
    return Encoded(
        instances=list(instances),
        user_ids=[inst.user_id for inst in instances],
        target=np.array([vocab.index(inst.target.item_id) for inst in instances], dtype=np.int64),
        target_ts=np.array([inst.target.timestamp for inst in instances], dtype=np.int64),
        hist=hist, hist_mask=hist_mask, sess_mask=hist_mask.any(axis=2),
        cur=cur, cur_mask=cur_mask, recent=recent, recent_mask=recent_mask,
        gap_prev=gap_prev, gap_target=gap_target,
        ssl_ok=np.array([inst.ssl_eligible for inst in instances], dtype=bool),
    )


def _context(enc: Encoded, idx, candidates, labels) -> Batch:
    return Batch(candidates=candidates, labels=labels, hist=enc.hist[idx], hist_mask=enc.hist_mask[idx],
                 sess_mask=enc.sess_mask[idx], cur=enc.cur[idx], cur_mask=enc.cur_mask[idx],
                 recent=enc.recent[idx], recent_mask=enc.recent_mask[idx],
                 gap_prev=enc.gap_prev[idx], gap_target=enc.gap_target[idx])


def training_batch(enc: Encoded, idx, config: ExperimentConfig, flags: VariantFlags,
                   neg_rng, aug_rng, vocab: Vocab) -> Batch:
    """Positives plus in-batch negatives, and two contrastive views when SSL is on."""
    idx = np.asarray(idx)
    pos = enc.target[idx]
    negs = sample_negative_items(pos, config.n_scored - 1, neg_rng)
    candidates = np.concatenate([pos[:, None], negs], axis=1)
    labels = np.zeros(candidates.shape)
    labels[:, 0] = 1.0
    batch = _context(enc, idx, candidates, labels)
    if flags.ssl:
        views_a, views_b = [], []
        for k in idx[enc.ssl_ok[idx]]:
            inst = enc.instances[k]
            past = inst.past_sub_session.last(config.l)
            fut = inst.future_sub_session
            fut = Session(fut.events[:config.l], fut.index)
            a, b = make_views(past, fut, config.augmentation, config.gamma, aug_rng)
            views_a.append(a)
            views_b.append(b)
        if len(views_a) >= 2:
            batch.view_a, batch.view_a_mask = encode_sessions(views_a, vocab, config.l)
            batch.view_b, batch.view_b_mask = encode_sessions(views_b, vocab, config.l)
    return batch


def eval_pools(enc: Encoded, dataset: Dataset, n_negatives: int, rng) -> np.ndarray:
    """(n, 1 + n_negatives) candidate rows: the positive, then items the user never touched."""
    n_items = len(dataset.vocab.items)
    pools = np.zeros((len(enc), 1 + n_negatives), dtype=np.int64)
    pools[:, 0] = enc.target
    for k, user in enumerate(enc.user_ids):
        seen = {dataset.vocab.index(i) for i in dataset.user_items[user]}
        if n_items - len(seen) < 1:
            raise ValueError(f"user {user} has interacted with every item; cannot sample negatives")
        draws = rng.integers(2, n_items + 2, size=n_negatives)
        bad = np.array([d in seen for d in draws])
        while bad.any():
            draws[bad] = rng.integers(2, n_items + 2, size=int(bad.sum()))
            bad = np.array([d in seen for d in draws])
        pools[k, 1:] = draws
    return pools


def eval_batches(enc: Encoded, pools: np.ndarray, batch_size: int):
    labels_row = np.zeros(pools.shape[1])
    labels_row[0] = 1.0
    for start in range(0, len(enc), batch_size):
        idx = np.arange(start, min(start + batch_size, len(enc)))
        yield idx, _context(enc, idx, pools[idx], np.tile(labels_row, (len(idx), 1)))
