"""Event logs, session division, training-instance expansion and diagnostics."""
from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class Behavior(str, enum.Enum):
    CLICK = "click"
    FAV = "fav"
    CART = "cart"
    BUY = "buy"

    @classmethod
    def parse(cls, text: str) -> "Behavior":
        try:
            return cls(_BEHAVIOR_ALIASES.get(text, text))
        except ValueError:
            raise ValueError(f"unknown behavior type {text!r}") from None


_BEHAVIOR_ALIASES = {
    "pv": "click",
    "favorite": "fav",
    "purchase": "buy",
    "add-to-cart": "cart",
}


@dataclass(frozen=True)
class Event:
    user_id: str
    item_id: str
    category_id: str
    behavior: Behavior
    timestamp: int

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")
        if not isinstance(self.behavior, Behavior):
            object.__setattr__(self, "behavior", Behavior.parse(self.behavior))


@dataclass(frozen=True)
class Sequence:
    user_id: str
    events: tuple

    def truncated(self, max_len: int) -> "Sequence":
        """Keep the most recent ``max_len`` events."""
        if len(self.events) <= max_len:
            return self
        return Sequence(self.user_id, self.events[-max_len:])

    def __len__(self):
        return len(self.events)


@dataclass(frozen=True)
class Session:
    events: tuple
    index: int = 0

    def __len__(self):
        return len(self.events)

    @property
    def items(self) -> list:
        return [e.item_id for e in self.events]

    @property
    def timestamps(self) -> list:
        return [e.timestamp for e in self.events]

    def last(self, n: int) -> "Session":
        return self if len(self.events) <= n else Session(self.events[-n:], self.index)


@dataclass(frozen=True)
class TrainingInstance:
    user_id: str
    historical_sessions: tuple
    past_sub_session: Session
    future_sub_session: Session | None
    recent_items: tuple
    target: Event
    label: int = 1
    negatives: tuple = ()
    # events before the current session, for the no-session-division variant
    prior_events: tuple = field(default=(), repr=False)

    @property
    def has_future(self) -> bool:
        return self.future_sub_session is not None

    @property
    def ssl_eligible(self) -> bool:
        return len(self.past_sub_session) > 0 and self.future_sub_session is not None

    @property
    def candidates(self) -> tuple:
        return (self.target.item_id,) + tuple(self.negatives)

    @property
    def labels(self) -> tuple:
        return (1,) + (0,) * len(self.negatives)

    def without_future(self) -> "TrainingInstance":
        return replace(self, future_sub_session=None)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _sort_events(events) -> tuple:
    # stable sort keeps input order among equal timestamps
    return tuple(sorted(events, key=lambda e: e.timestamp))


def parse_event_line(line: str, lineno: int) -> Event:
    cols = line.rstrip("\n").rstrip("\r").split("\t")
    if len(cols) != 5:
        raise ValueError(f"line {lineno}: expected 5 tab-separated columns, got {len(cols)}")
    user, item, cat, behavior, ts = cols
    try:
        stamp = int(ts)
    except ValueError:
        raise ValueError(f"line {lineno}: timestamp {ts!r} is not an integer") from None
    try:
        return Event(user, item, cat, Behavior.parse(behavior), stamp)
    except ValueError as exc:
        raise ValueError(f"line {lineno}: {exc}") from None


def events_to_sequences(events, max_len: int | None = None) -> list:
    by_user: dict = {}
    for e in events:
        by_user.setdefault(e.user_id, []).append(e)
    seqs = []
    for user, evs in by_user.items():
        seq = Sequence(user, _sort_events(evs))
        seqs.append(seq if max_len is None else seq.truncated(max_len))
    return seqs


def parse_events(path, max_len: int | None = None) -> list:
    """Read a headerless TSV event log into one time-sorted Sequence per user."""
    events = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            events.append(parse_event_line(line, lineno))
    return events_to_sequences(events, max_len)


def write_events(path, events):
    with open(Path(path), "w", encoding="utf-8") as fh:
        for e in events:
            fh.write(f"{e.user_id}\t{e.item_id}\t{e.category_id}\t{e.behavior.value}\t{e.timestamp}\n")


# ---------------------------------------------------------------------------
# session division and instance expansion
# ---------------------------------------------------------------------------

def sess_div(seq, omega: float, max_session_len: int | None = None) -> list:
    """Split a sequence wherever the gap to the previous event is at least ``omega``.

    ``omega`` is in the same unit as the timestamps (seconds).  When
    ``max_session_len`` is set, each session keeps only its most recent events.
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    events = seq.events if isinstance(seq, Sequence) else tuple(seq)
    if not events:
        return []
    groups = [[events[0]]]
    for prev, cur in zip(events, events[1:]):
        if cur.timestamp - prev.timestamp < omega:
            groups[-1].append(cur)
        else:
            groups.append([cur])
    sessions = [Session(tuple(g), n) for n, g in enumerate(groups)]
    if max_session_len is not None:
        sessions = [s.last(max_session_len) for s in sessions]
    return sessions


def prefix_expand(sessions, r: int, b: int, user_id: str = "") -> list:
    """Emit one instance per event that has at least one earlier event."""
    instances = []
    timeline = []
    for n, sess in enumerate(sessions):
        events = sess.events
        for j, target in enumerate(events):
            if timeline:
                future = events[j + 1:]
                instances.append(TrainingInstance(
                    user_id=user_id or target.user_id,
                    historical_sessions=tuple(sessions[max(0, n - b):n]),
                    past_sub_session=Session(events[:j], sess.index),
                    future_sub_session=Session(future, sess.index) if future else None,
                    recent_items=tuple(timeline[-r:]),
                    target=target,
                    prior_events=tuple(timeline[:len(timeline) - j]),
                ))
            timeline.append(target)
    return instances


def check_instance(inst: TrainingInstance, omega: float | None = None) -> list:
    """Return the list of violated instance invariants (empty when valid)."""
    problems = []
    t = inst.target.timestamp
    if any(e.timestamp > t for e in inst.past_sub_session.events):
        problems.append("past event after target")
    if any(e.timestamp > t for e in inst.recent_items):
        problems.append("recent event after target")
    if inst.future_sub_session is not None:
        fut = inst.future_sub_session.events
        if any(e.timestamp < t for e in fut):
            problems.append("future event before target")
        if omega is not None:
            chain = (inst.target,) + fut
            if any(b.timestamp - a.timestamp >= omega for a, b in zip(chain, chain[1:])):
                problems.append("future event outside the target session")
    start = (inst.past_sub_session.events or (inst.target,))[0].timestamp
    for sess in inst.historical_sessions:
        if sess.events and sess.events[-1].timestamp > start:
            problems.append("historical session overlaps current session")
    return problems


# ---------------------------------------------------------------------------
# diversity diagnostics
# ---------------------------------------------------------------------------

def _categories(sess) -> list:
    events = sess.events if isinstance(sess, Session) else sess
    return [e.category_id if isinstance(e, Event) else e for e in events]


def session_entropy(sess) -> float:
    """Shannon entropy (nats) of the session's category distribution."""
    cats = _categories(sess)
    if not cats:
        raise ValueError("entropy of an empty session is undefined")
    n = len(cats)
    return -sum((c / n) * math.log(c / n) for c in Counter(cats).values())


def session_gini(sess, support) -> float:
    """Gini coefficient of category counts padded with zeros over ``support``.

    0 means an even spread over the support, (m-1)/m a single category.
    """
    cats = _categories(sess)
    support = list(dict.fromkeys(support))
    if not support:
        raise ValueError("support must contain at least one category")
    if not cats:
        raise ValueError("gini of an empty session is undefined")
    counts = Counter(cats)
    outside = set(counts) - set(support)
    if outside:
        raise ValueError(f"categories outside support: {sorted(map(str, outside))}")
    x = np.sort(np.array([counts.get(c, 0) for c in support], dtype=np.float64))
    m = x.size
    # sorted-order identity for sum_i sum_j |x_i - x_j|
    ranks = np.arange(1, m + 1)
    pair_sum = 2.0 * np.sum((2 * ranks - m - 1) * x)
    return float(pair_sum / (2.0 * m * x.sum()))


# ---------------------------------------------------------------------------
# in-batch negatives
# ---------------------------------------------------------------------------

def sample_negative_items(positives, n_neg: int, rng) -> np.ndarray:
    """For each row, draw ``n_neg`` items (with replacement) from the other rows'
    positives, never equal to the row's own positive."""
    pos = np.asarray(positives)
    if len(np.unique(pos)) < 2:
        raise ValueError("batch needs at least two distinct positive items to sample negatives")
    n = len(pos)
    picks = rng.integers(0, n, size=(n, n_neg))
    bad = pos[picks] == pos[:, None]
    while bad.any():
        picks[bad] = rng.integers(0, n, size=int(bad.sum()))
        bad = pos[picks] == pos[:, None]
    return pos[picks]


def sample_in_batch_negatives(batch, n_scored: int, rng) -> list:
    if n_scored < 2:
        raise ValueError("need at least 2 scored items per instance")
    items = [inst.target.item_id for inst in batch]
    negs = sample_negative_items(np.array(items, dtype=object), n_scored - 1, rng)
    return [replace(inst, negatives=tuple(row)) for inst, row in zip(batch, negs)]
