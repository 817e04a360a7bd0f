"""Planted long/short-term preference generator for desk-scale experiments."""
from __future__ import annotations

import numpy as np

from ..data import Behavior, Event, write_events
from .config import SyntheticSpec

_LONG_BEHAVIOR = ([Behavior.BUY, Behavior.CART, Behavior.FAV, Behavior.CLICK], [0.35, 0.1, 0.1, 0.45])
_SHORT_BEHAVIOR = ([Behavior.BUY, Behavior.CART, Behavior.FAV, Behavior.CLICK], [0.03, 0.04, 0.03, 0.9])


def item_catalog(spec: SyntheticSpec, rng) -> np.ndarray:
    """Category index of every item; every category gets at least one item."""
    cats = np.arange(spec.n_items) % spec.n_categories
    return rng.permutation(cats)


def generate_events(spec: SyntheticSpec) -> list:
    """Each user has a fixed preferred category; each session has its own intent.

    An event comes from the preferred category with probability
    ``long_pref_strength`` and from the current intent otherwise; the intent
    may switch between events with ``intent_switch_prob``.  A ``noise_rate``
    fraction of events is replaced by a uniformly random item.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    item_cat = item_catalog(spec, rng)
    by_cat = [np.flatnonzero(item_cat == c) for c in range(spec.n_categories)]

    def other_category(exclude: int) -> int:
        c = int(rng.integers(spec.n_categories - 1))
        return c + (c >= exclude)

    def behavior(table) -> Behavior:
        kinds, probs = table
        return kinds[int(rng.choice(len(kinds), p=probs))]

    events = []
    for u in range(spec.n_users):
        user = f"u{u}"
        pref = int(rng.integers(spec.n_categories))
        t = int(rng.integers(0, 86400))
        for s in range(spec.sessions_per_user):
            if s:
                t += int(rng.uniform(spec.inter_gap_min, spec.inter_gap_max) * 60)
            intent = other_category(pref)
            length = int(rng.integers(spec.session_len_min, spec.session_len_max + 1))
            for j in range(length):
                if j:
                    t += int(rng.uniform(spec.intra_gap_min, spec.intra_gap_max) * 60)
                    if rng.random() < spec.intent_switch_prob:
                        intent = other_category(pref)
                if rng.random() < spec.long_pref_strength:
                    item, kind = int(rng.choice(by_cat[pref])), behavior(_LONG_BEHAVIOR)
                else:
                    item, kind = int(rng.choice(by_cat[intent])), behavior(_SHORT_BEHAVIOR)
                if rng.random() < spec.noise_rate:
                    item, kind = int(rng.integers(spec.n_items)), Behavior.CLICK
                events.append(Event(user, f"i{item}", f"c{item_cat[item]}", kind, t))
    return events


def generate_synthetic(spec: SyntheticSpec, path=None) -> list:
    events = generate_events(spec)
    if path is not None:
        write_events(path, events)
    return events
