"""Homogeneous exchanging augmentation and the crop/mask/reorder baselines."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .data import Event, Session

MASK_ITEM = "<mask>"

BASELINE_KINDS = ("crop", "mask", "reorder")


@dataclass(frozen=True)
class SelectionPlan:
    past_selected: frozenset
    future_selected: frozenset
    gamma: float


def _n_select(n: int, gamma: float) -> int:
    # guard against 0.4 * 5 == 1.9999999999999998 style truncation
    return int(math.floor(gamma * n + 1e-9))


def select_indices(past: Session, future: Session, gamma: float, rng) -> SelectionPlan:
    if not len(past) or not len(future):
        raise ValueError("exchange augmentation needs non-empty past and future sub-sessions")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"selection ratio {gamma} outside [0, 1]")
    k_p, k_f = _n_select(len(past), gamma), _n_select(len(future), gamma)
    sel_p = rng.choice(len(past), size=k_p, replace=False) if k_p else ()
    sel_f = rng.choice(len(future), size=k_f, replace=False) if k_f else ()
    return SelectionPlan(frozenset(int(i) for i in sel_p), frozenset(int(i) for i in sel_f), gamma)


def exchange_and_sort(past: Session, future: Session, plan: SelectionPlan) -> tuple:
    """Swap the selected events across the two sub-sessions, then time-sort each side.

    Ties on timestamp put events that came from the past side first.
    """
    for idx, side in ((plan.past_selected, past), (plan.future_selected, future)):
        if any(i < 0 or i >= len(side) for i in idx):
            raise ValueError("selection plan indexes outside its sub-session")
    tagged_p = [(e.timestamp, 0, i, e) for i, e in enumerate(past.events)]
    tagged_f = [(e.timestamp, 1, i, e) for i, e in enumerate(future.events)]
    new_past = [t for t in tagged_p if t[2] not in plan.past_selected]
    new_past += [t for t in tagged_f if t[2] in plan.future_selected]
    new_future = [t for t in tagged_f if t[2] not in plan.future_selected]
    new_future += [t for t in tagged_p if t[2] in plan.past_selected]
    key = lambda t: t[:3]  # noqa: E731
    return (Session(tuple(t[3] for t in sorted(new_past, key=key)), past.index),
            Session(tuple(t[3] for t in sorted(new_future, key=key)), future.index))


def homogeneous_exchange(past: Session, future: Session, gamma: float, rng) -> tuple:
    return exchange_and_sort(past, future, select_indices(past, future, gamma, rng))


def baseline_augment(sess: Session, kind: str, ratio: float, rng) -> Session:
    n = len(sess)
    if n == 0:
        raise ValueError("cannot augment an empty session")
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"augmentation ratio {ratio} outside [0, 1)")
    events = list(sess.events)
    if kind == "crop":
        keep = math.ceil((1.0 - ratio) * n - 1e-9)
        if keep <= 0:
            raise ValueError("crop produced an empty session")
        start = int(rng.integers(0, n - keep + 1))
        events = events[start:start + keep]
    elif kind == "mask":
        k = _n_select(n, ratio)
        for i in (rng.choice(n, size=k, replace=False) if k else ()):
            events[i] = replace(events[i], item_id=MASK_ITEM)
    elif kind == "reorder":
        k = _n_select(n, ratio)
        if k >= 2:
            start = int(rng.integers(0, n - k + 1))
            window = events[start:start + k]
            events[start:start + k] = [window[i] for i in rng.permutation(k)]
    else:
        raise ValueError(f"unknown augmentation kind {kind!r}")
    return Session(tuple(events), sess.index)


def make_views(past: Session, future: Session | None, kind: str, gamma: float, rng) -> tuple:
    """Two contrastive views of one current session.

    ``exchange`` pairs the exchanged past/future sub-sessions; the baseline
    kinds augment the past sub-session twice, independently.
    """
    if kind == "exchange":
        return homogeneous_exchange(past, future, gamma, rng)
    return baseline_augment(past, kind, gamma, rng), baseline_augment(past, kind, gamma, rng)


def is_mask(event: Event) -> bool:
    return event.item_id == MASK_ITEM
