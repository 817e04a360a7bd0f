"""Preprocessed data directories: events.tsv, meta.json and session diagnostics."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..data import Session, parse_events, sess_div, session_entropy, session_gini, write_events

EVENTS_FILE = "events.tsv"
META_FILE = "meta.json"
DIAGNOSTICS_FILE = "diagnostics.json"


def diagnostics(sequences, omega_seconds: float) -> dict:
    """Category entropy and Gini of sessions versus whole sequences.

    Multi-session structure shows up as sessions being markedly more
    concentrated (lower entropy, higher Gini) than the sequences they form.
    """
    support = sorted({e.category_id for s in sequences for e in s.events})
    sess_h, sess_g, seq_h, seq_g, counts = [], [], [], [], []
    for seq in sequences:
        if not len(seq):
            continue
        sessions = sess_div(seq, omega_seconds)
        counts.append(len(sessions))
        whole = Session(seq.events)
        seq_h.append(session_entropy(whole))
        seq_g.append(session_gini(whole, support))
        for sess in sessions:
            sess_h.append(session_entropy(sess))
            sess_g.append(session_gini(sess, support))
    if not counts:
        raise ValueError("no events to diagnose")
    return {
        "n_users": len(counts),
        "n_sessions": int(sum(counts)),
        "sessions_per_user": float(np.mean(counts)),
        "n_categories": len(support),
        "session_entropy_mean": float(np.mean(sess_h)),
        "sequence_entropy_mean": float(np.mean(seq_h)),
        "session_gini_mean": float(np.mean(sess_g)),
        "sequence_gini_mean": float(np.mean(seq_g)),
    }


def preprocess(events_path, omega_minutes: float, out_dir, max_len: int | None = None) -> dict:
    """Normalise an event log into ``out_dir`` and record the session threshold with it."""
    if not omega_minutes > 0:
        raise ValueError("omega must be positive")
    sequences = parse_events(events_path, max_len=max_len)
    if not sequences:
        raise ValueError(f"{events_path}: no events")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ordered = [e for s in sequences for e in s.events]
    write_events(out / EVENTS_FILE, ordered)
    meta = {
        "omega_minutes": float(omega_minutes),
        "n_events": len(ordered),
        "n_users": len(sequences),
        "n_items": len({e.item_id for e in ordered}),
        "source": str(events_path),
    }
    (out / META_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    diag = diagnostics(sequences, omega_minutes * 60.0)
    (out / DIAGNOSTICS_FILE).write_text(json.dumps(diag, indent=2, sort_keys=True) + "\n")
    return {"meta": meta, "diagnostics": diag}


def load_sequences(data) -> tuple:
    """Per-user sequences and metadata from a preprocessed directory or a bare event TSV."""
    path = Path(data)
    if path.is_dir():
        events_file = path / EVENTS_FILE
        if not events_file.exists():
            raise FileNotFoundError(f"{path}: no {EVENTS_FILE}; run preprocess first")
        meta_file = path / META_FILE
        meta = json.loads(meta_file.read_text()) if meta_file.exists() else {}
        return parse_events(events_file), meta
    return parse_events(path), {}


def resolve_omega(config, set_keys, meta: dict):
    """The data directory's omega applies unless the config file sets one explicitly."""
    if "omega_minutes" in set_keys or "omega_minutes" not in meta:
        return config
    return config.replace(omega_minutes=float(meta["omega_minutes"]))
