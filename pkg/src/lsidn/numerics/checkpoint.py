"""Checkpoint container: a JSON document mapping parameter names to arrays.

Layout (version 1)::

    {
      "format": "lsidn-checkpoint",
      "version": 1,
      "params": {"<name>": {"shape": [d0, d1, ...], "values": [row-major floats]}, ...},
      "meta": {...free-form JSON...}
    }

Parameter names are written in sorted order.  Floats are serialized with
``repr`` precision, so a save/load round trip is bit-exact.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "lsidn-checkpoint"
VERSION = 1


def dump_params(arrays: dict, meta: dict | None = None) -> str:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "params": {
            name: {"shape": list(np.shape(a)), "values": np.asarray(a, dtype=np.float64).reshape(-1).tolist()}
            for name, a in sorted(arrays.items())
        },
        "meta": meta or {},
    }
    return json.dumps(doc, sort_keys=True)


def load_params(text: str) -> tuple[dict, dict]:
    doc = json.loads(text)
    if doc.get("format") != FORMAT:
        raise ValueError("not an lsidn checkpoint")
    if doc.get("version") != VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    arrays = {}
    for name, entry in doc["params"].items():
        shape = tuple(entry["shape"])
        values = np.asarray(entry["values"], dtype=np.float64)
        if values.size != int(np.prod(shape)):
            raise ValueError(f"parameter {name!r}: {values.size} values for shape {shape}")
        arrays[name] = values.reshape(shape)
    return arrays, doc.get("meta", {})


def save_checkpoint(path, arrays: dict, meta: dict | None = None):
    Path(path).write_text(dump_params(arrays, meta))


def load_checkpoint(path) -> tuple[dict, dict]:
    return load_params(Path(path).read_text())
