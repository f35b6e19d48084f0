"""Checkpoint files: a numpy ``.npz`` archive, one array per parameter.

Layout (format version 1):

* one entry per parameter, keyed by its dotted name
  (e.g. ``backbone.blocks.0.attn.q.w``), float64, in the parameter's shape;
* an entry ``__meta__`` holding a JSON string::

      {"format": 1, "config_hash": "...",
       "params": {name: {"shape": [...], "frozen": bool}, ...}}

Aliased parameters (the shared expert pool) are stored once under their
first name.
"""

import json

import numpy as np

from .errors import ContractError

FORMAT_VERSION = 1


def save_checkpoint(model, path, config_hash=""):
    params = model.named_parameters()
    meta = {
        "format": FORMAT_VERSION,
        "config_hash": config_hash,
        "params": {n: {"shape": list(t.shape), "frozen": not t.requires_grad} for n, t in params},
    }
    arrays = {n: np.ascontiguousarray(t.data) for n, t in params}
    arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def read_checkpoint(path):
    """``(meta, {name: array})`` without touching any model."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("format") != FORMAT_VERSION:
            raise ContractError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
        values = {n: z[n] for n in meta["params"]}
    return meta, values


def load_checkpoint(model, path):
    """Copy stored values into ``model`` in place; names and shapes must match exactly."""
    meta, values = read_checkpoint(path)
    params = dict(model.named_parameters())
    missing = sorted(set(params) - set(values))
    extra = sorted(set(values) - set(params))
    if missing or extra:
        raise ContractError(f"{path}: parameter names differ (missing {missing[:3]}, unexpected {extra[:3]})")
    for name, t in params.items():
        if tuple(values[name].shape) != t.shape:
            raise ContractError(f"{path}: {name} has shape {values[name].shape}, model expects {t.shape}")
        t.data = np.array(values[name], dtype=np.float64)
    return meta
