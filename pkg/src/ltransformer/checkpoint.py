"""JSON checkpoints: model config plus every parameter with its shape.

Floats are written with ``repr`` (shortest round-trip form), so loading a
checkpoint reproduces every parameter bit for bit.
"""

import json

import numpy as np

from .encoder import Model, ModelConfig

SCHEMA = "ltransformer.checkpoint"
VERSION = 1


def to_json(model):
    doc = {
        "schema": SCHEMA,
        "version": VERSION,
        "config": model.config.to_dict(),
        "params": {
            name: {"shape": list(arr.shape), "data": np.asarray(arr, dtype=np.float64).ravel().tolist()}
            for name, arr in sorted(model.params.items())
        },
    }
    return json.dumps(doc, sort_keys=True)


def from_json(text):
    doc = json.loads(text)
    if doc.get("schema") != SCHEMA:
        raise ValueError("not an ltransformer checkpoint")
    if doc.get("version") != VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    cfg = ModelConfig.from_dict(doc["config"])
    params = {name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
              for name, entry in doc["params"].items()}
    expected = Model.init(cfg).params
    if set(expected) != set(params):
        raise ValueError(f"checkpoint parameters do not match config: {sorted(set(expected) ^ set(params))}")
    for name, arr in params.items():
        if arr.shape != expected[name].shape:
            raise ValueError(f"{name}: shape {arr.shape}, expected {expected[name].shape}")
    return Model(cfg, params)


def save_checkpoint(model, path):
    with open(path, "w") as fh:
        fh.write(to_json(model))


def load_checkpoint(path):
    with open(path) as fh:
        return from_json(fh.read())
