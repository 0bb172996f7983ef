"""Model checkpoints: a directory of tensor files plus ``manifest.json``."""

from __future__ import annotations

import json
import os
from typing import Dict, Tuple

import numpy as np

from .autodiff import load_tensor, save_tensor

MANIFEST = "manifest.json"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def tensor_role(name: str) -> str:
    """Human-readable role of a parameter from its dotted name."""
    leaf = name.rsplit(".", 1)[-1]
    if name.startswith("input."):
        return "input standardization " + leaf
    if name.startswith("output."):
        return "output mapping to label units " + leaf
    if leaf == "w_x":
        return "lstm input-to-hidden weights (gates input|forget|output|candidate)"
    if leaf == "w_h":
        return "lstm hidden-to-hidden weights (gates input|forget|output|candidate)"
    if leaf == "bias" and ".lstm" in "." + name:
        return "lstm gate biases (gates input|forget|output|candidate)"
    if name.startswith("stream_"):
        return "backbone conv " + leaf
    return "dense " + leaf


def _filename(name: str) -> str:
    return name.replace("/", "_") + ".bten"


def save_checkpoint(path, state: Dict[str, np.ndarray], kind: str, config: dict) -> None:
    """Write every array of ``state`` as a tensor file and index them in the manifest."""
    os.makedirs(path, exist_ok=True)
    entries = []
    for name in sorted(state):
        arr = np.asarray(state[name])
        fname = _filename(name)
        save_tensor(os.path.join(path, fname), arr)
        entries.append({"name": name, "file": fname, "role": tensor_role(name),
                        "shape": list(arr.shape), "dtype": str(arr.dtype)})
    manifest = {"format": FORMAT_VERSION, "kind": kind, "config": config, "tensors": entries}
    tmp = os.path.join(path, MANIFEST + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, os.path.join(path, MANIFEST))


def load_checkpoint(path) -> Tuple[str, dict, Dict[str, np.ndarray]]:
    """(kind, config, state) from a checkpoint directory."""
    mpath = os.path.join(path, MANIFEST)
    if not os.path.isfile(mpath):
        raise FileNotFoundError(f"{path}: no {MANIFEST}; not a checkpoint directory")
    with open(mpath, encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{mpath}: {exc}") from None
    if manifest.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"{mpath}: unsupported checkpoint format {manifest.get('format')!r}")
    state = {}
    for entry in manifest.get("tensors", []):
        arr = load_tensor(os.path.join(path, entry["file"]))
        if list(arr.shape) != list(entry["shape"]):
            raise CheckpointError(f"{entry['file']}: shape {arr.shape} != manifest {entry['shape']}")
        state[entry["name"]] = arr
    return manifest["kind"], manifest.get("config", {}), state
