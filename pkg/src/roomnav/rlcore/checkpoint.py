"""Checkpoint container: named arrays in an ``.npz`` plus JSON metadata."""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np
import torch

from ..langspec import VOCAB

CHECKPOINT_VERSION = 1
VOCAB_HASH = hashlib.sha256("\n".join(VOCAB).encode()).hexdigest()[:16]


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, module: torch.nn.Module, meta: dict) -> None:
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in module.state_dict().items()}
    meta = {"format": "roomnav-checkpoint", "version": CHECKPOINT_VERSION, "vocab_hash": VOCAB_HASH, **meta}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = str(path) + ".tmp.npz"
    np.savez(tmp, **arrays)
    os.replace(tmp, path)


def read_checkpoint(path) -> tuple[dict, dict]:
    """Return ``(meta, state_dict)`` without building a module."""
    try:
        with np.load(path) as data:
            meta = json.loads(bytes(data["__meta__"]).decode())
            state = {k[len("param/"):]: torch.from_numpy(data[k].copy()) for k in data.files if k.startswith("param/")}
    except (OSError, KeyError, ValueError) as e:
        raise CheckpointError(f"{path}: unreadable checkpoint ({e})") from e
    if meta.get("format") != "roomnav-checkpoint":
        raise CheckpointError(f"{path}: not a roomnav checkpoint")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: version {meta.get('version')} != {CHECKPOINT_VERSION}")
    if meta.get("vocab_hash") != VOCAB_HASH:
        raise CheckpointError(f"{path}: vocabulary mismatch")
    return meta, state


def load_policy(path):
    """Rebuild a :class:`RecurrentPolicy` checkpoint; returns ``(model, meta)``."""
    from .policy import ArchConfig, RecurrentPolicy

    meta, state = read_checkpoint(path)
    if meta.get("model") != "recurrent_policy":
        raise CheckpointError(f"{path}: holds a {meta.get('model')!r}, not a recurrent policy")
    model = RecurrentPolicy(meta["n_actions"], ArchConfig.from_dict(meta["arch"]))
    model.load_state_dict(state)
    model.eval()
    return model, meta


def policy_meta(model, kind: str, **extra) -> dict:
    return {"model": "recurrent_policy", "kind": kind, "n_actions": model.n_actions,
            "arch": model.arch.to_dict(), **extra}
