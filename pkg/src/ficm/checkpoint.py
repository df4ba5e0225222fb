"""Versioned checkpoint files: named parameter tensors plus a JSON header.

A checkpoint is an ``.npz`` holding one array per parameter (keys are
``<group>.<state_dict name>``) and a ``__meta__`` JSON string with at least
``version``.  Loading rejects mismatched versions, architecture tags, or
input resolutions.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .errors import InvalidInputError

CHECKPOINT_VERSION = 1
_META_KEY = "__meta__"


def save_checkpoint(path, modules: dict, meta: dict | None = None) -> Path:
    """Write ``modules`` (a ``{group: nn.Module}`` mapping) to ``path``."""
    path = Path(path)
    arrays = {}
    for group, module in modules.items():
        for name, tensor in module.state_dict().items():
            arrays[f"{group}.{name}"] = tensor.detach().cpu().numpy()
    header = {"version": CHECKPOINT_VERSION, "groups": sorted(modules)}
    header.update(meta or {})
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **{_META_KEY: np.array(json.dumps(header, sort_keys=True))}, **arrays)
    return path


def read_checkpoint(path):
    """Return ``(meta, {group: {name: ndarray}})`` without touching any module."""
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        if _META_KEY not in data:
            raise InvalidInputError(f"{path} is not a checkpoint (missing header)")
        meta = json.loads(str(data[_META_KEY]))
        version = meta.get("version")
        if version != CHECKPOINT_VERSION:
            raise InvalidInputError(
                f"{path} has checkpoint version {version}; this build reads version {CHECKPOINT_VERSION}"
            )
        groups: dict = {}
        for key in data.files:
            if key == _META_KEY:
                continue
            group, _, name = key.partition(".")
            groups.setdefault(group, {})[name] = data[key]
    return meta, groups


def load_into(path, modules: dict, expect: dict | None = None) -> dict:
    """Load a checkpoint into live modules, validating header fields.

    ``expect`` maps header keys to required values (e.g. ``arch_tag``,
    ``resolution``); any mismatch raises :class:`InvalidInputError`.
    Returns the header.
    """
    meta, groups = read_checkpoint(path)
    for key, value in (expect or {}).items():
        if meta.get(key) != value:
            raise InvalidInputError(
                f"checkpoint {path} has {key}={meta.get(key)!r}, expected {value!r}"
            )
    for group, module in modules.items():
        if group not in groups:
            raise InvalidInputError(f"checkpoint {path} has no group {group!r}")
        state = {name: torch.from_numpy(arr.copy()) for name, arr in groups[group].items()}
        module.load_state_dict(state)
    return meta


def save_predictor(path, predictor, extra_meta: dict | None = None) -> Path:
    """Save a flow predictor with its architecture tag and input resolution."""
    meta = {
        "arch_tag": predictor.arch_tag,
        "resolution": int(predictor.resolution),
        "channels": list(getattr(predictor, "channels", [])),
    }
    meta.update(extra_meta or {})
    return save_checkpoint(path, {"predictor": predictor}, meta)


def load_predictor(path, predictor) -> dict:
    """Restore a flow predictor, rejecting tag or resolution mismatches."""
    return load_into(
        path,
        {"predictor": predictor},
        expect={"arch_tag": predictor.arch_tag, "resolution": int(predictor.resolution)},
    )
