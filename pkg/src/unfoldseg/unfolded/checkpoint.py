"""Parameter checkpoints.

A checkpoint is a numpy ``.npz`` archive holding one float64 array per
parameter plus a ``__manifest__`` entry: UTF-8 JSON with

    {"format": "unfoldseg-params", "version": 1,
     "config": {stages, in_channels, n_features, hidden, unet_width, eps_l1, passthrough},
     "tensors": [{"name", "shape", "sha256"}, ...]}

``sha256`` is taken over the tensor's little-endian float64 bytes in C order.
"""

from __future__ import annotations

import hashlib
import io
import json
import os

import numpy as np

from ..errors import InvalidArgumentError
from .params import ParamSet

FORMAT = "unfoldseg-params"
VERSION = 1


def _digest(arr):
    return hashlib.sha256(np.ascontiguousarray(arr, dtype="<f8").tobytes()).hexdigest()


def save_checkpoint(path, params: ParamSet):
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "config": {
            "stages": params.stages, "in_channels": params.in_channels,
            "n_features": params.n_features, "hidden": params.hidden,
            "unet_width": params.unet_width, "eps_l1": params.eps_l1,
            "passthrough": params.passthrough,
        },
        "tensors": [
            {"name": n, "shape": list(v.shape), "sha256": _digest(v)} for n, v in params.values.items()
        ],
    }
    arrays = {n: np.asarray(v, dtype="<f8") for n, v in params.values.items()}
    arrays["__manifest__"] = np.frombuffer(json.dumps(manifest, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    directory = os.path.dirname(os.fspath(path))
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> ParamSet:
    with np.load(path, allow_pickle=False) as data:
        if "__manifest__" not in data:
            raise InvalidArgumentError(f"{path}: no manifest")
        manifest = json.loads(bytes(data["__manifest__"]).decode())
        if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
            raise InvalidArgumentError(f"{path}: unsupported checkpoint format")
        values = {}
        for entry in manifest["tensors"]:
            arr = np.array(data[entry["name"]], dtype=np.float64)
            if list(arr.shape) != entry["shape"]:
                raise InvalidArgumentError(f"{path}: {entry['name']} has wrong shape")
            if _digest(arr) != entry["sha256"]:
                raise InvalidArgumentError(f"{path}: checksum mismatch for {entry['name']}")
            values[entry["name"]] = arr
    cfg = manifest["config"]
    return ParamSet(
        cfg["stages"], cfg["in_channels"], cfg["n_features"], values, eps_l1=cfg["eps_l1"],
        passthrough=cfg["passthrough"], hidden=cfg["hidden"], unet_width=cfg["unet_width"],
    )
