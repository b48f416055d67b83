"""Versioned single-file checkpoint archive.

Layout (a zip file with fixed timestamps, entries in sorted order)::

    manifest.json        format tag, version, component, metadata, blob index
    blobs/<name>         raw little-endian tensor bytes

The blob index records dtype, shape and SHA-256 of every blob; readers
verify all of them before returning anything.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import zipfile
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError

FORMAT = "vis2ir-checkpoint"
FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _entry(name):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    return info


def write_archive(path, component: str, meta: dict, tensors: dict):
    """Atomically write ``tensors`` plus JSON-serializable ``meta``."""
    path = Path(path)
    index = {}
    blobs = {}
    for name in sorted(tensors):
        arr = tensors[name].detach().cpu().contiguous().numpy()
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        data = arr.tobytes()
        index[name] = {"dtype": arr.dtype.str, "shape": list(arr.shape), "sha256": hashlib.sha256(data).hexdigest()}
        blobs[name] = data
    manifest = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "component": component,
        "meta": meta,
        "blobs": index,
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        zf.writestr(_entry("manifest.json"), json.dumps(manifest, sort_keys=True, indent=1))
        for name in sorted(blobs):
            zf.writestr(_entry(f"blobs/{name}"), blobs[name])
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)
    return path


def read_archive(path, component: str | None = None):
    """Return ``(meta, tensors)``; raise :class:`CheckpointError` on any defect."""
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            if manifest.get("format") != FORMAT:
                raise CheckpointError(f"{path}: not a {FORMAT} archive")
            if manifest.get("version") != FORMAT_VERSION:
                raise CheckpointError(
                    f"{path}: incompatible checkpoint version {manifest.get('version')} (expected {FORMAT_VERSION})"
                )
            if component is not None and manifest.get("component") != component:
                raise CheckpointError(f"{path}: component {manifest.get('component')!r}, expected {component!r}")
            tensors = {}
            for name, info in manifest["blobs"].items():
                data = zf.read(f"blobs/{name}")
                if hashlib.sha256(data).hexdigest() != info["sha256"]:
                    raise CheckpointError(f"{path}: integrity check failed for blob {name!r}")
                arr = np.frombuffer(data, dtype=np.dtype(info["dtype"])).reshape(info["shape"])
                tensors[name] = torch.from_numpy(arr.copy())
    except CheckpointError:
        raise
    except (zipfile.BadZipFile, KeyError, ValueError, OSError, EOFError) as exc:
        raise CheckpointError(f"{path}: unreadable or corrupted checkpoint ({exc})") from exc
    return manifest["meta"], tensors


def module_tensors(prefix, module):
    return {f"{prefix}/{k}": v for k, v in module.state_dict().items()}


def load_module(prefix, module, tensors):
    state = {k[len(prefix) + 1 :]: v for k, v in tensors.items() if k.startswith(prefix + "/")}
    module.load_state_dict(state, strict=True)


def optimizer_payload(prefix, optimizer):
    """Split an optimizer state dict into JSON metadata and tensor blobs."""
    sd = optimizer.state_dict()
    tensors = {}
    scalars = {}
    for idx, slot in sd["state"].items():
        for key, value in slot.items():
            if torch.is_tensor(value):
                tensors[f"{prefix}/{idx}/{key}"] = value
            else:
                scalars[f"{idx}/{key}"] = value
    return {"param_groups": sd["param_groups"], "scalars": scalars}, tensors


def load_optimizer(prefix, optimizer, meta, tensors):
    state = {}
    for name, value in tensors.items():
        if not name.startswith(prefix + "/"):
            continue
        idx, key = name[len(prefix) + 1 :].split("/", 1)
        state.setdefault(int(idx), {})[key] = value
    for name, value in meta["scalars"].items():
        idx, key = name.split("/", 1)
        state.setdefault(int(idx), {})[key] = value
    optimizer.load_state_dict({"state": state, "param_groups": meta["param_groups"]})
