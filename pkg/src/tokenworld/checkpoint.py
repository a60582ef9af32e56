"""Single-file named-tensor archive: canonical JSON manifest + raw little-endian blob.

The byte layout is deterministic (sorted tensor names, canonical JSON), so
save -> load -> save reproduces the file bit for bit.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"TWCKPT01"

_DTYPES = {
    "f32": np.dtype("<f4"),
    "i64": np.dtype("<i8"),
    "u8": np.dtype("<u1"),
}
_CODES = {np.dtype(np.float32): "f32", np.dtype(np.int64): "i64", np.dtype(np.uint8): "u8"}


def _as_array(value) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    arr = np.ascontiguousarray(value)
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    if arr.dtype not in _CODES:
        raise TypeError(f"unsupported dtype {arr.dtype}; convert to float32/int64/uint8 first")
    return arr


def save_archive(
    path: str | Path,
    tensors: dict[str, np.ndarray | torch.Tensor],
    config: dict | None = None,
    extra: dict | None = None,
) -> None:
    arrays = {name: _as_array(t) for name, t in tensors.items()}
    entries = []
    offset = 0
    for name in sorted(arrays):
        arr = arrays[name]
        nbytes = arr.nbytes
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": _CODES[arr.dtype],
                "offset": offset,
                "nbytes": nbytes,
            }
        )
        offset += nbytes
    manifest = {
        "tensors": entries,
        "config": config if config is not None else {},
        "extra": extra if extra is not None else {},
    }
    payload = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for name in sorted(arrays):
            fh.write(arrays[name].astype(arrays[name].dtype.newbyteorder("<"), copy=False).tobytes())


def load_archive(path: str | Path) -> tuple[dict[str, np.ndarray], dict, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path} is not a checkpoint archive")
        (length,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(length))
        blob = fh.read()
    tensors = {}
    for entry in manifest["tensors"]:
        dtype = _DTYPES[entry["dtype"]]
        start, nbytes = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(blob[start : start + nbytes], dtype=dtype)
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return tensors, manifest["config"], manifest["extra"]


def module_tensors(prefix: str, module: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {f"{prefix}/{name}": value for name, value in module.state_dict().items()}


def load_module(prefix: str, module: torch.nn.Module, tensors: dict[str, np.ndarray]) -> None:
    state = {}
    for name, value in module.state_dict().items():
        key = f"{prefix}/{name}"
        if key not in tensors:
            raise KeyError(f"checkpoint missing tensor {key}")
        state[name] = torch.from_numpy(tensors[key]).to(value.dtype).reshape(value.shape)
    module.load_state_dict(state)


def optimizer_tensors(
    prefix: str, optimizer: torch.optim.Optimizer, named_params: list[tuple[str, torch.nn.Parameter]]
) -> dict[str, torch.Tensor]:
    """Adam moments keyed by parameter name; empty until the first step."""
    out = {}
    for name, param in named_params:
        state = optimizer.state.get(param)
        if not state:
            continue
        out[f"{prefix}/{name}/step"] = state["step"].reshape(1).to(torch.float32)
        out[f"{prefix}/{name}/exp_avg"] = state["exp_avg"]
        out[f"{prefix}/{name}/exp_avg_sq"] = state["exp_avg_sq"]
    return out


def load_optimizer(
    prefix: str,
    optimizer: torch.optim.Optimizer,
    named_params: list[tuple[str, torch.nn.Parameter]],
    tensors: dict[str, np.ndarray],
) -> None:
    for name, param in named_params:
        key = f"{prefix}/{name}/step"
        if key not in tensors:
            continue
        optimizer.state[param] = {
            "step": torch.tensor(float(tensors[key][0])),
            "exp_avg": torch.from_numpy(tensors[f"{prefix}/{name}/exp_avg"]).reshape(param.shape),
            "exp_avg_sq": torch.from_numpy(tensors[f"{prefix}/{name}/exp_avg_sq"]).reshape(param.shape),
        }
