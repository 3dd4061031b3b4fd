"""Shared checkpoint container: JSON header, NUL separator, float32 payload.

Header fields: schema_version, module_kind, config (free-form JSON tree), and
tensor_index listing {name, shape, byte_offset} into the little-endian float32
payload that follows the separator.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

CHECKPOINT_SCHEMA_VERSION = 1


def save_checkpoint(path, module_kind: str, config: dict, tensors: dict[str, torch.Tensor]) -> None:
    index = []
    chunks = []
    offset = 0
    for name, tensor in tensors.items():
        arr = np.ascontiguousarray(tensor.detach().cpu().numpy().astype("<f4"))
        index.append({"name": name, "shape": list(tensor.shape), "byte_offset": offset})
        chunks.append(arr.tobytes())
        offset += len(chunks[-1])
    header = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "module_kind": module_kind,
        "config": config,
        "tensor_index": index,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8"))
        f.write(b"\0")
        for chunk in chunks:
            f.write(chunk)


def load_checkpoint(path) -> tuple[str, dict, dict[str, torch.Tensor]]:
    with open(path, "rb") as f:
        blob = f.read()
    sep = blob.index(b"\0")
    header = json.loads(blob[:sep].decode("utf-8"))
    if header.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise ValueError(f"unsupported checkpoint schema {header.get('schema_version')}")
    payload = blob[sep + 1:]
    tensors = {}
    for entry in header["tensor_index"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["byte_offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start).reshape(shape)
        tensors[entry["name"]] = torch.from_numpy(arr.copy())
    return header["module_kind"], header["config"], tensors


def save_module(path, module_kind: str, config: dict, module: torch.nn.Module, extra: dict[str, torch.Tensor] | None = None) -> None:
    tensors = {f"param.{k}": v for k, v in module.state_dict().items()}
    for k, v in (extra or {}).items():
        tensors[f"extra.{k}"] = v
    save_checkpoint(path, module_kind, config, tensors)


def load_module_tensors(path, expected_kind: str) -> tuple[dict, dict[str, torch.Tensor], dict[str, torch.Tensor]]:
    kind, config, tensors = load_checkpoint(path)
    if kind != expected_kind:
        raise ValueError(f"checkpoint is {kind!r}, expected {expected_kind!r}")
    params = {k[len("param."):]: v for k, v in tensors.items() if k.startswith("param.")}
    extra = {k[len("extra."):]: v for k, v in tensors.items() if k.startswith("extra.")}
    return config, params, extra
