"""Single-file checkpoint container.

Layout: magic ``CKP1``, a little-endian uint32 header length, a UTF-8 JSON
header (step, config hash, tensor table, free-form metadata), then every tensor
as little-endian float32 in the order of the tensor table.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"CKP1"


def save_checkpoint(path: str | Path, tensors: dict[str, torch.Tensor], *, step: int = 0,
                    config_hash: str = "", meta: dict | None = None) -> None:
    table, blobs, offset = [], [], 0
    for name, t in tensors.items():
        arr = np.ascontiguousarray(t.detach().cpu().numpy(), dtype="<f4")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"step": int(step), "config_hash": config_hash, "tensors": table, "meta": meta or {}},
                        sort_keys=True).encode("utf-8")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", len(header)) + header)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[dict[str, torch.Tensor], dict]:
    """Return ``(tensors, header)``; the header holds step, config_hash and meta."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a CKP1 checkpoint")
    (hlen,) = struct.unpack_from("<I", raw, 4)
    header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    base = 8 + hlen
    tensors = {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        arr = np.frombuffer(raw, dtype="<f4", count=entry["count"], offset=start).reshape(entry["shape"])
        tensors[entry["name"]] = torch.from_numpy(arr.astype(np.float32))
    return tensors, header


def shape_diff(expected: dict[str, torch.Size], found: dict[str, torch.Tensor]) -> list[str]:
    """Field-level differences between a module's parameters and checkpoint tensors."""
    problems = []
    for name in sorted(set(expected) - set(found)):
        problems.append(f"missing {name} (expected shape {tuple(expected[name])})")
    for name in sorted(set(found) - set(expected)):
        problems.append(f"unexpected {name} (shape {tuple(found[name].shape)})")
    for name in sorted(set(expected) & set(found)):
        if tuple(expected[name]) != tuple(found[name].shape):
            problems.append(f"{name}: expected shape {tuple(expected[name])}, found {tuple(found[name].shape)}")
    return problems


def load_into(module: torch.nn.Module, tensors: dict[str, torch.Tensor], prefix: str = "") -> None:
    """Copy ``prefix``-ed tensors into ``module``; raises ValueError listing every mismatch."""
    own = module.state_dict()
    found = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
    problems = shape_diff({k: v.shape for k, v in own.items()}, found)
    if problems:
        raise ValueError("checkpoint does not match the encoder:\n  " + "\n  ".join(problems))
    module.load_state_dict({k: found[k].to(own[k].dtype) for k in own})


def optimizer_tensors(optimizer: torch.optim.Optimizer, names: dict[int, str]) -> tuple[dict, dict]:
    """Flatten Adam-style state into named tensors plus per-parameter step counts."""
    tensors, steps = {}, {}
    for group in optimizer.param_groups:
        for p in group["params"]:
            st = optimizer.state.get(p)
            if not st:
                continue
            name = names[id(p)]
            for key, val in st.items():
                if key == "step":
                    steps[name] = float(val)
                elif isinstance(val, torch.Tensor):
                    tensors[f"optim/{name}/{key}"] = val
    return tensors, steps


def restore_optimizer(optimizer: torch.optim.Optimizer, named_params: dict[str, torch.nn.Parameter],
                      tensors: dict[str, torch.Tensor], steps: dict[str, float]) -> None:
    for name, p in named_params.items():
        if name not in steps:
            continue
        state = {"step": torch.tensor(steps[name], dtype=torch.float32)}
        prefix = f"optim/{name}/"
        for key, val in tensors.items():
            if key.startswith(prefix):
                state[key[len(prefix):]] = val.clone().to(p.dtype)
        optimizer.state[p] = state
