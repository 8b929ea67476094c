"""On-disk checkpoint format: a directory of raw tensors plus a JSON `meta`.

Layout: one little-endian float32 binary per named tensor (``<name>.bin``)
and a ``meta`` file (JSON) listing every tensor's name and shape alongside
run metadata (config, epoch, RNG state, format version).  Writes go to a
temp directory first and are renamed into place, so a crash never leaves a
half-written checkpoint.
"""

from __future__ import annotations

import json
import os
import shutil
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

from .errors import FormatError

FORMAT_VERSION = 1


def _to_numpy(value: np.ndarray | torch.Tensor) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    return np.asarray(value)


def save_tensor_dir(path: str | Path, tensors: Mapping[str, np.ndarray | torch.Tensor], meta: dict) -> Path:
    """Atomically write a checkpoint directory; returns its path."""
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp-{os.getpid()}")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)

    listing = {}
    for name, value in tensors.items():
        arr = _to_numpy(value)
        fname = f"{name}.bin"
        arr.astype("<f4").tofile(tmp / fname)
        listing[name] = {"file": fname, "shape": list(arr.shape)}

    doc = {"format_version": FORMAT_VERSION, "tensors": listing, **meta}
    (tmp / "meta").write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")

    if path.exists():
        shutil.rmtree(path)
    os.replace(tmp, path)
    return path


def load_tensor_dir(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint directory back as float32 arrays plus metadata."""
    path = Path(path)
    meta_path = path / "meta"
    if not meta_path.is_file():
        raise FormatError(f"{path}: not a checkpoint directory (no meta file)")
    doc = json.loads(meta_path.read_text(encoding="utf-8"))
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint format version {version!r}")

    tensors = {}
    for name, entry in doc["tensors"].items():
        shape = tuple(entry["shape"])
        raw = np.fromfile(path / entry["file"], dtype="<f4")
        if raw.size != int(np.prod(shape)):
            raise FormatError(f"{path}: tensor {name} has {raw.size} values, expected shape {shape}")
        tensors[name] = raw.reshape(shape)
    meta = {k: v for k, v in doc.items() if k not in ("tensors", "format_version")}
    return tensors, meta


def module_tensors(module: torch.nn.Module, prefix: str = "") -> dict[str, torch.Tensor]:
    """The module's full state (parameters and buffers) under a name prefix."""
    return {prefix + name: tensor for name, tensor in module.state_dict().items()}


def load_module_tensors(module: torch.nn.Module, tensors: Mapping[str, np.ndarray], prefix: str = "") -> None:
    """Load checkpoint arrays into a module, casting to each target's dtype."""
    target = module.state_dict()
    state = {}
    for name, ref in target.items():
        key = prefix + name
        if key not in tensors:
            raise FormatError(f"checkpoint is missing tensor {key}")
        state[name] = torch.from_numpy(np.ascontiguousarray(tensors[key])).to(ref.dtype).reshape(ref.shape)
    module.load_state_dict(state)


def rng_state_to_hex(state: torch.Tensor) -> str:
    return bytes(state.numpy().tobytes()).hex()


def rng_state_from_hex(text: str) -> torch.Tensor:
    return torch.from_numpy(np.frombuffer(bytes.fromhex(text), dtype=np.uint8).copy())
