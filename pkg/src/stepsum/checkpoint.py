"""Checkpoints: a JSON manifest plus a concatenated float64 payload.

A checkpoint directory holds ``manifest.json`` (format version, config hash,
the architecture config, the vocabulary, and a named-tensor directory with
shapes and byte offsets) and ``params.bin`` (little-endian 64-bit floats in
manifest order). Loading verifies the config hash; a mismatch is a hard
error rather than a silent shape coercion.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .config import RunConfig, config_from_dict, config_to_dict

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
PAYLOAD_NAME = "params.bin"


class CheckpointError(ValueError):
    pass


@dataclass
class Manifest:
    config: RunConfig
    config_hash: str
    vocab: list[str]
    tensors: list[dict]


def save_checkpoint(path: str, named_params: dict[str, Tensor],
                    config: RunConfig, vocab: list[str]) -> None:
    os.makedirs(path, exist_ok=True)
    tensors = []
    offset = 0
    chunks = []
    for name, param in named_params.items():
        data = np.ascontiguousarray(param.data, dtype="<f8")
        tensors.append({
            "name": name,
            "shape": list(param.shape),
            "offset": offset,
            "size": int(data.size),
        })
        chunks.append(data.tobytes())
        offset += data.size * 8
    manifest = {
        "format_version": FORMAT_VERSION,
        "config_hash": config.arch_hash(len(vocab)),
        "config": config_to_dict(config),
        "vocab": vocab,
        "tensors": tensors,
    }
    with open(os.path.join(path, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, separators=(",", ":"))
    with open(os.path.join(path, PAYLOAD_NAME), "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path: str) -> tuple[Manifest, dict[str, np.ndarray]]:
    manifest_path = os.path.join(path, MANIFEST_NAME)
    payload_path = os.path.join(path, PAYLOAD_NAME)
    if not os.path.exists(manifest_path) or not os.path.exists(payload_path):
        raise CheckpointError(f"{path} is not a checkpoint directory")
    with open(manifest_path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if raw.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {raw.get('format_version')}")
    config = config_from_dict(raw["config"])
    vocab = list(raw["vocab"])
    expected = config.arch_hash(len(vocab))
    if raw["config_hash"] != expected:
        raise CheckpointError("checkpoint config hash does not match its config")
    payload = np.frombuffer(open(payload_path, "rb").read(), dtype="<f8")
    arrays: dict[str, np.ndarray] = {}
    for entry in raw["tensors"]:
        start = entry["offset"] // 8
        arr = payload[start: start + entry["size"]].reshape(entry["shape"])
        arrays[entry["name"]] = np.array(arr, dtype=np.float64)
    return Manifest(config, raw["config_hash"], vocab, raw["tensors"]), arrays


def restore_params(named_params: dict[str, Tensor],
                   arrays: dict[str, np.ndarray]) -> None:
    """Copy checkpoint arrays into live parameters, verifying the name set."""
    missing = sorted(set(named_params) - set(arrays))
    extra = sorted(set(arrays) - set(named_params))
    if missing or extra:
        raise CheckpointError(
            f"parameter names disagree; missing={missing[:3]} extra={extra[:3]}"
        )
    for name, param in named_params.items():
        arr = arrays[name]
        if tuple(arr.shape) != param.shape:
            raise CheckpointError(
                f"{name}: checkpoint shape {arr.shape} != model shape {param.shape}"
            )
        param.data[...] = arr


def verify_config_match(manifest: Manifest, config: RunConfig) -> None:
    """Hard error when a run config disagrees with a checkpoint's config."""
    if manifest.config_hash != config.arch_hash(len(manifest.vocab)):
        raise CheckpointError(
            "run config does not match the checkpoint config (hash mismatch)"
        )
