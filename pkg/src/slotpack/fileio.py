"""On-disk formats: SLT1 tensors, raw f32 weight blobs, JSON manifests.

Tensor file::

    b"SLT1" | u32 c | u32 h | u32 w | c*h*w little-endian f32, channel-major

A model is a JSON manifest next to one ``.f32`` blob per weight array;
each blob entry records its shape, element count and sha256.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import FormatError, MissingWeight
from .model import ResNetConfig, check_weights, weight_shapes

MAGIC = b"SLT1"
_HEADER = struct.Struct("<4sIII")
MANIFEST_FORMAT = "slotpack-model/1"


def save_tensor(path, t: np.ndarray) -> None:
    t = np.asarray(t)
    if t.ndim != 3:
        raise FormatError(f"tensor files hold (c, h, w) arrays, got shape {t.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, *t.shape))
        fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def load_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, c, h, w = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 4 * c * h * w
    if len(data) != expected:
        raise FormatError(f"{path}: {len(data)} bytes, header implies {expected}")
    body = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    return body.astype(np.float64).reshape(c, h, w)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_blob(path, arr: np.ndarray) -> dict:
    raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(raw)
    return {"count": int(np.size(arr)), "shape": list(np.shape(arr)), "sha256": _sha256(raw)}


def read_blob(path, entry: Mapping) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingWeight(f"weight blob {path} not found")
    raw = path.read_bytes()
    count = int(entry["count"])
    if len(raw) != 4 * count:
        raise FormatError(f"{path}: {len(raw)} bytes for {count} floats")
    if "sha256" in entry and _sha256(raw) != entry["sha256"]:
        raise FormatError(f"{path}: checksum mismatch")
    arr = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    shape = tuple(entry.get("shape", (count,)))
    if int(np.prod(shape)) != count:
        raise FormatError(f"{path}: shape {shape} does not hold {count} values")
    return arr.reshape(shape)


def save_model(directory, cfg: ResNetConfig, weights: Mapping[str, np.ndarray],
               architecture: str = "resnet20") -> Path:
    """Write ``manifest.json`` plus blobs; returns the manifest path."""
    directory = Path(directory)
    (directory / "weights").mkdir(parents=True, exist_ok=True)
    if architecture != "empty":
        check_weights(cfg, weights)
    entries = {}
    for name in sorted(weights):
        rel = f"weights/{name}.f32"
        entries[name] = {"file": rel, **write_blob(directory / rel, weights[name])}
    manifest = {
        "format": MANIFEST_FORMAT,
        "architecture": architecture,
        "widths": list(cfg.widths),
        "blocks": cfg.blocks,
        "f_max": cfg.f_max,
        "config": cfg.to_dict(),
        "activation": {"function": "silu", "interval_b": cfg.act_bound, "degree": cfg.act_degree},
        "weights": entries,
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def read_manifest(path) -> dict:
    try:
        manifest = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise FormatError(f"manifest {path} not found") from None
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e})") from None
    if manifest.get("format") != MANIFEST_FORMAT:
        raise FormatError(f"{path}: unsupported manifest format {manifest.get('format')!r}")
    return manifest


def config_from_manifest(manifest: Mapping) -> ResNetConfig:
    d = dict(manifest.get("config", {}))
    act = manifest.get("activation", {})
    if "interval_b" in act:
        d["act_bound"] = act["interval_b"]
    if "degree" in act:
        d["act_degree"] = act["degree"]
    return ResNetConfig.from_dict(d)


def load_model(path, load_weights: bool = True) -> tuple[dict, ResNetConfig, dict[str, np.ndarray]]:
    """``(manifest, config, weights)``; blobs are resolved relative to the manifest."""
    path = Path(path)
    manifest = read_manifest(path)
    cfg = config_from_manifest(manifest)
    weights: dict[str, np.ndarray] = {}
    if load_weights:
        for name, entry in manifest.get("weights", {}).items():
            weights[name] = read_blob(path.parent / entry["file"], entry)
        if manifest.get("architecture", "resnet20") != "empty":
            shapes = weight_shapes(cfg)
            for name in shapes:
                if name not in weights:
                    raise MissingWeight(f"manifest lacks weight {name}")
            check_weights(cfg, weights)
    return manifest, cfg, weights
