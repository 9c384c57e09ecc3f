"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    bytes 0..7    magic b"BVITCKPT"
    bytes 8..11   u32 container version (currently 1)
    bytes 12..19  u64 manifest length in bytes
    manifest      UTF-8 JSON: model config, schedule, train state, optimizer
                  scalars, and a tensor directory (name, dtype, shape, offset,
                  nbytes relative to the payload start)
    payload       raw tensor bytes, row-major, in directory order

Model parameters are stored under their parameter names, optimizer moments
under ``adam_m.<name>`` / ``adam_v.<name>``. See docs/checkpoint-format.md.
"""

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .curriculum import ImageSizeSchedule
from .errors import CheckpointError
from .model import ModelConfig, VitModel
from .tensor import Tensor

MAGIC = b"BVITCKPT"
VERSION = 1


@dataclasses.dataclass
class CheckpointBundle:
    model: VitModel
    adam_state: dict  # {"t": int, "moments": {name: {"m": arr, "v": arr}}}
    train_state: dict  # epoch, global_step, elapsed_s, current_image_size, seed
    schedule: ImageSizeSchedule


def save_checkpoint(path, model: VitModel, adam_state: dict, train_state: dict,
                    schedule: ImageSizeSchedule) -> None:
    """Write atomically: a killed run leaves the previous file intact."""
    path = Path(path)
    entries = []
    blobs = []
    offset = 0

    def put(name: str, arr: np.ndarray):
        nonlocal offset
        raw = np.ascontiguousarray(arr)
        if raw.dtype.byteorder == ">":
            raw = raw.astype(raw.dtype.newbyteorder("<"))
        blob = raw.tobytes()
        entries.append({
            "name": name,
            "dtype": raw.dtype.name,
            "shape": list(raw.shape),
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)

    for name, t in model.params.items():
        put(name, t.data)
    for name, st in adam_state.get("moments", {}).items():
        put(f"adam_m.{name}", st["m"])
        put(f"adam_v.{name}", st["v"])

    manifest = {
        "format_version": VERSION,
        "model_config": dataclasses.asdict(model.config),
        "schedule": dataclasses.asdict(schedule),
        "train_state": dict(train_state),
        "current_grid": model.current_grid,
        "dtype": model.dtype.name,
        "adam_t": int(adam_state.get("t", 0)),
        "tensors": entries,
    }
    blob = json.dumps(manifest).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)


def load_checkpoint(path) -> CheckpointBundle:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < len(MAGIC) + 12:
        raise CheckpointError(f"{path}: file too short for header")
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:8]!r}")
    (version,) = struct.unpack_from("<I", raw, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}")
    (manifest_len,) = struct.unpack_from("<Q", raw, 12)
    header_end = 20 + manifest_len
    if len(raw) < header_end:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[20:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest: {exc}") from exc

    payload = raw[header_end:]
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        lo, n = entry["offset"], entry["nbytes"]
        if lo + n > len(payload):
            raise CheckpointError(f"{path}: truncated payload at tensor {entry['name']!r}")
        arr = np.frombuffer(payload[lo:lo + n], dtype=np.dtype(entry["dtype"]))
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()

    try:
        config = ModelConfig(**manifest["model_config"])
        schedule = ImageSizeSchedule(**manifest["schedule"])
        dtype = np.dtype(manifest["dtype"])
        current_grid = int(manifest["current_grid"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: invalid manifest field: {exc}") from exc

    params = {}
    moments: dict[str, dict[str, np.ndarray]] = {}
    for name, arr in tensors.items():
        if name.startswith("adam_m."):
            moments.setdefault(name[len("adam_m."):], {})["m"] = arr
        elif name.startswith("adam_v."):
            moments.setdefault(name[len("adam_v."):], {})["v"] = arr
        else:
            params[name] = Tensor(arr, requires_grad=True)

    model = VitModel(config, params, current_grid, dtype)
    adam_state = {"t": int(manifest.get("adam_t", 0)), "moments": moments}
    return CheckpointBundle(model, adam_state, dict(manifest["train_state"]), schedule)
