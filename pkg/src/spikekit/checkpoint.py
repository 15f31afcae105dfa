"""Bit-exact binary checkpoints.

Layout: magic bytes ``SDTF``, a little-endian u32 format version, then a
manifest-free sequence of records. Each record is ``u32 name length``,
the UTF-8 name, ``u32 rank``, one ``u32`` per dimension, and the payload
as raw little-endian IEEE-754 float32 values. The first record is always
``__config`` and holds the architecture description's scalar fields in
declared order; the remaining records mirror the model's state dict.
Names starting with ``__`` other than the config are free-form extras
(training step, momentum buffers) and round-trip untouched.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch

from .lif import LifParams
from .model import ModelConfig, SpikingTransformer, build_model

__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "save_checkpoint",
    "read_records",
    "write_records",
    "load_checkpoint",
    "load_model",
    "restore_state",
    "config_to_vector",
    "config_from_vector",
]

MAGIC = b"SDTF"
FORMAT_VERSION = 1
CONFIG_RECORD = "__config"

# scalar fields of ModelConfig in declared order; sps_channels contributes
# four entries and the neuron constants four more.
_CONFIG_LEN = 17


def config_to_vector(cfg: ModelConfig) -> np.ndarray:
    values = [
        cfg.timesteps,
        cfg.depth,
        cfg.dim,
        cfg.heads,
        cfg.mlp_ratio,
        cfg.in_channels,
        cfg.height,
        cfg.width,
        cfg.num_classes,
        *cfg.sps_channels,
        cfg.lif.u_th,
        cfg.lif.beta,
        cfg.lif.v_reset,
        cfg.lif.surrogate_width,
    ]
    return np.asarray(values, dtype=np.float32)


def config_from_vector(vec: np.ndarray) -> ModelConfig:
    if vec.shape != (_CONFIG_LEN,):
        raise ValueError(f"config record must hold {_CONFIG_LEN} values, got {vec.shape}")
    v = [float(x) for x in vec]
    return ModelConfig(
        timesteps=int(v[0]),
        depth=int(v[1]),
        dim=int(v[2]),
        heads=int(v[3]),
        mlp_ratio=v[4],
        in_channels=int(v[5]),
        height=int(v[6]),
        width=int(v[7]),
        num_classes=int(v[8]),
        sps_channels=tuple(int(x) for x in v[9:13]),
        lif=LifParams(u_th=v[13], beta=v[14], v_reset=v[15], surrogate_width=v[16]),
    )


def write_records(path, records: "OrderedDict[str, np.ndarray]") -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        for name, arr in records.items():
            data = np.asarray(arr, dtype="<f4")
            if not data.flags["C_CONTIGUOUS"]:
                data = np.ascontiguousarray(data)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", data.ndim))
            for dim in data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(data.tobytes())


def read_records(path) -> "OrderedDict[str, np.ndarray]":
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    records: "OrderedDict[str, np.ndarray]" = OrderedDict()
    offset = 8
    while offset < len(blob):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        dims = struct.unpack_from(f"<{rank}I", blob, offset) if rank else ()
        offset += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        records[name] = arr.reshape(dims).copy()
    return records


def save_checkpoint(path, model: SpikingTransformer, extra=None) -> None:
    """Write the model's config and state dict, plus optional extra records."""
    records: "OrderedDict[str, np.ndarray]" = OrderedDict()
    records[CONFIG_RECORD] = config_to_vector(model.cfg)
    for name, tensor in model.state_dict().items():
        records[name] = tensor.detach().cpu().numpy().astype(np.float32)
    for name, arr in (extra or {}).items():
        records[name] = np.asarray(arr, dtype=np.float32)
    write_records(path, records)


def load_checkpoint(path):
    """Read a checkpoint into ``(config, state records, extra records)``."""
    records = read_records(path)
    if CONFIG_RECORD not in records:
        raise ValueError(f"{path}: missing {CONFIG_RECORD} record")
    cfg = config_from_vector(records.pop(CONFIG_RECORD))
    extra = OrderedDict(
        (k, records.pop(k)) for k in [k for k in records if k.startswith("__")]
    )
    return cfg, records, extra


def restore_state(model: SpikingTransformer, records) -> None:
    state = model.state_dict()
    missing = [k for k in state if k not in records]
    unexpected = [k for k in records if k not in state]
    if missing or unexpected:
        raise ValueError(
            f"checkpoint does not match the model: missing {missing[:3]}, "
            f"unexpected {unexpected[:3]}"
        )
    new_state = {}
    for name, tensor in state.items():
        arr = records[name]
        if tuple(arr.shape) != tuple(tensor.shape):
            raise ValueError(
                f"record {name!r} has shape {arr.shape}, model expects {tuple(tensor.shape)}"
            )
        new_state[name] = torch.from_numpy(np.asarray(arr)).to(tensor.dtype)
    model.load_state_dict(new_state)


def load_model(path, shortcut: str = "membrane"):
    """Rebuild a model from a checkpoint. Returns ``(model, extra records)``."""
    cfg, records, extra = load_checkpoint(path)
    model = build_model(cfg, seed=0, shortcut=shortcut)
    restore_state(model, records)
    return model, extra
