import json
import logging
import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np
import torch

from .errors import FormatError, InputError
from .model import ModelConfig
from .trainer import Checkpoint, TrainConfig

logger = logging.getLogger('gebd.checkpoint')

CHECKPOINT_MAGIC = b"GEBC"
CHECKPOINT_VERSION = 1
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")

PathLike = Union[str, Path]


def metrics_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".metrics.jsonl")


def _header(ckpt: Checkpoint) -> dict:
    return {
        "model": ckpt.model_config.to_dict(),
        "train": ckpt.train_config.to_dict(),
        "fold_index": ckpt.fold_index,
        "history": ckpt.history,
        "best_epoch": ckpt.best_epoch,
        "best_val_f1": ckpt.best_val_f1,
        "tuned_threshold": ckpt.tuned_threshold,
    }


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    """GEBC container: magic, version, length-prefixed JSON block, then named f64 parameter blobs."""
    config_block = json.dumps(_header(ckpt), sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, _U32.pack(CHECKPOINT_VERSION), _U32.pack(len(config_block)), config_block,
             _U32.pack(len(ckpt.state))]
    for name, tensor in ckpt.state.items():
        encoded = name.encode("utf-8")
        values = tensor.detach().cpu().to(torch.float64).numpy()
        parts.append(_U16.pack(len(encoded)))
        parts.append(encoded)
        parts.append(_U32.pack(values.ndim))
        parts.extend(_U32.pack(d) for d in values.shape)
        parts.append(np.ascontiguousarray(values, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.source}: truncated {what}", offset=len(self.data))
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u16(self, what: str) -> int:
        return _U16.unpack(self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    reader = _Reader(data, source)
    if reader.take(4, "magic") != CHECKPOINT_MAGIC:
        raise FormatError(f"{source}: not a checkpoint (bad magic)", offset=0)
    version = reader.u32("version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {version}", offset=4)
    block_start = reader.pos + 4
    try:
        header = json.loads(reader.take(reader.u32("config length"), "config block").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{source}: unreadable config block: {e}", offset=block_start)

    state: Dict[str, torch.Tensor] = {}
    for _ in range(reader.u32("parameter count")):
        name = reader.take(reader.u16("name length"), "parameter name").decode("utf-8")
        ndim = reader.u32(f"{name} rank")
        shape = tuple(reader.u32(f"{name} shape") for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        raw = reader.take(8 * count, f"{name} values")
        state[name] = torch.from_numpy(np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape))
    if reader.pos != len(data):
        raise FormatError(f"{source}: trailing bytes after parameters", offset=reader.pos)

    return Checkpoint(
        model_config=ModelConfig.from_dict(header["model"]),
        train_config=TrainConfig.from_dict(header["train"]),
        fold_index=int(header["fold_index"]),
        state=state,
        history=header.get("history", []),
        best_epoch=int(header.get("best_epoch", 0)),
        best_val_f1=float(header.get("best_val_f1", 0.0)),
        tuned_threshold=header.get("tuned_threshold"),
    )


def save_checkpoint(path: PathLike, ckpt: Checkpoint) -> Path:
    """Write the checkpoint and mirror its metric history to a JSON lines file beside it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(ckpt))
    with open(metrics_path(path), "w", encoding="utf-8") as f:
        for record in ckpt.history:
            f.write(json.dumps({"fold_index": ckpt.fold_index, **record}, sort_keys=True) + "\n")
    logger.info(f"Saved checkpoint for fold {ckpt.fold_index} to {path}")
    return path


def load_checkpoint(path: PathLike) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"Checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes(), str(path))
