"""SPCS checkpoint files and atomic artifact writes.

Layout (all integers little-endian):

    magic "SPCS" | version u16 | config_len u32 | RunConfig JSON
    | record_count u32 | records | step u64 | crc32 u32

Each record is name_len u32, UTF-8 name, rank u32, rank x dim u32 and a
float32 payload. Weight tensors use their model names; masks are stored as
mask.head.<layer> and mask.neuron.<layer>. The CRC covers every byte
before it.
"""

from __future__ import annotations

import json
import logging
import os
import struct
import tempfile
import zlib
from typing import NamedTuple

import numpy as np
import pandas as pd
import torch

from src.config import RunConfig, run_config_from_json
from src.errors import CompatibilityError, ConfigError, DataIOError, DependencyError, IntegrityError
from src.model import TORCH_DTYPES, EncoderWeights, MaskSet, expected_shapes

logger = logging.getLogger(__name__)

MAGIC = b"SPCS"
FORMAT_VERSION = 1

_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


class LoadedCheckpoint(NamedTuple):
    weights: EncoderWeights
    masks: MaskSet
    config: RunConfig
    step: int


# --- atomic writes ---

def write_bytes(path: str, data: bytes) -> None:
    """Write to a temp file in the target directory, then rename over the target."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", suffix=os.path.basename(path), dir=directory)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except OSError as e:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise DataIOError(f"could not write {path}: {e}") from None


def write_text(path: str, text: str) -> None:
    write_bytes(path, text.encode("utf-8"))


def write_json(path: str, payload: dict) -> None:
    write_text(path, json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")


def write_frame(path: str, frame: pd.DataFrame) -> None:
    write_text(path, frame.to_csv(index=False, lineterminator="\n"))


def artifact_path(workdir: str, name: str, stage: str) -> str:
    """Path of an upstream artifact; DependencyError names the stage that makes it."""
    path = os.path.join(workdir, name)
    if not os.path.exists(path):
        raise DependencyError(stage, path)
    return path


# --- encoding ---

def _record(name: str, tensor: torch.Tensor) -> bytes:
    encoded = name.encode("utf-8")
    shape = tuple(tensor.shape)
    payload = tensor.detach().to(torch.float32).contiguous().numpy().astype("<f4", copy=False)
    parts = [_U32.pack(len(encoded)), encoded, _U32.pack(len(shape))]
    parts += [_U32.pack(dim) for dim in shape]
    parts.append(payload.tobytes())
    return b"".join(parts)


def encode_checkpoint(weights: EncoderWeights, masks: MaskSet, config: RunConfig, step: int) -> bytes:
    if config.model != weights.config:
        raise ConfigError("checkpoint config does not describe these weights")
    masks.check_compatible(weights.config)
    weights.check_shapes()

    records = [_record(name, t) for name, t in weights.tensors.items()]
    records += [_record(f"mask.head.{i}", m) for i, m in enumerate(masks.head)]
    records += [_record(f"mask.neuron.{i}", m) for i, m in enumerate(masks.neuron)]

    config_json = config.to_json().encode("utf-8")
    body = b"".join([
        MAGIC,
        _U16.pack(FORMAT_VERSION),
        _U32.pack(len(config_json)),
        config_json,
        _U32.pack(len(records)),
        *records,
        _U64.pack(step),
    ])
    return body + _U32.pack(zlib.crc32(body) & 0xFFFFFFFF)


def checkpoint_save(path: str, weights: EncoderWeights, masks: MaskSet, config: RunConfig, step: int) -> None:
    write_bytes(path, encode_checkpoint(weights, masks, config, step))
    logger.info("Saved checkpoint %s (step %d)", path, step)


# --- decoding ---

class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.path = path
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise IntegrityError(f"{self.path}: truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: struct.Struct) -> int:
        return fmt.unpack(self.take(fmt.size))[0]


def decode_checkpoint(data: bytes, path: str = "<bytes>") -> LoadedCheckpoint:
    header = len(MAGIC) + _U16.size
    if len(data) < header + _U32.size:
        raise IntegrityError(f"{path}: truncated checkpoint ({len(data)} bytes)")
    if data[:len(MAGIC)] != MAGIC:
        raise IntegrityError(f"{path}: not an SPCS checkpoint")
    version = _U16.unpack(data[len(MAGIC):header])[0]
    if version != FORMAT_VERSION:
        raise CompatibilityError(
            f"{path}: checkpoint format version {version}, this build reads version {FORMAT_VERSION}"
        )

    body, trailer = data[:-_U32.size], data[-_U32.size:]
    if zlib.crc32(body) & 0xFFFFFFFF != _U32.unpack(trailer)[0]:
        raise IntegrityError(f"{path}: CRC mismatch")

    reader = _Reader(body, path)
    reader.take(header)
    config = run_config_from_json(reader.take(reader.unpack(_U32)).decode("utf-8"))
    model_config = config.model

    raw: dict[str, np.ndarray] = {}
    for _ in range(reader.unpack(_U32)):
        name = reader.take(reader.unpack(_U32)).decode("utf-8")
        rank = reader.unpack(_U32)
        shape = tuple(reader.unpack(_U32) for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64))
        raw[name] = np.frombuffer(reader.take(4 * count), dtype="<f4").reshape(shape)
    step = reader.unpack(_U64)
    if reader.pos != len(body):
        raise IntegrityError(f"{path}: {len(body) - reader.pos} trailing bytes")

    dtype = TORCH_DTYPES[model_config.dtype]
    tensors = {}
    for name, shape in expected_shapes(model_config).items():
        if name not in raw:
            raise CompatibilityError(f"{path}: missing tensor {name}")
        if raw[name].shape != shape:
            raise CompatibilityError(
                f"{path}: tensor {name} has shape {raw[name].shape}, config expects {shape}"
            )
        tensors[name] = torch.from_numpy(raw[name].astype(np.float32)).to(dtype)

    try:
        masks = MaskSet(
            head=[torch.from_numpy(raw[f"mask.head.{i}"].astype(np.float32)).to(dtype)
                  for i in range(model_config.num_layers)],
            neuron=[torch.from_numpy(raw[f"mask.neuron.{i}"].astype(np.float32)).to(dtype)
                    for i in range(model_config.num_layers)],
        )
    except KeyError as e:
        raise CompatibilityError(f"{path}: missing mask record {e.args[0]}") from None
    extra = set(raw) - set(tensors) - {f"mask.{kind}.{i}" for kind in ("head", "neuron")
                                       for i in range(model_config.num_layers)}
    if extra:
        raise CompatibilityError(f"{path}: unexpected records {sorted(extra)}")
    try:
        masks.check_compatible(model_config)
    except Exception as e:
        raise CompatibilityError(f"{path}: {e}") from None

    return LoadedCheckpoint(EncoderWeights(model_config, tensors), masks, config, step)


def checkpoint_load(path: str) -> LoadedCheckpoint:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise DataIOError(f"could not read {path}: {e}") from None
    return decode_checkpoint(data, path)
