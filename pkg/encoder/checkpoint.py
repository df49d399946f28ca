"""Self-describing binary checkpoints.

Layout, all integers little-endian uint32:

    b"CREAT1"
    header length, header (UTF-8 JSON: encoder config, decoder kind, decoder width)
    repeated until end of file:
        name length, name (UTF-8), rank, dims..., float64 data (little-endian)
"""
import json
import struct
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from autodiff.tensor import Tensor
from encoder.params import ModelParams
from models.config import EncoderConfig, TaskKind
from utils.errors import CheckpointError

MAGIC = b"CREAT1"
_U32 = struct.Struct("<I")


def _pack_header(params: ModelParams) -> bytes:
    header = {
        "encoder": params.config.model_dump(mode="json"),
        "decoder_kind": params.decoder_kind.value,
        "num_outputs": params.num_outputs,
    }
    return json.dumps(header, sort_keys=True).encode("utf-8")


def checkpoint_bytes(params: ModelParams) -> bytes:
    header = _pack_header(params)
    chunks = [MAGIC, _U32.pack(len(header)), header]
    for name, tensor in params.named().items():
        encoded = name.encode("utf-8")
        chunks.append(_U32.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_U32.pack(tensor.ndim))
        chunks.extend(_U32.pack(dim) for dim in tensor.shape)
        chunks.append(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
    return b"".join(chunks)


def save_checkpoint(path: Union[str, Path], params: ModelParams) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(params))
    return path


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.offset = 0

    def take(self, count: int, what: str) -> bytes:
        if self.offset + count > len(self.raw):
            raise CheckpointError(f"checkpoint truncated while reading {what}")
        chunk = self.raw[self.offset:self.offset + count]
        self.offset += count
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(_U32.size, what))[0]

    @property
    def exhausted(self) -> bool:
        return self.offset >= len(self.raw)


def read_checkpoint(raw: bytes) -> Tuple[dict, Dict[str, np.ndarray]]:
    reader = _Reader(raw)
    if reader.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic string")
    header_len = reader.u32("header length")
    try:
        header = json.loads(reader.take(header_len, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"unreadable checkpoint header: {err}") from None
    tensors = {}
    while not reader.exhausted:
        name = reader.take(reader.u32("name length"), "tensor name").decode("utf-8")
        rank = reader.u32(f"rank of {name}")
        shape = tuple(reader.u32(f"dims of {name}") for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(reader.take(8 * count, f"data of {name}"), dtype="<f8")
        tensors[name] = data.astype(np.float64).reshape(shape)
    return header, tensors


def load_checkpoint(path: Union[str, Path]) -> ModelParams:
    """Read a checkpoint and validate every tensor against its config"""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from None
    header, tensors = read_checkpoint(raw)
    try:
        config = EncoderConfig.model_validate(header["encoder"])
        kind = TaskKind(header["decoder_kind"])
        num_outputs = int(header["num_outputs"])
    except (KeyError, ValueError) as err:
        raise CheckpointError(f"invalid checkpoint header: {err}") from None

    params = ModelParams(config, kind, num_outputs)
    expected = params.expected_shapes()
    for name in tensors:
        if name not in expected:
            raise CheckpointError(f"unexpected tensor {name} in checkpoint")
    for name, shape in expected.items():
        if name not in tensors:
            raise CheckpointError(f"tensor {name} missing from checkpoint")
        if tensors[name].shape != shape:
            raise CheckpointError(f"tensor {name} has shape {tensors[name].shape}, config expects {shape}")
        target = params.decoder if name.startswith(params.decoder_prefix + ".") else params.encoder
        target[name] = Tensor(tensors[name], requires_grad=True, name=name)
    return params
