"""Binary container for checkpoints and label tensors.

Layout (all integers little-endian):

    magic    4 bytes  b"EQSY"
    version  uint32   format version (currently 1)
    cfg_len  uint64   length of the UTF-8 config text block
    config   cfg_len bytes of `key = value` lines
    count    uint32   number of named arrays
    then per array:
        name_len uint32, name (UTF-8)
        dtype    uint8 tag: 0 float32, 1 float64, 2 int64, 3 uint8
        rank     uint32
        dims     rank * uint32
        payload  raw little-endian array bytes

Round-trips are bit-exact: payloads are stored verbatim.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"EQSY"
VERSION = 1

_DTYPE_TAGS = {0: "<f4", 1: "<f8", 2: "<i8", 3: "|u1"}
_TAG_FOR = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("<i8"): 2, np.dtype("|u1"): 3}


class CheckpointError(Exception):
    pass


def save_container(path, config_text: str, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    cfg = config_text.encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(cfg)))
        f.write(cfg)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            if arr.dtype not in _TAG_FOR:
                raise CheckpointError(f"array {name!r} has unsupported dtype {arr.dtype}")
            nm = name.encode("utf-8")
            f.write(struct.pack("<I", len(nm)))
            f.write(nm)
            f.write(struct.pack("<B", _TAG_FOR[arr.dtype]))
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_container(path) -> tuple[str, dict[str, np.ndarray]]:
    path = Path(path)
    data = path.read_bytes()
    view = memoryview(data)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"{path}: truncated container")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic (not an EQSY container)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}")
    (cfg_len,) = struct.unpack("<Q", take(8))
    config_text = bytes(take(cfg_len)).decode("utf-8")
    (count,) = struct.unpack("<I", take(4))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode("utf-8")
        (tag,) = struct.unpack("<B", take(1))
        if tag not in _DTYPE_TAGS:
            raise CheckpointError(f"{path}: unknown dtype tag {tag} for array {name!r}")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        dtype = np.dtype(_DTYPE_TAGS[tag])
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        arr = np.frombuffer(take(nbytes), dtype=dtype).reshape(dims).copy()
        arrays[name] = arr
    if pos != len(view):
        raise CheckpointError(f"{path}: {len(view) - pos} trailing bytes")
    return config_text, arrays


# -- model checkpoints ------------------------------------------------------


def save_model(path, model) -> None:
    from .config import dataclass_to_text

    arrays = {}
    for name, tensor in model.state_dict().items():
        arrays[name] = tensor.detach().cpu().numpy()
    save_container(path, dataclass_to_text(model.config), arrays)


def load_model(path):
    from .config import dataclass_from_text
    from .model import ModelConfig, SymmetryNet

    config_text, arrays = load_container(path)
    config = dataclass_from_text(ModelConfig, config_text)
    model = SymmetryNet(config)
    state = {name: torch.from_numpy(arr) for name, arr in arrays.items()}
    model.load_state_dict(state)
    return model
