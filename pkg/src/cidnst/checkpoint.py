"""Binary parameter container shared by ASR model ("CIDM") and LM ("CIDL") checkpoints.

Layout, little-endian::

    magic[4]  u32 version
    u32 config_len  config_len bytes of UTF-8 JSON (config echo)
    u32 n_tensors
    per tensor: u32 name_len, UTF-8 name, u32 rank, rank x u32 dims, prod(dims) x f64

Tensors are written in sorted name order so identical parameters give
identical bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

VERSION = 1


class CheckpointError(ValueError):
    pass


def write_container(path, magic: bytes, config: dict, tensors: dict[str, torch.Tensor]):
    assert len(magic) == 4
    cfg = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [magic, struct.pack("<I", VERSION), struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = tensors[name].detach().cpu().numpy().astype("<f8", copy=False)
        arr = np.ascontiguousarray(arr)
        bname = name.encode("utf-8")
        parts.append(struct.pack("<I", len(bname)))
        parts.append(bname)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_container(path, magic: bytes) -> tuple[dict, dict[str, torch.Tensor]]:
    data = Path(path).read_bytes()
    if data[:4] != magic:
        raise CheckpointError(f"{path}: expected magic {magic!r}, found {data[:4]!r}")
    try:
        version, cfg_len = struct.unpack_from("<II", data, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        pos = 12
        config = json.loads(data[pos : pos + cfg_len].decode("utf-8"))
        pos += cfg_len
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        tensors = {}
        for _ in range(n):
            (ln,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + ln].decode("utf-8")
            pos += ln
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            if pos + 8 * count > len(data):
                raise CheckpointError(f"{path}: truncated tensor {name}")
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(dims)
            pos += 8 * count
            tensors[name] = torch.from_numpy(arr.astype(np.float64))
    except struct.error as e:
        raise CheckpointError(f"{path}: truncated checkpoint") from e
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return config, tensors
