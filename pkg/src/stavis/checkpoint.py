"""Checkpoint files.

Layout: magic ``STVCKPT1``, a little-endian uint64 header length, a UTF-8
JSON header (sorted keys, no whitespace), then one raw tensor record per
entry in header order: parameters first, then optimizer momentum buffers.
Writing the same state twice gives identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from stavis.errors import ShapeError
from stavis.nn import Params
from stavis.serialize import decode_array, encode_array
from stavis.tensor import Tensor

MAGIC = b"STVCKPT1"


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    config: dict
    stage: str = "visual"
    epoch: int = 0
    step: int = 0
    momentum: dict[str, np.ndarray] = field(default_factory=dict)

    def to_params(self) -> Params:
        return {k: Tensor(v, requires_grad=True) for k, v in self.params.items()}


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    names = sorted(ckpt.params)
    moms = sorted(ckpt.momentum)
    header = {
        "config": ckpt.config,
        "stage": ckpt.stage,
        "epoch": int(ckpt.epoch),
        "step": int(ckpt.step),
        "params": names,
        "momentum": moms,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = [encode_array(ckpt.params[n]) for n in names] + [encode_array(ckpt.momentum[n]) for n in moms]
    return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(body)


def decode_checkpoint(buf: bytes) -> Checkpoint:
    if buf[:8] != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    if len(buf) < 16:
        raise ValueError("truncated checkpoint header")
    (n,) = struct.unpack("<Q", buf[8:16])
    if len(buf) < 16 + n:
        raise ValueError("truncated checkpoint header")
    header = json.loads(buf[16:16 + n].decode())
    offset = 16 + n
    params, moms = {}, {}
    for target, names in ((params, header["params"]), (moms, header["momentum"])):
        for name in names:
            target[name], offset = decode_array(buf, offset)
    if offset != len(buf):
        raise ValueError(f"{len(buf) - offset} trailing bytes after checkpoint data")
    return Checkpoint(params, header["config"], header["stage"], header["epoch"], header["step"], moms)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


def shape_diff(expected: Params, found: dict[str, np.ndarray]) -> list[str]:
    """Human-readable differences between a model's parameters and a checkpoint's."""
    lines = []
    for name in sorted(set(expected) | set(found)):
        if name not in found:
            lines.append(f"missing {name} {expected[name].shape}")
        elif name not in expected:
            lines.append(f"unexpected {name} {found[name].shape}")
        elif expected[name].shape != found[name].shape:
            lines.append(f"{name}: model {expected[name].shape} vs checkpoint {found[name].shape}")
    return lines


def load_into(params: Params, found: dict[str, np.ndarray]) -> None:
    diff = shape_diff(params, found)
    if diff:
        raise ShapeError("checkpoint does not match the model:\n  " + "\n  ".join(diff))
    for name, value in found.items():
        params[name].data[...] = value
