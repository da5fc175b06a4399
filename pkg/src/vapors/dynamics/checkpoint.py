"""Versioned binary checkpoints.

Layout::

    VAPORS-CKPT 1\\n
    <manifest byte length>\\n
    <manifest: plain text, one record per line>
    <payload: little-endian float32 tensors, back to back>

Manifest records are ``config <json>``, ``step <n>`` and, per tensor,
``param <name> f32le <d0>x<d1>... <offset> <nbytes>`` with offsets relative
to the payload start.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from ..config import ModelConfig
from .model import ModelParams, param_shapes

MAGIC = b"VAPORS-CKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _shape_str(shape) -> str:
    return "x".join(str(d) for d in shape) if shape else "scalar"


def _parse_shape(text: str) -> tuple[int, ...]:
    return () if text == "scalar" else tuple(int(d) for d in text.split("x"))


def encode_checkpoint(params: ModelParams, step: int = 0) -> bytes:
    lines = [
        "config " + json.dumps(dataclasses.asdict(params.cfg), sort_keys=True),
        f"step {int(step)}",
    ]
    blobs = []
    offset = 0
    for name, tensor in params.tensors.items():
        blob = np.ascontiguousarray(tensor, dtype="<f4").tobytes()
        lines.append(f"param {name} f32le {_shape_str(tensor.shape)} {offset} {len(blob)}")
        blobs.append(blob)
        offset += len(blob)
    lines.append("end")
    manifest = ("\n".join(lines) + "\n").encode("utf-8")
    header = MAGIC + b" " + str(VERSION).encode() + b"\n" + str(len(manifest)).encode() + b"\n"
    return header + manifest + b"".join(blobs)


def save_checkpoint(path: str | Path, params: ModelParams, step: int = 0) -> Path:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(params, step))
    tmp.replace(path)
    return path


def decode_checkpoint(data: bytes, expected: ModelConfig | None = None) -> tuple[ModelParams, int]:
    try:
        first, rest = data.split(b"\n", 1)
        length_line, rest = rest.split(b"\n", 1)
        magic, version = first.split(b" ")
        mlen = int(length_line)
    except ValueError as exc:
        raise CheckpointError("malformed checkpoint header") from exc
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file")
    if int(version) != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {int(version)}")
    manifest = rest[:mlen].decode("utf-8")
    payload = rest[mlen:]

    cfg = None
    step = 0
    records = []
    for line in manifest.splitlines():
        kind, _, body = line.partition(" ")
        if kind == "config":
            fields = json.loads(body)
            cfg = ModelConfig(**fields)
        elif kind == "step":
            step = int(body)
        elif kind == "param":
            name, dtype, shape, offset, nbytes = body.split(" ")
            if dtype != "f32le":
                raise CheckpointError(f"unsupported dtype {dtype} for {name}")
            records.append((name, _parse_shape(shape), int(offset), int(nbytes)))
        elif kind == "end":
            break
        else:
            raise CheckpointError(f"unknown manifest record {kind!r}")
    if cfg is None:
        raise CheckpointError("manifest lacks a model config")
    if expected is not None:
        mismatched = [
            f.name for f in dataclasses.fields(ModelConfig)
            if f.name != "dtype" and getattr(expected, f.name) != getattr(cfg, f.name)
        ]
        if mismatched:
            raise CheckpointError(f"checkpoint config differs from expected in {mismatched}")
        cfg = dataclasses.replace(cfg, dtype=expected.dtype)

    shapes = param_shapes(cfg)
    if [r[0] for r in records] != list(shapes):
        raise CheckpointError("manifest parameter names do not match the model layout")
    tensors = {}
    dtype = np.dtype(cfg.dtype)
    for name, shape, offset, nbytes in records:
        if shape != shapes[name]:
            raise CheckpointError(f"{name}: manifest shape {shape} != model shape {shapes[name]}")
        if nbytes != 4 * int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"{name}: byte count {nbytes} does not match shape {shape}")
        if offset + nbytes > len(payload):
            raise CheckpointError(f"{name}: payload truncated")
        arr = np.frombuffer(payload, dtype="<f4", count=nbytes // 4, offset=offset)
        tensors[name] = arr.reshape(shape).astype(dtype)
    return ModelParams(cfg, tensors), step


def load_checkpoint(path: str | Path, expected: ModelConfig | None = None) -> tuple[ModelParams, int]:
    return decode_checkpoint(Path(path).read_bytes(), expected)
