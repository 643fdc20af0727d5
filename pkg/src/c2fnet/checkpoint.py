"""Binary checkpoint format.

Layout::

    magic "C2F1" | uint32 LE version | uint64 LE header length | UTF-8 header | payload

The header is plain text: ``key=value`` lines, a ``[tensors]`` marker, then
one line per tensor with name, shape, payload offset, and CRC32 of its raw
bytes. The payload is the concatenated little-endian float32 tensor data in
header order. Saving is fully deterministic, so save -> load -> save round
trips byte-identically.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .net import Network, NetworkSpec, _stage_plan, build_network
from .optim import KINDS, OptimizerState

MAGIC = b"C2F1"
VERSION = 1

_PARAM = "param."
_BUFFER = "buffer."
_OPTIM = "optim."


class CheckpointError(Exception):
    """Malformed, corrupted, or incompatible checkpoint file."""


@dataclass
class Checkpoint:
    spec: NetworkSpec
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    optimizer: OptimizerState
    epoch: int
    best_val_acc: float
    rng_seed: int
    config: dict[str, str] = field(default_factory=dict)
    version: int = VERSION


def from_network(net: Network, optimizer: OptimizerState, epoch: int,
                 best_val_acc: float, rng_seed: int, config: dict[str, str]) -> Checkpoint:
    return Checkpoint(
        spec=net.spec,
        params=net.parameters(),
        buffers=net.buffers(),
        optimizer=optimizer,
        epoch=epoch,
        best_val_acc=best_val_acc,
        rng_seed=rng_seed,
        config=dict(config),
    )


def _ordered_tensors(ckpt: Checkpoint):
    for name, arr in ckpt.params.items():
        yield _PARAM + name, arr
    for name, arr in ckpt.buffers.items():
        yield _BUFFER + name, arr
    for buf_name, bufs in (("v", ckpt.optimizer.v), ("m", ckpt.optimizer.m), ("s", ckpt.optimizer.s)):
        for name in ckpt.params:
            if name in bufs:
                yield f"{_OPTIM}{buf_name}.{name}", bufs[name]


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    lines = [
        f"num_classes={ckpt.spec.num_classes}",
        f"img_size={ckpt.spec.img_size}",
        f"stages={ckpt.spec.describe()}",
        f"epoch={ckpt.epoch}",
        f"best_val_acc={ckpt.best_val_acc!r}",
        f"rng_seed={ckpt.rng_seed}",
        f"optimizer.kind={ckpt.optimizer.kind}",
        f"optimizer.t={ckpt.optimizer.t}",
    ]
    for key in sorted(ckpt.config):
        lines.append(f"config.{key}={ckpt.config[key]}")
    lines.append("[tensors]")
    payload = bytearray()
    for name, arr in _ordered_tensors(ckpt):
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        shape = "x".join(str(s) for s in arr.shape)
        lines.append(f"{name} {shape} {len(payload)} {zlib.crc32(raw):08x}")
        payload += raw
    header = ("\n".join(lines) + "\n").encode("utf-8")
    blob = MAGIC + struct.pack("<I", ckpt.version) + struct.pack("<Q", len(header)) + header + bytes(payload)
    Path(path).write_bytes(blob)


def load_checkpoint(path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic in {path}: not a checkpoint file")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header_len = struct.unpack("<Q", blob[8:16])[0]
    if 16 + header_len > len(blob):
        raise CheckpointError(f"truncated checkpoint {path}: header exceeds file size")
    header = blob[16:16 + header_len].decode("utf-8")
    payload = blob[16 + header_len:]

    keys: dict[str, str] = {}
    tensor_rows: list[tuple[str, tuple[int, ...], int, int]] = []
    in_tensors = False
    for line in header.splitlines():
        if not line:
            continue
        if line == "[tensors]":
            in_tensors = True
            continue
        if not in_tensors:
            k, _, v = line.partition("=")
            keys[k] = v
        else:
            parts = line.split(" ")
            if len(parts) != 4:
                raise CheckpointError(f"malformed tensor row: {line!r}")
            name, shape_s, off_s, crc_s = parts
            shape = tuple(int(s) for s in shape_s.split("x")) if shape_s else ()
            tensor_rows.append((name, shape, int(off_s), int(crc_s, 16)))

    try:
        num_classes = int(keys["num_classes"])
        img_size = int(keys["img_size"])
        stages = keys["stages"]
        epoch = int(keys["epoch"])
        best_val_acc = float(keys["best_val_acc"])
        rng_seed = int(keys["rng_seed"])
        opt_kind = keys["optimizer.kind"]
        opt_t = int(keys["optimizer.t"])
    except KeyError as e:
        raise CheckpointError(f"checkpoint header is missing key {e}") from e

    spec = NetworkSpec(num_classes=num_classes, img_size=img_size, stages=_stage_plan(num_classes))
    if spec.describe() != stages:
        raise CheckpointError("checkpoint architecture does not match this network layout")
    config = {k[len("config."):]: v for k, v in keys.items() if k.startswith("config.")}
    if "img_size" in config and int(config["img_size"]) != img_size:
        raise CheckpointError(
            f"checkpoint img_size mismatch: architecture says {img_size}, config echo says {config['img_size']}"
        )
    if opt_kind not in KINDS:
        raise CheckpointError(f"unknown optimizer kind in checkpoint: {opt_kind!r}")

    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    optimizer = OptimizerState(kind=opt_kind, t=opt_t)
    for name, shape, offset, crc in tensor_rows:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = offset + 4 * count
        if end > len(payload):
            raise CheckpointError(f"truncated checkpoint {path}: tensor {name} exceeds payload")
        raw = payload[offset:end]
        if zlib.crc32(raw) != crc:
            raise CheckpointError(f"checksum mismatch for tensor {name}: payload is corrupted")
        arr = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        if name.startswith(_PARAM):
            params[name[len(_PARAM):]] = arr
        elif name.startswith(_BUFFER):
            buffers[name[len(_BUFFER):]] = arr
        elif name.startswith(_OPTIM):
            buf_name, _, param_name = name[len(_OPTIM):].partition(".")
            getattr(optimizer, buf_name)[param_name] = arr
        else:
            raise CheckpointError(f"unknown tensor kind: {name!r}")

    return Checkpoint(
        spec=spec,
        params=params,
        buffers=buffers,
        optimizer=optimizer,
        epoch=epoch,
        best_val_acc=best_val_acc,
        rng_seed=rng_seed,
        config=config,
        version=version,
    )


def rebuild_network(ckpt: Checkpoint) -> Network:
    """Instantiate a Network and load the checkpoint's weights into it."""
    net = build_network(ckpt.spec.num_classes, seed=0, img_size=ckpt.spec.img_size)
    for registry, stored, kind in ((net.parameters(), ckpt.params, "parameter"),
                                   (net.buffers(), ckpt.buffers, "buffer")):
        if registry.keys() != stored.keys():
            missing = registry.keys() - stored.keys()
            extra = stored.keys() - registry.keys()
            raise CheckpointError(
                f"checkpoint {kind} registry mismatch (missing: {sorted(missing)}, extra: {sorted(extra)})"
            )
        for name, arr in registry.items():
            if arr.shape != stored[name].shape:
                raise CheckpointError(
                    f"{kind} {name} shape {stored[name].shape} does not match network {arr.shape}"
                )
            arr[...] = stored[name]
    return net
