"""Binary checkpoints of a training state.

Layout (little endian)::

    b"DDGN"  u32 version  u32 meta_len  meta (UTF-8 ``key=value`` lines, sorted)
    records: u32 name_len  name  u8 dtype  u8 rank  rank*u32 extents  payload

Records hold every parameter (``param/<net>.<name>``), every RMSProp
accumulator (``opt/<group>/<net>.<name>``) and every loss series
(``hist/<loss>``).  Writing the same state twice gives identical bytes.
"""
import io
import json
import os
import struct

import numpy as np

from .config import parse_config
from .signal_io import _atomic_write

MAGIC = b"DDGN"
VERSION = 1
DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<f4"), 3: np.dtype("<i8")}
DTYPE_TAGS = {v: k for k, v in DTYPES.items()}


class CheckpointFormatError(ValueError):
    pass


def _meta_block(meta):
    lines = []
    for k in sorted(meta):
        v = str(meta[k])
        if "\n" in v or "=" in k:
            raise ValueError(f"metadata entry {k!r} cannot be stored on one line")
        lines.append(f"{k}={v}")
    return "\n".join(lines).encode("utf-8")


def _record(name, arr):
    arr = np.ascontiguousarray(arr)
    dt = arr.dtype.newbyteorder("<")
    if dt not in DTYPE_TAGS:
        raise ValueError(f"unsupported dtype {arr.dtype} for {name}")
    raw = name.encode("utf-8")
    head = struct.pack("<I", len(raw)) + raw + struct.pack("<BB", DTYPE_TAGS[dt], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.astype(dt, copy=False).tobytes()


def encode(meta, tensors):
    """``meta`` dict and ordered ``(name, array)`` pairs -> bytes."""
    block = _meta_block(meta)
    out = io.BytesIO()
    out.write(MAGIC + struct.pack("<II", VERSION, len(block)) + block)
    for name, arr in tensors:
        out.write(_record(name, arr))
    return out.getvalue()


def decode(buf):
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise CheckpointFormatError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    version, mlen = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    pos = 12 + mlen
    if pos > len(buf):
        raise CheckpointFormatError("truncated metadata block")
    meta = {}
    for line in buf[12:pos].decode("utf-8").splitlines():
        k, sep, v = line.partition("=")
        if not sep:
            raise CheckpointFormatError(f"malformed metadata line {line!r}")
        meta[k] = v
    tensors = {}
    try:
        while pos < len(buf):
            (nlen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            tag, rank = struct.unpack_from("<BB", buf, pos)
            pos += 2
            shape = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            if tag not in DTYPES:
                raise CheckpointFormatError(f"record {name!r}: unknown dtype tag {tag}")
            dt = DTYPES[tag]
            nbytes = dt.itemsize * int(np.prod(shape, dtype=np.int64))
            if pos + nbytes > len(buf):
                raise CheckpointFormatError(f"record {name!r}: truncated payload")
            tensors[name] = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(shape).copy()
            pos += nbytes
    except struct.error as exc:
        raise CheckpointFormatError(f"truncated record: {exc}") from None
    return meta, tensors


def state_tensors(state):
    out = [(f"param/{n}", p.data) for n, p in state.model.named_parameters()]
    for group in sorted(state.optimizers):
        for n, arr in state.optimizers[group].state_arrays().items():
            out.append((f"opt/{group}/{n}", arr))
    for k, series in state.loss_history.items():
        out.append((f"hist/{k}", np.asarray(series, dtype=np.float64)))
    return out


def state_meta(state, manifest_hash=""):
    return {"config": json.dumps(state.config.to_text()),
            "step": state.step,
            "rng_state": json.dumps(state.rng.bit_generator.state, sort_keys=True),
            "manifest_hash": manifest_hash,
            "mode": state.model.mode,
            "loss_names": ",".join(state.loss_history)}


def save_checkpoint(state, path, manifest_hash=""):
    _atomic_write(path, encode(state_meta(state, manifest_hash), state_tensors(state)))


def load_checkpoint(path):
    """Rebuild a :class:`TrainState` (model, optimizers, rng, history) from ``path``."""
    from .networks import build_model
    from .trainer import init_state

    with open(path, "rb") as fh:
        meta, tensors = decode(fh.read())
    try:
        cfg = parse_config(json.loads(meta["config"]))
        model = build_model(cfg, 0)
        state = init_state(model, cfg, 0)
        for n, p in model.named_parameters():
            p.data[...] = tensors[f"param/{n}"]
        for group, opt in state.optimizers.items():
            opt.load_state_arrays({n: tensors[f"opt/{group}/{n}"] for n in opt.sq})
        names = [n for n in meta["loss_names"].split(",") if n]
        state.loss_history = {n: tensors[f"hist/{n}"].tolist() for n in names}
        state.step = int(meta["step"])
        state.rng.bit_generator.state = json.loads(meta["rng_state"])
    except KeyError as exc:
        raise CheckpointFormatError(f"checkpoint missing entry {exc}") from None
    state.manifest_hash = meta.get("manifest_hash", "")
    return state
