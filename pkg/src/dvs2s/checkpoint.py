"""Checkpoint files.

Layout: the magic bytes ``DVS2S1``, a little-endian uint32 header length, a
UTF-8 JSON header, then each tensor's raw little-endian row-major payload in
header order. The header lists ``(name, shape, width)`` per tensor plus the
embedded training configuration, the vocabulary digest and scalar state.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DVS2S1"
_DTYPES = {4: "<f4", 8: "<f8"}


class CheckpointError(ValueError):
    pass


def dumps(params, config=None, vocab_digest="", state=None, optimizer=None):
    """Serialise to bytes. ``optimizer`` is an optional ``OptimizerState``."""
    tensors = [(k, params[k]) for k in sorted(params)]
    opt = {}
    if optimizer is not None:
        tensors += [(f"opt.sq_grad.{k}", optimizer.sq_grad[k]) for k in sorted(optimizer.sq_grad)]
        tensors += [(f"opt.sq_delta.{k}", optimizer.sq_delta[k]) for k in sorted(optimizer.sq_delta)]
        opt = {"rho": optimizer.rho, "eps": optimizer.eps}
    entries = []
    for name, arr in tensors:
        width = arr.dtype.itemsize
        if width not in _DTYPES or arr.dtype.kind != "f":
            raise CheckpointError(f"tensor {name} has unsupported dtype {arr.dtype}")
        entries.append({"name": name, "shape": list(arr.shape), "width": width})
    header = {
        "config": config or {},
        "vocab_digest": vocab_digest,
        "state": state or {},
        "optimizer": opt,
        "tensors": entries,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", len(head)), head]
    for (_, arr), entry in zip(tensors, entries):
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPES[entry["width"]]).tobytes())
    return b"".join(chunks)


def loads(blob):
    """Inverse of :func:`dumps`. Returns a dict with params, config, state, optimizer."""
    from dvs2s.numeric import OptimizerState

    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a DVS2S checkpoint (bad magic)")
    off = len(MAGIC)
    (hlen,) = struct.unpack_from("<I", blob, off)
    off += 4
    try:
        header = json.loads(blob[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    off += hlen
    params, sq_grad, sq_delta = {}, {}, {}
    for entry in header["tensors"]:
        dt = np.dtype(_DTYPES[entry["width"]])
        n = int(np.prod(entry["shape"], dtype=np.int64))
        if off + n * dt.itemsize > len(blob):
            raise CheckpointError(f"truncated payload for {entry['name']}")
        arr = np.frombuffer(blob, dtype=dt, count=n, offset=off).reshape(entry["shape"])
        arr = arr.astype(dt.newbyteorder("="), copy=True)
        off += n * dt.itemsize
        name = entry["name"]
        if name.startswith("opt.sq_grad."):
            sq_grad[name[len("opt.sq_grad.") :]] = arr
        elif name.startswith("opt.sq_delta."):
            sq_delta[name[len("opt.sq_delta.") :]] = arr
        else:
            params[name] = arr
    if off != len(blob):
        raise CheckpointError("trailing bytes after the last tensor")
    optimizer = None
    if sq_grad:
        optimizer = OptimizerState(sq_grad, sq_delta, **header["optimizer"])
    return {
        "params": params,
        "config": header["config"],
        "vocab_digest": header["vocab_digest"],
        "state": header["state"],
        "optimizer": optimizer,
    }


def save(path, params, **kwargs):
    Path(path).write_bytes(dumps(params, **kwargs))


def load(path):
    return loads(Path(path).read_bytes())
