"""Binary checkpoint container.

Layout (all integers little-endian unsigned):

    magic "RASM" | u32 version | u64 config_len | config utf-8 bytes
    u64 n_params | n_params x tensor record
    u8 has_optimizer | [u64 opt_step | moments m... | moments v...]
    u64 global_step

A tensor record is: u16 path_len | path utf-8 | u8 dtype tag | u8 ndim |
ndim x u64 dims | raw little-endian payload. Save -> load -> save is
byte-identical because insertion order of the parameter dict is preserved.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from .errors import CheckpointError
from .tensor import Tensor

MAGIC = b"RASM"
VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def _write_tensor(buf, path, arr):
    arr = np.asarray(arr)
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)  # keeps 0-d shape, unlike a blind copy
    if arr.dtype not in _TAGS:
        raise CheckpointError(f"cannot serialize dtype {arr.dtype} at {path}")
    enc = path.encode("utf-8")
    buf.write(struct.pack("<H", len(enc)))
    buf.write(enc)
    buf.write(struct.pack("<BB", _TAGS[arr.dtype], arr.ndim))
    for d in arr.shape:
        buf.write(struct.pack("<Q", d))
    buf.write(arr.astype(_DTYPES[_TAGS[arr.dtype]], copy=False).tobytes())


def _read_exact(buf, n, what):
    b = buf.read(n)
    if len(b) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return b


def _read_tensor(buf):
    (plen,) = struct.unpack("<H", _read_exact(buf, 2, "path length"))
    path = _read_exact(buf, plen, "path").decode("utf-8")
    tag, ndim = struct.unpack("<BB", _read_exact(buf, 2, "dtype/ndim"))
    if tag not in _DTYPES:
        raise CheckpointError(f"unknown dtype tag {tag} at {path}")
    dims = [struct.unpack("<Q", _read_exact(buf, 8, "dim"))[0] for _ in range(ndim)]
    dt = _DTYPES[tag]
    n = int(np.prod(dims)) if dims else 1
    raw = _read_exact(buf, n * dt.itemsize, f"payload of {path}")
    arr = np.frombuffer(raw, dtype=dt).reshape(dims).copy()
    return path, arr


def _tensor_map(d):
    return {k: (v.data if isinstance(v, Tensor) else np.asarray(v))
            for k, v in d.items()}


def save_checkpoint(path, params, config_text, step, optimizer_state=None):
    """Write params (dict path -> Tensor/ndarray) plus config and step.

    optimizer_state, if given, is the AdamW ``state_dict()`` shape:
    {"step": int, "m": {...}, "v": {...}}.
    """
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    cfg = config_text.encode("utf-8")
    buf.write(struct.pack("<Q", len(cfg)))
    buf.write(cfg)
    tmap = _tensor_map(params)
    buf.write(struct.pack("<Q", len(tmap)))
    for name, arr in tmap.items():
        _write_tensor(buf, name, arr)
    if optimizer_state is None:
        buf.write(struct.pack("<B", 0))
    else:
        buf.write(struct.pack("<B", 1))
        buf.write(struct.pack("<Q", optimizer_state["step"]))
        for group in ("m", "v"):
            moments = _tensor_map(optimizer_state[group])
            buf.write(struct.pack("<Q", len(moments)))
            for name, arr in moments.items():
                _write_tensor(buf, name, arr)
    buf.write(struct.pack("<Q", step))
    with open(path, "wb") as f:
        f.write(buf.getvalue())


class CheckpointData:
    def __init__(self, config_text, params, step, optimizer_state):
        self.config_text = config_text
        self.params = params
        self.step = step
        self.optimizer_state = optimizer_state


def load_checkpoint(path):
    with open(path, "rb") as f:
        buf = io.BytesIO(f.read())
    if _read_exact(buf, 4, "magic") != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    (version,) = struct.unpack("<I", _read_exact(buf, 4, "version"))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (clen,) = struct.unpack("<Q", _read_exact(buf, 8, "config length"))
    config_text = _read_exact(buf, clen, "config").decode("utf-8")
    (n,) = struct.unpack("<Q", _read_exact(buf, 8, "parameter count"))
    params = {}
    for _ in range(n):
        k, v = _read_tensor(buf)
        if k in params:
            raise CheckpointError(f"duplicate parameter path {k}")
        params[k] = v
    (has_opt,) = struct.unpack("<B", _read_exact(buf, 1, "optimizer flag"))
    opt_state = None
    if has_opt:
        (ostep,) = struct.unpack("<Q", _read_exact(buf, 8, "optimizer step"))
        opt_state = {"step": int(ostep), "m": {}, "v": {}}
        for group in ("m", "v"):
            (nm,) = struct.unpack("<Q", _read_exact(buf, 8, f"{group} count"))
            for _ in range(nm):
                k, v = _read_tensor(buf)
                opt_state[group][k] = v
    (step,) = struct.unpack("<Q", _read_exact(buf, 8, "global step"))
    if buf.read(1):
        raise CheckpointError(f"{path}: trailing bytes after checkpoint payload")
    return CheckpointData(config_text, params, int(step), opt_state)
