"""Binary checkpoint format (little-endian).

    magic       8 bytes   b"TREEMIL\\0"
    version     u8        1
    meta_len    u32       length of the JSON metadata block
    meta        bytes     UTF-8 JSON: config, D, epoch, adam scalars, rng state
    count       u32       number of tensors
    per tensor:
      name_len  u16
      name      bytes     UTF-8; "param/<p>", "adam_m/<p>" or "adam_v/<p>"
      ndim      u8
      dims      ndim x u32
      data      prod(dims) x f64, row-major
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from . import autodiff as ad
from .config import RunConfig
from .model import TreeMIL
from .train import Trainer

MAGIC = b"TREEMIL\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_tensor(buf, name, arr):
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<B", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(arr.tobytes())


def dumps(trainer: Trainer):
    model, state = trainer.model, trainer.state
    meta = {
        "config": model.cfg.to_dict(),
        "D": model.D,
        "epoch": trainer.epoch,
        "adam": {"step": state.step, "lr": state.lr, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps},
        "rng": trainer.rng.bit_generator.state,
    }
    tensors = [(f"param/{k}", p.data) for k, p in model.params.items()]
    for k in model.params:
        if k in state.first_moment:
            tensors.append((f"adam_m/{k}", state.first_moment[k]))
            tensors.append((f"adam_v/{k}", state.second_moment[k]))
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<B", VERSION))
    raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        _write_tensor(buf, name, arr)
    return buf.getvalue()


def _read(fmt, buf):
    size = struct.calcsize(fmt)
    chunk = buf.read(size)
    if len(chunk) != size:
        raise CheckpointError("truncated checkpoint")
    return struct.unpack(fmt, chunk)


def loads(blob):
    """Rebuild a :class:`Trainer` (model, Adam state, RNG, epoch) from bytes."""
    buf = io.BytesIO(blob)
    if buf.read(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a TreeMIL checkpoint (bad magic)")
    (version,) = _read("<B", buf)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (meta_len,) = _read("<I", buf)
    raw = buf.read(meta_len)
    if len(raw) != meta_len:
        raise CheckpointError("truncated checkpoint metadata")
    try:
        meta = json.loads(raw.decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"corrupt checkpoint metadata: {exc}") from None
    (count,) = _read("<I", buf)
    tensors = {}
    for _ in range(count):
        (name_len,) = _read("<H", buf)
        name = buf.read(name_len).decode("utf-8", errors="replace")
        (ndim,) = _read("<B", buf)
        shape = _read(f"<{ndim}I", buf) if ndim else ()
        n = int(np.prod(shape)) if shape else 1
        data = buf.read(8 * n)
        if len(data) != 8 * n:
            raise CheckpointError(f"truncated tensor {name!r}")
        tensors[name] = np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)

    cfg = RunConfig(**meta["config"])
    params = {k[len("param/") :]: ad.Tensor(v, requires_grad=True) for k, v in tensors.items() if k.startswith("param/")}
    model = TreeMIL(meta["D"], cfg, params=params)
    a = meta["adam"]
    state = ad.AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], step=a["step"])
    for k in params:
        if f"adam_m/{k}" in tensors:
            state.first_moment[k] = tensors[f"adam_m/{k}"]
            state.second_moment[k] = tensors[f"adam_v/{k}"]
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng"]
    return Trainer(model, rng=rng, state=state, epoch=meta["epoch"])


def save(path, trainer):
    with open(path, "wb") as fh:
        fh.write(dumps(trainer))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
