"""Little-endian ``.qt`` tensor container.

Layout of one record::

    b"QTEN"  u8 version=1  u8 kind  u8 nbit  u8 scale_mode  u8 ndim
    u32 dims[ndim]
    f64 scales[1 or dims[-1]]      (code tensors only)
    payload, row-major              (int8 codes or float64 values)

``kind`` is 0 for quantized codes and 1 for float64; ``scale_mode`` is 0 for
one scalar step and 1 for one step per entry of the last dimension.

A linear plan is stored as three records (weight codes, equivalent bias,
post-scale) followed by a one-byte scale-sink trailer.  The weight record
carries the collapsed input step as its scalar scale.
"""

from __future__ import annotations

import io
import os
import struct

import numpy as np

from .exceptions import QTFormatError
from .linear import LinearPlan, ScaleSink
from .quant import QuantParams, QuantTensor

MAGIC = b"QTEN"
VERSION = 1
KIND_CODES = 0
KIND_FLOAT = 1
_HEADER = struct.Struct("<4sBBBBB")


def encode(tensor) -> bytes:
    out = io.BytesIO()
    if isinstance(tensor, QuantTensor):
        params = tensor.params
        if params.per_channel and tensor.axis != tensor.codes.ndim - 1:
            raise ValueError(".qt stores per-channel steps along the last dimension only")
        scales = np.atleast_1d(np.asarray(params.scale, dtype="<f8"))
        out.write(_HEADER.pack(MAGIC, VERSION, KIND_CODES, params.nbit, int(params.per_channel), 2))
        out.write(struct.pack("<2I", *tensor.shape))
        out.write(scales.tobytes())
        out.write(np.ascontiguousarray(tensor.codes, dtype=np.int8).tobytes())
    else:
        arr = np.ascontiguousarray(np.asarray(tensor, dtype="<f8"))
        if arr.ndim == 0:
            arr = arr.reshape(1)
        out.write(_HEADER.pack(MAGIC, VERSION, KIND_FLOAT, 0, 0, arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(arr.tobytes())
    return out.getvalue()


def _take(buf: bytes, offset: int, n: int, what: str) -> bytes:
    if offset + n > len(buf):
        raise QTFormatError(f"truncated {what}: need {n} bytes, {len(buf) - offset} left", offset)
    return buf[offset : offset + n]


def decode(buf: bytes, offset: int = 0):
    """Decode one record starting at ``offset``; returns ``(tensor, next_offset)``."""
    start = offset
    magic, version, kind, nbit, scale_mode, ndim = _HEADER.unpack(_take(buf, offset, _HEADER.size, "header"))
    if magic != MAGIC:
        raise QTFormatError(f"bad magic {magic!r}", start)
    if version != VERSION:
        raise QTFormatError(f"unsupported version {version}", start + 4)
    if kind not in (KIND_CODES, KIND_FLOAT):
        raise QTFormatError(f"unknown kind {kind}", start + 5)
    if scale_mode not in (0, 1):
        raise QTFormatError(f"unknown scale mode {scale_mode}", start + 7)
    if ndim == 0:
        raise QTFormatError("ndim must be >= 1", start + 8)
    offset += _HEADER.size
    dims = struct.unpack(f"<{ndim}I", _take(buf, offset, 4 * ndim, "dims"))
    offset += 4 * ndim
    count = int(np.prod(dims, dtype=np.int64))

    if kind == KIND_FLOAT:
        if nbit != 0 or scale_mode != 0:
            raise QTFormatError("float records must have nbit=0 and scale mode 0", start + 6)
        raw = _take(buf, offset, 8 * count, "float payload")
        values = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
        return values, offset + 8 * count

    if not 2 <= nbit <= 8:
        raise QTFormatError(f"nbit {nbit} outside 2..8", start + 6)
    if ndim != 2:
        raise QTFormatError(f"code tensors must be 2-D, got ndim={ndim}", start + 8)
    n_scales = dims[-1] if scale_mode == 1 else 1
    scale_off = offset
    scales = np.frombuffer(_take(buf, offset, 8 * n_scales, "scales"), dtype="<f8").astype(np.float64)
    offset += 8 * n_scales
    codes = np.frombuffer(_take(buf, offset, count, "code payload"), dtype=np.int8).reshape(dims)
    try:
        params = QuantParams(nbit, scales if scale_mode == 1 else float(scales[0]))
    except ValueError as exc:
        raise QTFormatError(str(exc), scale_off) from None
    try:
        tensor = QuantTensor(codes.copy(), params)
    except ValueError as exc:
        raise QTFormatError(str(exc), offset) from None
    return tensor, offset + count


def save(path: str | os.PathLike, tensor) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(tensor))


def load(path: str | os.PathLike):
    with open(path, "rb") as fh:
        buf = fh.read()
    tensor, end = decode(buf)
    if end != len(buf):
        raise QTFormatError(f"{len(buf) - end} trailing bytes after record", end)
    return tensor


def encode_plan(plan: LinearPlan) -> bytes:
    weights = QuantTensor(plan.weight_codes, QuantParams(plan.nbit, plan.input_scale))
    return (
        encode(weights)
        + encode(plan.equiv_bias)
        + encode(plan.post_scale)
        + bytes([int(plan.scale_sink)])
    )


def decode_plan(buf: bytes) -> LinearPlan:
    weights, off = decode(buf, 0)
    if not isinstance(weights, QuantTensor):
        raise QTFormatError("first plan record must hold weight codes", 0)
    bias_off = off
    bias, off = decode(buf, off)
    scale_off = off
    post, off = decode(buf, off)
    for arr, at in ((bias, bias_off), (post, scale_off)):
        if isinstance(arr, QuantTensor) or arr.shape != (weights.shape[0],):
            raise QTFormatError("bias/post-scale records must be float vectors of length O", at)
    if np.any(post <= 0):
        raise QTFormatError("post-scale entries must be > 0", scale_off)
    if off + 1 != len(buf):
        raise QTFormatError("expected exactly one scale-sink trailer byte", off)
    try:
        sink = ScaleSink(buf[off])
    except ValueError:
        raise QTFormatError(f"unknown scale sink {buf[off]}", off) from None
    dx_bar = float(weights.params.scale)
    return LinearPlan(
        weight_codes=weights.codes.copy(),
        equiv_bias=bias,
        post_scale=post,
        scale_sink=sink,
        input_scale=dx_bar,
        weight_scale=post / dx_bar,
        nbit=weights.params.nbit,
    )


def save_plan(path: str | os.PathLike, plan: LinearPlan) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_plan(plan))


def load_plan(path: str | os.PathLike) -> LinearPlan:
    with open(path, "rb") as fh:
        return decode_plan(fh.read())
