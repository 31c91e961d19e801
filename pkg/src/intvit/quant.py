"""Uniform signed quantizers realised as banks of comparators.

A value is mapped to ``qmin + #{k : x > s_k}`` where the references are
``s_k = (k - 1/2) * step`` for ``k = qmin+1 .. qmax``.  The comparison is a
strict ``>`` everywhere in this package, so a value sitting exactly on a
reference maps to the lower code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_float_matrix, check_scale

SUPPORTED_NBITS = range(2, 9)


@dataclass(frozen=True)
class QuantParams:
    """Bit width and step size(s) of a signed uniform quantizer."""

    nbit: int = 3
    scale: float | np.ndarray = 1.0
    signed: bool = True

    def __post_init__(self):
        if int(self.nbit) not in SUPPORTED_NBITS:
            raise ValueError(f"nbit must be in 2..8, got {self.nbit}")
        if not self.signed:
            raise ValueError("only signed quantizers are supported")
        object.__setattr__(self, "nbit", int(self.nbit))
        object.__setattr__(self, "scale", check_scale(self.scale))

    @property
    def qmin(self) -> int:
        return -(2 ** (self.nbit - 1))

    @property
    def qmax(self) -> int:
        return 2 ** (self.nbit - 1) - 1

    @property
    def per_channel(self) -> bool:
        return isinstance(self.scale, np.ndarray)

    def with_scale(self, scale) -> "QuantParams":
        return QuantParams(self.nbit, scale, self.signed)

    def __eq__(self, other):
        if not isinstance(other, QuantParams):
            return NotImplemented
        return (
            self.nbit == other.nbit
            and self.signed == other.signed
            and self.per_channel == other.per_channel
            and np.array_equal(self.scale, other.scale)
        )

    def __hash__(self):
        return hash((self.nbit, self.signed, np.asarray(self.scale).tobytes()))


@dataclass(frozen=True, eq=False)
class QuantTensor:
    """2-D matrix of integer codes (row = token, column = channel) with its quantizer.

    A per-channel scale runs along ``axis``: columns by default, rows (``axis=0``)
    for output-by-input weight matrices.
    """

    codes: np.ndarray
    params: QuantParams = field(default_factory=QuantParams)
    axis: int = 1

    def __post_init__(self):
        codes = np.asarray(self.codes)
        if codes.ndim != 2:
            raise ValueError(f"codes must be 2-D, got shape {codes.shape}")
        if codes.size and not np.issubdtype(codes.dtype, np.integer):
            if not np.array_equal(codes, np.round(codes)):
                raise ValueError("codes must be integers")
        if codes.size and (codes.min() < self.params.qmin or codes.max() > self.params.qmax):
            raise ValueError(
                f"codes outside [{self.params.qmin}, {self.params.qmax}] for nbit={self.params.nbit}"
            )
        if self.axis not in (0, 1):
            raise ValueError("axis must be 0 or 1")
        if self.params.per_channel and self.params.scale.shape[0] != codes.shape[self.axis]:
            raise ValueError(
                f"per-channel scale has {self.params.scale.shape[0]} entries "
                f"but codes have {codes.shape[self.axis]} {'columns' if self.axis else 'rows'}"
            )
        codes = codes.astype(np.int8)
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)

    @property
    def shape(self) -> tuple[int, int]:
        return self.codes.shape

    def __eq__(self, other):
        if not isinstance(other, QuantTensor):
            return NotImplemented
        return (
            self.params == other.params
            and self.axis == other.axis
            and np.array_equal(self.codes, other.codes)
        )

    __hash__ = None


def _unit_refs(nbit: int) -> np.ndarray:
    k = np.arange(-(2 ** (nbit - 1)) + 1, 2 ** (nbit - 1), dtype=np.float64)
    return k - 0.5


def boundary_refs(params: QuantParams) -> list[float]:
    """Comparator thresholds ``(k - 1/2) * step`` in increasing order.

    >>> boundary_refs(QuantParams(nbit=2, scale=0.5))
    [-0.75, -0.25, 0.25]
    """
    if params.per_channel:
        raise ValueError("scalar scale required")
    return list(_unit_refs(params.nbit) * params.scale)


def channel_refs(params: QuantParams, n_channels: int) -> np.ndarray:
    """Reference table of shape ``(n_channels, 2**nbit - 1)``."""
    unit = _unit_refs(params.nbit)
    if params.per_channel:
        if params.scale.shape[0] != n_channels:
            raise ValueError(
                f"dimension mismatch: {params.scale.shape[0]} scales for {n_channels} channels"
            )
        return unit[None, :] * params.scale[:, None]
    return np.broadcast_to(unit * params.scale, (n_channels, unit.size))


def comparator_quantize(x: float, refs, qmin: int) -> int:
    """Code of a single value: ``qmin`` plus the number of references strictly below it."""
    return qmin + sum(1 for s in refs if x > s)


def count_above(values: np.ndarray, refs: np.ndarray) -> np.ndarray:
    """Number of references each value strictly exceeds.

    ``refs`` broadcasts against ``values[..., None]``; the last axis of
    ``refs`` enumerates the thresholds.
    """
    return np.count_nonzero(values[..., None] > refs, axis=-1)


def quantize(x, params: QuantParams) -> QuantTensor:
    x = check_float_matrix(x)
    refs = channel_refs(params, x.shape[1])
    codes = params.qmin + count_above(x, refs[None, :, :])
    return QuantTensor(codes, params)


def quantize_absorbed(values, combined_scale, params: QuantParams) -> np.ndarray:
    """Quantize ``values * combined_scale`` without multiplying the data.

    The pending scale is folded into the references instead
    (``values > s_k / combined_scale``), which is how a quantizer absorbs the
    dequantization of the operands feeding it.  ``combined_scale`` is a
    scalar or one positive entry per column.
    """
    values = np.asarray(values, dtype=np.float64)
    if params.per_channel:
        raise ValueError("scalar scale required")
    combined = check_scale(combined_scale, name="combined_scale")
    refs = np.asarray(boundary_refs(params))
    if isinstance(combined, np.ndarray):
        if combined.shape[0] != values.shape[-1]:
            raise ValueError("dimension mismatch between combined scale and columns")
        table = refs[None, :] / combined[:, None]
    else:
        table = refs / combined
    return (params.qmin + count_above(values, table)).astype(np.int8)


def dequantize(q: QuantTensor) -> np.ndarray:
    scale = q.params.scale
    if q.params.per_channel:
        if q.axis == 0:
            return q.codes.astype(np.float64) * scale[:, None]
        return q.codes.astype(np.float64) * scale[None, :]
    return q.codes.astype(np.float64) * scale


def mean_scale(scales, method: str = "arithmetic") -> float:
    """Collapse per-channel step sizes into one shared step.

    ``method`` is ``"arithmetic"`` (default) or ``"geometric"``.
    """
    arr = np.asarray(scales, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError("cannot collapse an empty scale vector")
    if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise ValueError("scales must be finite and > 0")
    if method == "arithmetic":
        return float(arr.sum() / arr.size)
    if method == "geometric":
        return float(np.exp(np.log(arr).mean()))
    raise ValueError(f"unknown aggregation method {method!r}")
