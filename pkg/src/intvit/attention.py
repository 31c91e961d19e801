"""Integer-only attention core for one head.

``QK^T`` and ``PV`` run on integer codes.  The softmax numerators come from
a base-2 shift approximation of ``exp`` and the softmax division is folded
into the attention quantizer: a numerator is compared against
``s_k * row_sum`` instead of dividing it by ``row_sum`` first.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_inner_dims, check_scale, int_matmul
from .exceptions import ExpUnderflowError
from .linear import IntAccumTensor
from .quant import QuantParams, QuantTensor, boundary_refs, count_above, quantize_absorbed

LOG2E = 1.0 / math.log(2.0)


class ExpMode(str, enum.Enum):
    EXACT = "exact"
    SHIFT = "shift"
    SHIFT_FIXED = "shift_fixed"

    @classmethod
    def _missing_(cls, value):
        if value == "shift_approx":
            return cls.SHIFT
        return None


@dataclass(frozen=True)
class AttentionConfig:
    """Geometry, step sizes and exponential mode of one attention head.

    ``delta_out`` is the step of the quantizer after ``PV``; it defaults to
    ``delta_v``.  ``frac_bits`` only matters for ``ExpMode.SHIFT_FIXED``.
    """

    n_tokens: int
    head_dim: int
    delta_q: float
    delta_k: float
    delta_v: float
    delta_attn: float
    nbit: int = 3
    exp_mode: ExpMode = ExpMode.SHIFT
    max_subtract: bool = False
    delta_out: float | None = None
    softmax_scale: float | None = None
    frac_bits: int = 8

    def __post_init__(self):
        if self.n_tokens < 1 or self.head_dim < 1:
            raise ValueError("n_tokens and head_dim must be >= 1")
        for name in ("delta_q", "delta_k", "delta_v", "delta_attn"):
            check_scale(getattr(self, name), name=name)
            if not np.isscalar(getattr(self, name)):
                raise ValueError(f"{name} must be a scalar step")
        object.__setattr__(self, "exp_mode", ExpMode(self.exp_mode))
        if self.delta_out is None:
            object.__setattr__(self, "delta_out", float(self.delta_v))
        check_scale(self.delta_out, name="delta_out")
        if self.softmax_scale is None:
            object.__setattr__(self, "softmax_scale", 1.0 / math.sqrt(self.head_dim))
        if self.frac_bits < 0:
            raise ValueError("frac_bits must be >= 0")

    @property
    def s(self) -> float:
        return self.softmax_scale

    @property
    def logit_scale(self) -> float:
        """Factor turning a ``QK^T`` accumulator into a softmax logit."""
        return self.softmax_scale * self.delta_q * self.delta_k

    def params(self, which: str) -> QuantParams:
        return QuantParams(self.nbit, getattr(self, f"delta_{which}"))


@dataclass(frozen=True, eq=False)
class ExpRow:
    numerators: np.ndarray
    row_sum: float

    def __post_init__(self):
        nums = np.asarray(self.numerators, dtype=np.float64)
        if np.any(nums < 0):
            raise ValueError("numerators must be non-negative")
        object.__setattr__(self, "numerators", nums)

    @classmethod
    def from_numerators(cls, numerators) -> "ExpRow":
        nums = np.asarray(numerators, dtype=np.float64)
        return cls(nums, float(row_sums(nums[None, :])[0]))


def qk_int_matmul(Qq: QuantTensor, Kq: QuantTensor, s: float | None = None) -> IntAccumTensor:
    """Integer ``Q K^T``; the pending scale ``s * dQ * dK`` rides along as metadata."""
    check_inner_dims(Qq.shape[1], Kq.shape[1], "qk_int_matmul")
    if s is None:
        s = 1.0 / math.sqrt(Qq.shape[1])
    values = int_matmul(Qq.codes, Kq.codes)
    return IntAccumTensor(values, post_scale=s * Qq.params.scale * Kq.params.scale)


def shift_exp2(t):
    """``2**t`` approximated as ``(1 + r) << floor(t)`` with ``r = t - floor(t)``.

    The power of two is applied with ``ldexp`` so it is an exact binary scaling.
    """
    t = np.asarray(t, dtype=np.float64)
    m = np.floor(t)
    r = t - m
    m = np.clip(m, -4096, 4096).astype(np.int32)
    return np.ldexp(1.0 + r, m)


def exp_shift(acc, combined_scale: float, mode: ExpMode | str = ExpMode.SHIFT, frac_bits: int = 8):
    """Approximate ``exp(combined_scale * acc)``.

    Works elementwise on scalars or arrays.  ``shift_fixed`` truncates the
    base-2 exponent to ``frac_bits`` fractional bits before the shift.
    """
    mode = ExpMode(mode)
    acc = np.asarray(acc)
    if mode is ExpMode.EXACT:
        out = np.exp(combined_scale * acc.astype(np.float64))
    else:
        t = (combined_scale * LOG2E) * acc.astype(np.float64)
        if mode is ExpMode.SHIFT_FIXED:
            t = np.floor(np.ldexp(t, frac_bits)) / 2.0**frac_bits
        out = shift_exp2(t)
    return float(out) if out.ndim == 0 else out


def row_sums(exps: np.ndarray) -> np.ndarray:
    """Left-to-right sequential sum of each row, the order a systolic adder chain uses."""
    if exps.shape[1] == 0:
        return np.zeros(exps.shape[0])
    return np.add.accumulate(exps, axis=1)[:, -1]


def attention_exps(acc: IntAccumTensor, cfg: AttentionConfig) -> np.ndarray:
    values = acc.values.astype(np.int64)
    if cfg.max_subtract:
        values = values - values.max(axis=1, keepdims=True)
    return exp_shift(values, cfg.logit_scale, cfg.exp_mode, cfg.frac_bits)


def softmax_quantize(exps: np.ndarray, sums: np.ndarray, delta_attn: float, nbit: int) -> np.ndarray:
    """Row-batched division-free softmax quantizer: ``exp > s_k * row_sum``."""
    if np.any(sums <= 0):
        raise ExpUnderflowError("an attention row has no non-zero exponential")
    params = QuantParams(nbit, delta_attn)
    refs = np.asarray(boundary_refs(params))
    table = refs[None, :] * sums[:, None]
    return (params.qmin + count_above(exps, table[:, None, :])).astype(np.int8)


def softmax_quantize_row(exps: ExpRow, delta_attn: float, nbit: int) -> np.ndarray:
    return softmax_quantize(exps.numerators[None, :], np.array([exps.row_sum]), delta_attn, nbit)[0]


def pv_int_matmul(attn: QuantTensor, Vq: QuantTensor) -> IntAccumTensor:
    """Integer ``P V``; the step ``dATTN * dV`` is left for the next quantizer to absorb."""
    check_inner_dims(attn.shape[1], Vq.shape[0], "pv_int_matmul")
    values = int_matmul(attn.codes, Vq.codes.T)
    return IntAccumTensor(values, post_scale=attn.params.scale * Vq.params.scale)


def attention_probs_codes(Qq: QuantTensor, Kq: QuantTensor, cfg: AttentionConfig) -> QuantTensor:
    acc = qk_int_matmul(Qq, Kq, cfg.s)
    exps = attention_exps(acc, cfg)
    codes = softmax_quantize(exps, row_sums(exps), cfg.delta_attn, cfg.nbit)
    return QuantTensor(codes, cfg.params("attn"))


def output_quantize(acc: IntAccumTensor, cfg: AttentionConfig) -> QuantTensor:
    params = cfg.params("out")
    return QuantTensor(quantize_absorbed(acc.values, acc.post_scale, params), params)


def attention_head_forward(Qq: QuantTensor, Kq: QuantTensor, Vq: QuantTensor, cfg: AttentionConfig) -> QuantTensor:
    """Low-bit head output from low-bit ``Q``, ``K``, ``V`` codes."""
    check_inner_dims(Kq.shape[0], Vq.shape[0], "attention_head_forward")
    _check_steps(cfg, q=Qq, k=Kq, v=Vq)
    attn = attention_probs_codes(Qq, Kq, cfg)
    return output_quantize(pv_int_matmul(attn, Vq), cfg)


def _check_steps(cfg: AttentionConfig, **tensors: QuantTensor) -> None:
    for which, t in tensors.items():
        if t.params != cfg.params(which):
            raise ValueError(f"{which.upper()} codes carry {t.params}, config expects {cfg.params(which)}")


def attention_weights(Qq: QuantTensor, Kq: QuantTensor, cfg: AttentionConfig) -> np.ndarray:
    """Unquantized softmax weights ``exp / row_sum`` of the kernel path, for error studies."""
    exps = attention_exps(qk_int_matmul(Qq, Kq, cfg.s), cfg)
    return exps / row_sums(exps)[:, None]
