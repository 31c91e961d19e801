"""Integerized linear layer built by moving the dequantization scales past the matmul.

With a single input step ``dx`` shared by all input channels, the layer

    Y = [Xq dx] [Wq diag(dW)]^T + b

rearranges to

    Y = (Xq Wq^T + b / (dx dW)) * (dx dW)

so the matmul runs on integer codes and the scales become a per-output
post-scale.  When the successor is a LayerNorm the common factor ``dx``
cancels and only ``dW`` has to be applied.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ._validation import check_inner_dims, check_scale, check_vector, int_matmul
from .quant import QuantParams, QuantTensor, mean_scale, quantize_absorbed
from .reference import ref_linear


class ScaleSink(enum.IntEnum):
    """Which successor absorbs the post-scale."""

    LAYERNORM = 0
    QUANTIZER = 1


@dataclass(frozen=True, eq=False)
class LinearPlan:
    weight_codes: np.ndarray
    equiv_bias: np.ndarray
    post_scale: np.ndarray
    scale_sink: ScaleSink
    input_scale: float
    weight_scale: np.ndarray
    nbit: int = 3

    @property
    def n_out(self) -> int:
        return self.weight_codes.shape[0]

    @property
    def n_in(self) -> int:
        return self.weight_codes.shape[1]


@dataclass(frozen=True, eq=False)
class IntAccumTensor:
    """Raw int32 MAC results plus the scale/bias still waiting to be applied."""

    values: np.ndarray
    post_scale: np.ndarray | float = 1.0
    equiv_bias: np.ndarray | float = 0.0


def build_plan(
    Wq: QuantTensor,
    b,
    delta_x,
    sink: ScaleSink = ScaleSink.QUANTIZER,
    aggregate: str = "arithmetic",
) -> LinearPlan:
    """Precompute the integerized form of a linear layer.

    ``Wq`` is output-by-input with one step per output channel; ``delta_x``
    holds one step per input channel and is collapsed with
    :func:`~intvit.quant.mean_scale`.
    """
    n_out, n_in = Wq.shape
    dw = check_scale(Wq.params.scale, name="weight scale")
    dw = check_vector(dw, n_out, name="weight scale")
    dx = check_scale(delta_x, name="delta_x")
    dx = check_vector(dx, n_in, name="delta_x")
    b = check_vector(b, n_out, name="b")
    dx_bar = mean_scale(dx, aggregate)
    post = dx_bar * dw
    return LinearPlan(
        weight_codes=Wq.codes.copy(),
        equiv_bias=b / post,
        post_scale=post,
        scale_sink=ScaleSink(sink),
        input_scale=dx_bar,
        weight_scale=dw.copy(),
        nbit=Wq.params.nbit,
    )


def int_linear(Xq: QuantTensor, plan: LinearPlan) -> IntAccumTensor:
    check_inner_dims(Xq.shape[1], plan.n_in, "int_linear")
    values = int_matmul(Xq.codes, plan.weight_codes)
    return IntAccumTensor(values, plan.post_scale, plan.equiv_bias)


def apply_post_scale(acc: IntAccumTensor) -> np.ndarray:
    return (acc.values + acc.equiv_bias) * acc.post_scale


def biased(acc: IntAccumTensor) -> np.ndarray:
    """Accumulator with the equivalent bias added, scale still pending."""
    return acc.values + np.asarray(acc.equiv_bias, dtype=np.float64)


def layernorm_input(acc: IntAccumTensor, plan: LinearPlan) -> np.ndarray:
    """What a LayerNorm successor receives: only the per-channel weight steps are applied."""
    return biased(acc) * plan.weight_scale


def quantizer_output(acc: IntAccumTensor, params: QuantParams) -> np.ndarray:
    """Codes of a quantizer successor that absorbs the whole post-scale."""
    return quantize_absorbed(biased(acc), acc.post_scale, params)


@dataclass(frozen=True)
class EquivalenceGap:
    mean_scale_gap: float
    true_scale_gap: float


def equivalence_gap(Xq: QuantTensor, Wq: QuantTensor, delta_x, delta_w, b) -> EquivalenceGap:
    """Max absolute difference between the integer path and two float oracles.

    ``mean_scale_gap`` compares against the dequantize-first layer evaluated
    with every input step replaced by their mean (pure reassociation, so it
    should be rounding noise).  ``true_scale_gap`` uses the real per-channel
    input steps and measures the approximation itself.
    """
    Wq = QuantTensor(Wq.codes, Wq.params.with_scale(delta_w), axis=0)
    plan = build_plan(Wq, b, delta_x)
    y_int = apply_post_scale(int_linear(Xq, plan))
    n_in = Xq.shape[1]
    y_mean = ref_linear(Xq, Wq, np.full(n_in, plan.input_scale), delta_w, b)
    y_true = ref_linear(Xq, Wq, delta_x, delta_w, b)
    if y_int.size == 0:
        return EquivalenceGap(0.0, 0.0)
    return EquivalenceGap(
        mean_scale_gap=float(np.max(np.abs(y_int - y_mean))),
        true_scale_gap=float(np.max(np.abs(y_int - y_true))),
    )
