"""scikit-learn compatible wrappers around the integer kernels.

These let the quantizer, the integerized linear layer, the LayerNorm
quantizer and a whole attention head sit inside a
:class:`sklearn.pipeline.Pipeline`.  Step sizes and weights are
constructor parameters; ``fit`` only validates them against the input
width and precomputes the integer plan.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .attention import AttentionConfig
from .head import HeadWeights, compile_head, head_forward
from .layernorm import LNQuantSpec, ln_quantize
from .linear import ScaleSink, apply_post_scale, build_plan, int_linear
from .quant import QuantParams, QuantTensor, dequantize, quantize
from .reference import ref_normalize


def _check_codes(X, params: QuantParams) -> QuantTensor:
    X = check_array(X, dtype=None)
    if not np.issubdtype(X.dtype, np.integer):
        if not np.array_equal(X, np.round(X)):
            raise ValueError("expected integer codes")
    return QuantTensor(X.astype(np.int64), params)


def _check_width(est, X) -> None:
    if X.shape[1] != est.n_features_in_:
        raise ValueError(
            f"X has {X.shape[1]} features, but {type(est).__name__} is expecting {est.n_features_in_} features as input"
        )


def _broadcast(value, n: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"{name} has shape {arr.shape}, expected ({n},)")
    return arr


class UniformQuantizer(TransformerMixin, BaseEstimator):
    """Float matrix -> int8 codes with a scalar or per-column step.

    ``inverse_transform`` dequantizes.
    """

    def __init__(self, nbit=3, scale=1.0):
        self.nbit = nbit
        self.scale = scale

    def fit(self, X, y=None):
        X = check_array(X)
        scale = np.asarray(self.scale, dtype=np.float64)
        if scale.ndim == 1 and scale.shape[0] != X.shape[1]:
            raise ValueError(f"scale has {scale.shape[0]} entries for {X.shape[1]} columns")
        self.params_ = QuantParams(self.nbit, self.scale)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X)
        _check_width(self, X)
        return quantize(X, self.params_).codes

    def inverse_transform(self, X):
        check_is_fitted(self, "params_")
        return dequantize(_check_codes(X, self.params_))


class IntegerLinear(TransformerMixin, BaseEstimator):
    """Linear layer on integer codes with delayed dequantization.

    Parameters
    ----------
    weight_codes : array of shape (n_out, n_in)
    weight_scale : float or array of shape (n_out,)
        Step of each output channel's weights.
    bias : float or array of shape (n_out,)
    input_scale : float or array of shape (n_in,)
        Per-input-channel steps of the codes fed to ``transform``; collapsed
        to one shared step with ``aggregate``.
    """

    def __init__(
        self,
        weight_codes=None,
        weight_scale=1.0,
        bias=0.0,
        input_scale=1.0,
        nbit=3,
        sink="quantizer",
        aggregate="arithmetic",
    ):
        self.weight_codes = weight_codes
        self.weight_scale = weight_scale
        self.bias = bias
        self.input_scale = input_scale
        self.nbit = nbit
        self.sink = sink
        self.aggregate = aggregate

    def fit(self, X=None, y=None):
        if self.weight_codes is None:
            raise ValueError("weight_codes must be provided")
        codes = check_array(self.weight_codes, dtype=None)
        n_out, n_in = codes.shape
        if X is not None:
            X = check_array(X, dtype=None)
            if X.shape[1] != n_in:
                raise ValueError(f"X has {X.shape[1]} features, weights expect {n_in}")
        w = QuantTensor(codes, QuantParams(self.nbit, _broadcast(self.weight_scale, n_out, "weight_scale")), axis=0)
        sink = ScaleSink[self.sink.upper()] if isinstance(self.sink, str) else ScaleSink(self.sink)
        self.plan_ = build_plan(
            w,
            _broadcast(self.bias, n_out, "bias"),
            _broadcast(self.input_scale, n_in, "input_scale"),
            sink,
            self.aggregate,
        )
        self.n_features_in_ = n_in
        return self

    def transform_int(self, X):
        """Raw int32 accumulator, bias and scale still pending."""
        check_is_fitted(self, "plan_")
        Xq = _check_codes(X, QuantParams(self.nbit, 1.0))
        _check_width(self, Xq.codes)
        return int_linear(Xq, self.plan_)

    def transform(self, X):
        return apply_post_scale(self.transform_int(X))


class LayerNormQuantizer(TransformerMixin, BaseEstimator):
    """Row-wise LayerNorm followed by a quantizer, emitting int8 codes.

    ``method="division_free"`` uses the Welford + squared-comparator path;
    ``method="direct"`` normalizes explicitly (the float oracle).
    """

    def __init__(self, gamma=1.0, beta=0.0, scale=1.0, nbit=3, method="division_free"):
        self.gamma = gamma
        self.beta = beta
        self.scale = scale
        self.nbit = nbit
        self.method = method

    def fit(self, X, y=None):
        X = check_array(X)
        if self.method not in ("division_free", "direct"):
            raise ValueError(f"unknown method {self.method!r}")
        n = X.shape[1]
        self.spec_ = LNQuantSpec(
            _broadcast(self.gamma, n, "gamma"),
            _broadcast(self.beta, n, "beta"),
            QuantParams(self.nbit, self.scale),
        )
        self.n_features_in_ = n
        return self

    def transform(self, X):
        check_is_fitted(self, "spec_")
        X = check_array(X)
        _check_width(self, X)
        if self.method == "direct":
            return quantize(ref_normalize(X, self.spec_.gamma, self.spec_.beta), self.spec_.out_params).codes
        return ln_quantize(X, self.spec_)


class IntegerAttentionHead(TransformerMixin, BaseEstimator):
    """Input codes (tokens x channels) -> low-bit output codes of one attention head.

    With ``simulate=True`` the systolic model runs instead of the kernels
    and the per-block report is kept in ``report_``.
    """

    def __init__(self, weights: HeadWeights | None = None, config: AttentionConfig | None = None,
                 input_scale=1.0, simulate=False):
        self.weights = weights
        self.config = config
        self.input_scale = input_scale
        self.simulate = simulate

    def fit(self, X=None, y=None):
        if self.weights is None or self.config is None:
            raise ValueError("weights and config must be provided")
        n_in = self.weights.d_in
        self.head_ = compile_head(self.weights, _broadcast(self.input_scale, n_in, "input_scale"), self.config)
        self.n_features_in_ = n_in
        return self

    def transform(self, X):
        check_is_fitted(self, "head_")
        Xq = _check_codes(X, QuantParams(self.config.nbit, 1.0))
        _check_width(self, Xq.codes)
        if Xq.shape[0] != self.config.n_tokens:
            raise ValueError(f"expected {self.config.n_tokens} tokens, got {Xq.shape[0]}")
        if self.simulate:
            from .systolic import simulate_head

            trace, self.report_ = simulate_head(Xq, self.head_)
            return trace.out.codes
        return head_forward(Xq, self.head_).codes
