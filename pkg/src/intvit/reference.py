"""Double-precision oracle of the dequantize-first attention path.

Every operand is dequantized before it reaches a matmul, exactly as in a
quantized-but-not-integerized model.  The integer kernels are checked
against these functions.  Quantizers here use the same strict ``>``
comparator convention as :mod:`intvit.quant`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_float_matrix, check_inner_dims, check_vector
from .quant import QuantParams, QuantTensor, boundary_refs, count_above, dequantize, quantize

TIE_ZONE = 1e-9


def ref_linear(Xq: QuantTensor, Wq: QuantTensor, delta_x, delta_w, b) -> np.ndarray:
    """``[Xq diag(dX)] [Wq diag(dW)]^T + b`` with ``Wq`` laid out output-by-input."""
    n_in = Xq.shape[1]
    n_out = Wq.shape[0]
    check_inner_dims(n_in, Wq.shape[1], "ref_linear")
    dx = check_vector(delta_x, n_in, name="delta_x")
    dw = check_vector(delta_w, n_out, name="delta_w")
    b = check_vector(b, n_out, name="b")
    x = Xq.codes.astype(np.float64) * dx[None, :]
    w = Wq.codes.astype(np.float64) * dw[:, None]
    return x @ w.T + b[None, :]


def ref_normalize(Y, gamma, beta) -> np.ndarray:
    """Direct LayerNorm ``(x - mean) / std * gamma + beta`` with population variance.

    Rows with zero variance come out as ``beta``.
    """
    Y = check_float_matrix(Y, name="Y")
    gamma = check_vector(gamma, Y.shape[1], name="gamma")
    beta = check_vector(beta, Y.shape[1], name="beta")
    mu = Y.mean(axis=1, keepdims=True)
    var = ((Y - mu) ** 2).mean(axis=1, keepdims=True)
    # a constant row can get a rounded mean and hence a tiny spurious variance
    flat = (var[:, 0] == 0) | np.all(Y == Y[:, :1], axis=1)
    sigma = np.sqrt(np.where(flat[:, None], 1.0, var))
    z = (Y - mu) / sigma * gamma[None, :] + beta[None, :]
    z[flat] = beta
    return z


def ref_layernorm_quantize(Y, gamma, beta, out_params: QuantParams) -> QuantTensor:
    return quantize(ref_normalize(Y, gamma, beta), out_params)


def ref_softmax(logits) -> np.ndarray:
    logits = check_float_matrix(logits, name="logits")
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def ref_attention_weights(Q, K, s: float) -> np.ndarray:
    Q = check_float_matrix(Q, name="Q")
    K = check_float_matrix(K, name="K")
    check_inner_dims(Q.shape[1], K.shape[1], "ref_attention")
    return ref_softmax(s * (Q @ K.T))


def ref_attention(Q, K, V, s: float) -> np.ndarray:
    """``softmax(s Q K^T) V`` in double precision."""
    V = check_float_matrix(V, name="V")
    weights = ref_attention_weights(Q, K, s)
    check_inner_dims(weights.shape[1], V.shape[0], "ref_attention")
    return weights @ V


def near_tie(values: np.ndarray, params: QuantParams, zone: float = TIE_ZONE) -> np.ndarray:
    """Mask of values lying within ``zone`` of any comparator reference."""
    refs = np.asarray(boundary_refs(params))
    return np.any(np.abs(values[..., None] - refs) < zone, axis=-1)


@dataclass(frozen=True)
class RefAttentionParams:
    """Everything the float path needs for one head.

    Weights are output-by-input code matrices with per-output-channel steps.
    ``delta_out`` is the step of the quantizer after the ``PV`` product.
    """

    Wq: QuantTensor
    Wk: QuantTensor
    Wv: QuantTensor
    b_q: np.ndarray
    b_k: np.ndarray
    b_v: np.ndarray
    gamma_q: np.ndarray
    beta_q: np.ndarray
    gamma_k: np.ndarray
    beta_k: np.ndarray
    q_params: QuantParams
    k_params: QuantParams
    v_params: QuantParams
    attn_params: QuantParams
    out_params: QuantParams
    s: float

    def __post_init__(self):
        n_out, n_in = self.Wq.shape
        for w in (self.Wk, self.Wv):
            if w.shape != (n_out, n_in):
                raise ValueError("Q/K/V weight shapes differ")
        for g in (self.gamma_q, self.gamma_k):
            if np.any(np.asarray(g) == 0):
                raise ValueError("gamma entries must be nonzero")


@dataclass(frozen=True)
class RefHeadResult:
    out_codes: np.ndarray
    excluded: np.ndarray
    q_codes: np.ndarray
    k_codes: np.ndarray
    v_codes: np.ndarray
    attn_codes: np.ndarray
    attn_weights: np.ndarray


def ref_head(Xq: QuantTensor, delta_x, p: RefAttentionParams) -> RefHeadResult:
    """Run one head along the dequantize-first path.

    ``excluded`` marks output elements whose value depends on an upstream
    quantity within :data:`TIE_ZONE` of a comparator reference; two
    implementations may legitimately disagree there.
    """
    wscale = lambda w: w.params.scale  # noqa: E731
    yq = ref_linear(Xq, p.Wq, delta_x, wscale(p.Wq), p.b_q)
    yk = ref_linear(Xq, p.Wk, delta_x, wscale(p.Wk), p.b_k)
    yv = ref_linear(Xq, p.Wv, delta_x, wscale(p.Wv), p.b_v)

    zq = ref_normalize(yq, p.gamma_q, p.beta_q)
    zk = ref_normalize(yk, p.gamma_k, p.beta_k)
    q = quantize(zq, p.q_params)
    k = quantize(zk, p.k_params)
    v = quantize(yv, p.v_params)

    weights = ref_attention_weights(dequantize(q), dequantize(k), p.s)
    attn = quantize(weights, p.attn_params)
    out_val = dequantize(attn) @ dequantize(v)
    out = quantize(out_val, p.out_params)

    excluded = near_tie(out_val, p.out_params)
    rows = near_tie(zq, p.q_params).any(axis=1) | near_tie(weights, p.attn_params).any(axis=1)
    cols = near_tie(yv, p.v_params).any(axis=0)
    excluded |= rows[:, None] | cols[None, :]
    if near_tie(zk, p.k_params).any():
        excluded[:] = True
    return RefHeadResult(
        out_codes=out.codes,
        excluded=excluded,
        q_codes=q.codes,
        k_codes=k.codes,
        v_codes=v.codes,
        attn_codes=attn.codes,
        attn_weights=weights,
    )
