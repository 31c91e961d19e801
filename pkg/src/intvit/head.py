"""One integerized self-attention head, end to end.

Q and K go through an integer linear layer, LayerNorm and a quantizer; V
goes through an integer linear layer straight into its quantizer; the
three code matrices then feed :func:`~intvit.attention.attention_head_forward`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attention import AttentionConfig, ExpMode, attention_head_forward, attention_probs_codes
from .layernorm import LNQuantSpec, ln_quantize
from .linear import LinearPlan, ScaleSink, build_plan, int_linear, layernorm_input, quantizer_output
from .quant import QuantParams, QuantTensor
from .reference import RefAttentionParams

PRNG_NAME = "numpy.random.PCG64"
SCALE_RANGE = (0.01, 1.0)


@dataclass(frozen=True, eq=False)
class HeadWeights:
    """Quantized projection weights (output-by-input, per-output-channel steps) and float parameters."""

    w_q: QuantTensor
    w_k: QuantTensor
    w_v: QuantTensor
    b_q: np.ndarray
    b_k: np.ndarray
    b_v: np.ndarray
    gamma_q: np.ndarray
    beta_q: np.ndarray
    gamma_k: np.ndarray
    beta_k: np.ndarray

    @property
    def d_in(self) -> int:
        return self.w_q.shape[1]

    @property
    def d_head(self) -> int:
        return self.w_q.shape[0]


@dataclass(frozen=True, eq=False)
class CompiledHead:
    plan_q: LinearPlan
    plan_k: LinearPlan
    plan_v: LinearPlan
    ln_q: LNQuantSpec
    ln_k: LNQuantSpec
    cfg: AttentionConfig


@dataclass(frozen=True, eq=False)
class HeadTrace:
    q: QuantTensor
    k: QuantTensor
    v: QuantTensor
    attn: QuantTensor
    out: QuantTensor


def compile_head(weights: HeadWeights, delta_x, cfg: AttentionConfig) -> CompiledHead:
    if weights.d_head != cfg.head_dim:
        raise ValueError(f"weights produce {weights.d_head} channels, config expects {cfg.head_dim}")
    return CompiledHead(
        plan_q=build_plan(weights.w_q, weights.b_q, delta_x, ScaleSink.LAYERNORM),
        plan_k=build_plan(weights.w_k, weights.b_k, delta_x, ScaleSink.LAYERNORM),
        plan_v=build_plan(weights.w_v, weights.b_v, delta_x, ScaleSink.QUANTIZER),
        ln_q=LNQuantSpec(weights.gamma_q, weights.beta_q, cfg.params("q")),
        ln_k=LNQuantSpec(weights.gamma_k, weights.beta_k, cfg.params("k")),
        cfg=cfg,
    )


def project_qkv(Xq: QuantTensor, head: CompiledHead):
    cfg = head.cfg
    q = ln_quantize(layernorm_input(int_linear(Xq, head.plan_q), head.plan_q), head.ln_q)
    k = ln_quantize(layernorm_input(int_linear(Xq, head.plan_k), head.plan_k), head.ln_k)
    v = quantizer_output(int_linear(Xq, head.plan_v), cfg.params("v"))
    return (
        QuantTensor(q, cfg.params("q")),
        QuantTensor(k, cfg.params("k")),
        QuantTensor(v, cfg.params("v")),
    )


def head_trace(Xq: QuantTensor, head: CompiledHead) -> HeadTrace:
    q, k, v = project_qkv(Xq, head)
    return HeadTrace(
        q=q,
        k=k,
        v=v,
        attn=attention_probs_codes(q, k, head.cfg),
        out=attention_head_forward(q, k, v, head.cfg),
    )


def head_forward(Xq: QuantTensor, head: CompiledHead) -> QuantTensor:
    q, k, v = project_qkv(Xq, head)
    return attention_head_forward(q, k, v, head.cfg)


def reference_params(weights: HeadWeights, cfg: AttentionConfig) -> RefAttentionParams:
    return RefAttentionParams(
        Wq=weights.w_q,
        Wk=weights.w_k,
        Wv=weights.w_v,
        b_q=weights.b_q,
        b_k=weights.b_k,
        b_v=weights.b_v,
        gamma_q=weights.gamma_q,
        beta_q=weights.beta_q,
        gamma_k=weights.gamma_k,
        beta_k=weights.beta_k,
        q_params=cfg.params("q"),
        k_params=cfg.params("k"),
        v_params=cfg.params("v"),
        attn_params=cfg.params("attn"),
        out_params=cfg.params("out"),
        s=cfg.s,
    )


def log_uniform(rng: np.random.Generator, size=None, low: float = SCALE_RANGE[0], high: float = SCALE_RANGE[1]):
    return np.exp(rng.uniform(math.log(low), math.log(high), size))


def random_codes(rng: np.random.Generator, shape, nbit: int) -> np.ndarray:
    lo = -(2 ** (nbit - 1))
    return rng.integers(lo, -lo, size=shape, dtype=np.int64).astype(np.int8)


def default_delta_attn(nbit: int) -> float:
    return 1.0 / 2 ** (nbit - 1)


def random_head_weights(rng: np.random.Generator, d_in: int, d_head: int, nbit: int) -> HeadWeights:
    def weight():
        return QuantTensor(
            random_codes(rng, (d_head, d_in), nbit),
            QuantParams(nbit, log_uniform(rng, d_head)),
            axis=0,
        )

    def gamma():
        return rng.choice([-1.0, 1.0], d_head) * rng.uniform(0.5, 1.5, d_head)

    w_q, w_k, w_v = weight(), weight(), weight()
    return HeadWeights(
        w_q=w_q,
        w_k=w_k,
        w_v=w_v,
        b_q=rng.uniform(-1.0, 1.0, d_head),
        b_k=rng.uniform(-1.0, 1.0, d_head),
        b_v=rng.uniform(-1.0, 1.0, d_head),
        gamma_q=gamma(),
        beta_q=rng.uniform(-0.5, 0.5, d_head),
        gamma_k=gamma(),
        beta_k=rng.uniform(-0.5, 0.5, d_head),
    )


STEP_NAMES = ("delta_q", "delta_k", "delta_v", "delta_attn", "delta_out")


def check_steps(scales) -> dict:
    """Validate explicit step overrides: keys from ``STEP_NAMES`` plus ``delta_x``, values > 0."""
    scales = dict(scales or {})
    unknown = set(scales) - set(STEP_NAMES) - {"delta_x"}
    if unknown:
        raise ValueError(f"unknown step names {sorted(unknown)}")
    for name, value in scales.items():
        if np.any(np.asarray(value, dtype=np.float64) <= 0):
            raise ValueError(f"{name} must be > 0")
    return scales


def random_config(
    rng: np.random.Generator,
    n_tokens: int,
    d_head: int,
    nbit: int,
    exp_mode: ExpMode | str = ExpMode.SHIFT,
    scales=None,
) -> AttentionConfig:
    """Log-uniform step sizes; entries of ``scales`` replace the drawn values.

    The draws happen either way, so overriding one step leaves the rest of
    the seeded stream unchanged.
    """
    dq, dk, dv = (float(v) for v in log_uniform(rng, 3))
    # an output step commensurate with dv * delta_attn puts outputs exactly on references
    d_out = float(dv * log_uniform(rng, None, 0.5, 2.0))
    steps = dict(zip(STEP_NAMES, (dq, dk, dv, default_delta_attn(nbit), d_out)))
    steps.update({k: float(v) for k, v in check_steps(scales).items() if k != "delta_x"})
    return AttentionConfig(n_tokens=n_tokens, head_dim=d_head, nbit=nbit, exp_mode=exp_mode, **steps)


def random_input(rng: np.random.Generator, n_tokens: int, d_in: int, nbit: int, delta_x=None):
    """Input codes with one step per input channel, and that step vector."""
    drawn = log_uniform(rng, d_in)
    delta_x = drawn if delta_x is None else np.broadcast_to(np.asarray(delta_x, dtype=np.float64), (d_in,)).copy()
    return QuantTensor(random_codes(rng, (n_tokens, d_in), nbit), QuantParams(nbit, delta_x)), delta_x


@dataclass(frozen=True, eq=False)
class RandomHead:
    Xq: QuantTensor
    delta_x: np.ndarray
    weights: HeadWeights
    cfg: AttentionConfig

    def compile(self) -> CompiledHead:
        return compile_head(self.weights, self.delta_x, self.cfg)


def random_head(
    seed_or_rng,
    n_tokens: int,
    d_in: int,
    d_head: int,
    nbit: int = 3,
    exp_mode: ExpMode | str = ExpMode.SHIFT,
    scales=None,
) -> RandomHead:
    """Seeded random head instance: input codes, weights and step sizes."""
    rng = np.random.default_rng(seed_or_rng)
    scales = check_steps(scales)
    Xq, delta_x = random_input(rng, n_tokens, d_in, nbit, scales.get("delta_x"))
    weights = random_head_weights(rng, d_in, d_head, nbit)
    cfg = random_config(rng, n_tokens, d_head, nbit, exp_mode, scales)
    return RandomHead(Xq, delta_x, weights, cfg)


def random_heads(
    seed: int,
    n_heads: int,
    n_tokens: int,
    d_in: int,
    d_head: int,
    nbit: int = 3,
    exp_mode: ExpMode | str = ExpMode.SHIFT,
    Xq: QuantTensor | None = None,
    scales=None,
):
    """Shared input plus ``n_heads`` independent weight/step draws from one seeded stream.

    When ``Xq`` is given it is used as the input (its per-column steps become
    ``delta_x``) and the stream only draws weights.  ``scales`` optionally
    fixes step sizes, see :func:`random_config`.
    """
    rng = np.random.default_rng(seed)
    scales = check_steps(scales)
    if Xq is None:
        Xq, delta_x = random_input(rng, n_tokens, d_in, nbit, scales.get("delta_x"))
    else:
        delta_x = np.broadcast_to(np.asarray(Xq.params.scale, dtype=np.float64), (Xq.shape[1],)).copy()
        n_tokens, d_in = Xq.shape
    heads = []
    for _ in range(n_heads):
        weights = random_head_weights(rng, d_in, d_head, nbit)
        heads.append(RandomHead(Xq, delta_x, weights, random_config(rng, n_tokens, d_head, nbit, exp_mode, scales)))
    return heads
