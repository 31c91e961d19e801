import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intvit.attention import (
    AttentionConfig,
    ExpMode,
    ExpRow,
    attention_head_forward,
    attention_probs_codes,
    attention_weights,
    exp_shift,
    pv_int_matmul,
    qk_int_matmul,
    row_sums,
    shift_exp2,
    softmax_quantize,
    softmax_quantize_row,
)
from intvit.exceptions import ExpUnderflowError
from intvit.head import head_trace, random_head, reference_params
from intvit.quant import QuantParams, QuantTensor, dequantize, quantize
from intvit.reference import ref_attention_weights, ref_head


def codes(values, nbit=3, scale=1.0):
    return QuantTensor(np.asarray(values), QuantParams(nbit, scale))


def brute_matmul(a, b):
    return np.array([[sum(int(x) * int(y) for x, y in zip(ra, rb)) for rb in b] for ra in a])


# -- integer matmuls -------------------------------------------------------------------


def test_qk_examples():
    assert qk_int_matmul(codes([[1, 1]]), codes([[1, -1]])).values[0, 0] == 0
    np.testing.assert_array_equal(qk_int_matmul(codes([[2]]), codes([[3]])).values, [[6]])


def test_qk_matches_brute_force(rng):
    q, k = rng.integers(-4, 4, (8, 4)), rng.integers(-4, 4, (8, 4))
    acc = qk_int_matmul(codes(q, scale=0.5), codes(k, scale=0.25), s=0.5)
    np.testing.assert_array_equal(acc.values, brute_matmul(q, k))
    assert acc.post_scale == pytest.approx(0.5 * 0.5 * 0.25)


def test_qk_default_softmax_scale():
    acc = qk_int_matmul(codes(np.ones((2, 4), int)), codes(np.ones((2, 4), int)))
    assert acc.post_scale == pytest.approx(0.5)


def test_qk_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension mismatch"):
        qk_int_matmul(codes(np.ones((2, 3), int)), codes(np.ones((2, 4), int)))


def test_pv_one_hot_selects_row():
    v = np.array([[1, -2], [3, 0], [-4, 2]])
    attn = codes([[0, 3, 0]], scale=1 / 3)
    out = pv_int_matmul(attn, codes(v, scale=0.5))
    np.testing.assert_array_equal(out.values, [3 * v[1]])
    assert out.post_scale == pytest.approx(0.5 / 3)


def test_pv_zero_attention():
    out = pv_int_matmul(codes(np.zeros((2, 3), int)), codes(np.ones((3, 4), int)))
    assert not out.values.any()


def test_pv_matches_brute_force(rng):
    a, v = rng.integers(-4, 4, (6, 6)), rng.integers(-4, 4, (6, 5))
    np.testing.assert_array_equal(pv_int_matmul(codes(a), codes(v)).values, brute_matmul(a, v.T))


# -- exponential -------------------------------------------------------------------------


def test_shift_exp_integer_exponents():
    assert exp_shift(3, math.log(2)) == 8.0
    assert exp_shift(0, 0.3) == 1.0
    np.testing.assert_array_equal(shift_exp2(np.array([3.0, 0.0, -2.0])), [8.0, 1.0, 0.25])


def test_shift_exp_fractional_part():
    # (1 + 0.5) * 2**2
    assert shift_exp2(2.5) == 6.0


def test_shift_exp_negative_exponent_is_fractional():
    assert shift_exp2(-1.25) == pytest.approx(1.75 * 2.0**-2)


def test_exact_mode_is_exp():
    np.testing.assert_allclose(exp_shift(np.arange(-5, 6), 0.3, "exact"), np.exp(0.3 * np.arange(-5, 6)))


@settings(max_examples=300, deadline=None)
@given(t=st.floats(-60, 60))
def test_shift_exp_ratio_bounds(t):
    ratio = float(shift_exp2(t)) / 2.0**t
    assert 1.0 - 1e-15 <= ratio <= 2 / (math.e * math.log(2)) + 1e-12


def test_shift_fixed_truncates_exponent():
    cs = math.log(2) * 0.3  # t = 0.3 * acc
    fine = exp_shift(1, cs, "shift")
    coarse = exp_shift(1, cs, "shift_fixed", frac_bits=2)
    assert fine == pytest.approx(1.3)
    assert coarse == 1.25


def test_shift_approx_alias():
    assert ExpMode("shift_approx") is ExpMode.SHIFT


# -- softmax quantizer --------------------------------------------------------------------


def test_single_token_saturates():
    row = ExpRow.from_numerators([0.37])
    np.testing.assert_array_equal(softmax_quantize_row(row, 0.25, 3), [3])


def test_equal_numerators_equal_codes():
    out = softmax_quantize_row(ExpRow.from_numerators([2.0, 2.0, 2.0, 2.0]), 0.25, 3)
    assert len(set(out.tolist())) == 1
    assert out[0] == 1


@settings(max_examples=200, deadline=None)
@given(
    nums=st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=16),
    c=st.floats(1e-6, 1e6),
)
def test_softmax_codes_argcode_invariant(nums, c):
    base = ExpRow.from_numerators(nums)
    scaled = ExpRow(base.numerators * c, base.row_sum * c)
    probs = base.numerators / base.row_sum
    refs = (np.arange(-3, 4) - 0.5) * 0.25
    if np.any(np.abs(probs[:, None] - refs) < 1e-9):
        return
    np.testing.assert_array_equal(softmax_quantize_row(base, 0.25, 3), softmax_quantize_row(scaled, 0.25, 3))


def test_softmax_matches_division_oracle(rng):
    params = QuantParams(3, 0.25)
    for _ in range(500):
        nums = rng.exponential(1.0, rng.integers(1, 20))
        row = ExpRow.from_numerators(nums)
        expected = quantize((nums / row.row_sum)[None, :], params).codes[0]
        np.testing.assert_array_equal(softmax_quantize_row(row, 0.25, 3), expected)


def test_underflow_raises():
    with pytest.raises(ExpUnderflowError):
        softmax_quantize(np.zeros((1, 3)), np.zeros(1), 0.25, 3)


def test_row_sums_are_sequential():
    x = np.array([[1e16, 1.0, -1e16]])
    assert row_sums(x)[0] == (1e16 + 1.0) - 1e16


def test_exp_row_rejects_negative():
    with pytest.raises(ValueError):
        ExpRow(np.array([-1.0]), 1.0)


# -- configs and heads --------------------------------------------------------------------


def simple_config(**kw):
    base = dict(n_tokens=1, head_dim=2, delta_q=0.5, delta_k=0.5, delta_v=0.5, delta_attn=0.25)
    base.update(kw)
    return AttentionConfig(**base)


def test_config_defaults():
    cfg = simple_config(head_dim=16)
    assert cfg.s == 0.25
    assert cfg.delta_out == cfg.delta_v
    assert cfg.logit_scale == pytest.approx(0.25 * 0.25)


def test_config_rejects_bad_steps():
    with pytest.raises(ValueError):
        simple_config(delta_q=0.0)
    with pytest.raises(ValueError):
        simple_config(n_tokens=0)


def test_single_token_head_output():
    cfg = simple_config(delta_out=0.3)
    q = codes([[1, -2]], scale=0.5)
    k = codes([[3, 0]], scale=0.5)
    v = codes([[2, -3]], scale=0.5)
    out = attention_head_forward(q, k, v, cfg)
    expected = quantize((3 * 0.25) * dequantize(v), QuantParams(3, 0.3)).codes
    np.testing.assert_array_equal(out.codes, expected)


def test_head_checks_steps():
    cfg = simple_config()
    q = codes([[1, -2]], scale=0.5)
    with pytest.raises(ValueError, match="config expects"):
        attention_head_forward(q, q, codes([[1, 1]], scale=0.75), cfg)


@pytest.mark.parametrize("seed", range(100))
def test_exact_mode_agrees_with_float_oracle(seed):
    rng = np.random.default_rng(seed)
    n, i_dim, o_dim = (int(v) for v in rng.integers(1, 13, 3))
    inst = random_head(seed, n, i_dim, o_dim, int(rng.choice([2, 3])), "exact")
    head = inst.compile()
    trace = head_trace(inst.Xq, head)
    ref = ref_head(inst.Xq, np.full(i_dim, head.plan_q.input_scale), reference_params(inst.weights, inst.cfg))
    keep = ~ref.excluded
    np.testing.assert_array_equal(trace.out.codes[keep], ref.out_codes[keep])


def test_shift_mode_softmax_deviation_bound():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(10_000):
        n = int(rng.integers(1, 33))
        acc = rng.integers(-150, 151, n)
        cs = float(np.exp(rng.uniform(math.log(1e-3), math.log(0.5))))
        exact = np.exp(cs * acc - (cs * acc).max())
        approx = exp_shift(acc, cs, "shift")
        worst = max(worst, float(np.abs(exact / exact.sum() - approx / row_sums(approx[None, :])[0]).max()))
    print(f"empirical max softmax deviation in shift mode: {worst:.4f}")
    assert worst <= 0.12


def test_kernel_weights_track_exact_softmax():
    inst = random_head(11, 10, 12, 6, 3, "exact")
    trace = head_trace(inst.Xq, inst.compile())
    kernel = attention_weights(trace.q, trace.k, inst.cfg)
    exact = ref_attention_weights(dequantize(trace.q), dequantize(trace.k), inst.cfg.s)
    np.testing.assert_allclose(kernel, exact, rtol=0, atol=1e-12)


def test_max_subtract_keeps_codes():
    inst = random_head(5, 9, 10, 4, 3, "exact")
    trace = head_trace(inst.Xq, inst.compile())
    plain = attention_probs_codes(trace.q, trace.k, inst.cfg)
    shifted_cfg = AttentionConfig(**{**inst.cfg.__dict__, "max_subtract": True})
    np.testing.assert_array_equal(attention_probs_codes(trace.q, trace.k, shifted_cfg).codes, plain.codes)
