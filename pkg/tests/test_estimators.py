import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from intvit.estimators import IntegerAttentionHead, IntegerLinear, LayerNormQuantizer, UniformQuantizer
from intvit.head import head_forward, random_head
from intvit.layernorm import LNQuantSpec, ln_quantize
from intvit.quant import QuantParams, QuantTensor
from intvit.reference import near_tie, ref_linear, ref_normalize


def test_quantizer_roundtrip():
    est = UniformQuantizer(nbit=3, scale=1.0).fit(np.zeros((1, 2)))
    codes = est.transform([[0.6, -0.6]])
    np.testing.assert_array_equal(codes, [[1, -1]])
    np.testing.assert_array_equal(est.inverse_transform(codes), [[1.0, -1.0]])


def test_quantizer_checks():
    with pytest.raises(NotFittedError):
        UniformQuantizer().transform([[0.0]])
    with pytest.raises(ValueError):
        UniformQuantizer(scale=[1.0, 2.0]).fit(np.zeros((1, 3)))
    est = UniformQuantizer().fit(np.zeros((1, 2)))
    with pytest.raises(ValueError, match="features"):
        est.transform(np.zeros((1, 3)))


def test_params_and_clone():
    est = IntegerLinear(weight_codes=np.ones((2, 3)), weight_scale=0.5, nbit=2, sink="layernorm")
    params = est.get_params()
    assert params["nbit"] == 2
    assert params["sink"] == "layernorm"
    twin = clone(est)
    assert twin is not est
    assert twin.get_params()["weight_scale"] == 0.5
    est.set_params(nbit=3)
    assert est.nbit == 3


def test_integer_linear_matches_oracle(rng):
    w = rng.integers(-4, 4, (4, 6))
    dw, dx, b = rng.uniform(0.05, 1, 4), rng.uniform(0.05, 1, 6), rng.normal(size=4)
    x = rng.integers(-4, 4, (5, 6))
    est = IntegerLinear(weight_codes=w, weight_scale=dw, bias=b, input_scale=dx).fit(x)
    expected = ref_linear(
        QuantTensor(x, QuantParams(3)), QuantTensor(w, QuantParams(3, dw), axis=0), np.full(6, dx.mean()), dw, b
    )
    np.testing.assert_allclose(est.transform(x), expected, rtol=0, atol=1e-9)
    assert est.transform_int(x).values.dtype == np.int32


def test_integer_linear_rejects_floats_and_shapes():
    est = IntegerLinear(weight_codes=np.ones((2, 3), int)).fit()
    with pytest.raises(ValueError, match="integer"):
        est.transform([[0.5, 0.0, 0.0]])
    with pytest.raises(ValueError):
        est.transform(np.zeros((1, 4), int))
    with pytest.raises(ValueError):
        IntegerLinear().fit()


def test_layernorm_quantizer_methods_agree(rng):
    x = rng.normal(0, 3, (40, 12))
    gamma, beta = rng.uniform(0.5, 1.5, 12), rng.uniform(-0.5, 0.5, 12)
    fast = LayerNormQuantizer(gamma, beta, scale=0.5).fit(x).transform(x)
    direct = LayerNormQuantizer(gamma, beta, scale=0.5, method="direct").fit(x).transform(x)
    keep = ~near_tie(ref_normalize(x, gamma, beta), QuantParams(3, 0.5))
    np.testing.assert_array_equal(fast[keep], direct[keep])
    np.testing.assert_array_equal(fast, ln_quantize(x, LNQuantSpec(gamma, beta, QuantParams(3, 0.5))))
    with pytest.raises(ValueError):
        LayerNormQuantizer(method="sqrt").fit(x)


def test_pipeline_linear_then_layernorm(rng):
    w = rng.integers(-4, 4, (5, 8))
    x = rng.integers(-4, 4, (6, 8))
    pipe = make_pipeline(
        IntegerLinear(weight_codes=w, weight_scale=0.2, input_scale=0.3, sink="layernorm"),
        LayerNormQuantizer(scale=0.5),
    )
    out = pipe.fit(x).transform(x)
    assert out.shape == (6, 5)
    assert out.dtype == np.int8
    assert clone(pipe).get_params()["integerlinear__sink"] == "layernorm"


@pytest.mark.parametrize("simulate", [False, True])
def test_attention_head_estimator(simulate):
    inst = random_head(4, 7, 10, 5)
    est = IntegerAttentionHead(inst.weights, inst.cfg, inst.delta_x, simulate=simulate).fit()
    out = est.transform(inst.Xq.codes)
    np.testing.assert_array_equal(out, head_forward(inst.Xq, inst.compile()).codes)
    assert hasattr(est, "report_") is simulate
    with pytest.raises(ValueError, match="tokens"):
        est.transform(inst.Xq.codes[:3])
