import numpy as np
import pytest

from intvit.attention import AttentionConfig, attention_probs_codes
from intvit.config import RunConfig
from intvit.exceptions import BufferOverflowError
from intvit.head import head_trace, random_head
from intvit.layernorm import LNQuantSpec, ln_quantize
from intvit.quant import QuantParams, QuantTensor, quantize
from intvit.systolic import (
    BLOCK_NAMES,
    BlockKind,
    PEBlock,
    analytic_report,
    build_deit_s_layout,
    build_layout,
    default_costs,
    full_report,
    load_cost_model,
    mac_count,
    parse_cost_model,
    reverse_tokens,
    simulate_head,
    simulate_layernorm_block,
    simulate_linear_block,
    simulate_matmul_block,
    simulate_reversing,
    simulate_softmax_block,
)

TABLE_PE = [24576, 128, 12672, 24576, 128, 12672, 24576, 4096, 39204, 12672]


def test_deit_s_pe_column():
    layout = build_deit_s_layout()
    assert [b.name for b in layout] == list(BLOCK_NAMES)
    assert [b.pe_count for b in layout] == TABLE_PE


@pytest.mark.parametrize(
    "name, macs",
    [("Q linear", 4_866_048), ("Q layernorm", 25_344), ("QK^T matmul+softmax", 2_509_056), ("PV matmul", 2_509_056), ("Q delay", 0), ("V reversing", 0)],
)
def test_deit_s_macs(name, macs):
    block = {b.name: b for b in build_deit_s_layout()}[name]
    assert mac_count(block, 198, 384, 64) == macs


def test_pe_and_macs_independent_of_bits():
    r2 = analytic_report(198, 384, 64, 2)
    r3 = analytic_report(198, 384, 64, 3)
    assert [(r["pe"], r["mac"]) for r in r2.records()] == [(r["pe"], r["mac"]) for r in r3.records()]


def test_block_validation():
    with pytest.raises(ValueError):
        PEBlock(BlockKind.LINEAR_MAC, 0, 4)
    with pytest.raises(ValueError):
        build_layout(0, 4, 4)


def test_matmul_1x1_cycles():
    for depth in (1, 5, 17):
        block = PEBlock(BlockKind.MATMUL_MAC, 1, 1)
        res = simulate_matmul_block(block, np.full((1, depth), 2), np.full((1, depth), 3))
        assert res.cycles == depth + 2
        assert res.data.values[0, 0] == 6 * depth
        assert res.macs == depth


def test_matmul_cycles_are_data_independent(rng):
    block = PEBlock(BlockKind.MATMUL_MAC, 4, 3)
    a, b = rng.integers(-4, 4, (4, 6)), rng.integers(-4, 4, (3, 6))
    res = simulate_matmul_block(block, a, b)
    zero = simulate_matmul_block(block, np.zeros_like(a), np.zeros_like(b))
    np.testing.assert_array_equal(res.data.values, a @ b.T)
    assert not zero.data.values.any()
    assert res.cycles == zero.cycles
    assert res.macs == zero.macs == 4 * 3 * 6


def test_scan_chain_emits_rightmost_first(rng):
    block = PEBlock(BlockKind.MATMUL_MAC, 2, 5)
    res = simulate_matmul_block(block, rng.integers(-4, 4, (2, 3)), rng.integers(-4, 4, (5, 3)))
    assert res.extra["emit_order"] == [4, 3, 2, 1, 0]


def test_matmul_grid_mismatch():
    with pytest.raises(ValueError):
        simulate_matmul_block(PEBlock(BlockKind.MATMUL_MAC, 2, 2), np.ones((3, 2)), np.ones((2, 2)))


def test_linear_block_matches_matmul(rng):
    x, w = rng.integers(-4, 4, (7, 5)), rng.integers(-4, 4, (3, 5))
    res = simulate_linear_block(PEBlock(BlockKind.LINEAR_MAC, 5, 3), x, w)
    np.testing.assert_array_equal(res.data.values, x @ w.T)
    assert res.cycles == 7 + 5 + 3 - 2
    assert res.preload_cycles == 5
    assert res.macs == 7 * 5 * 3


def test_softmax_block_matches_kernel(rng):
    cfg = AttentionConfig(n_tokens=6, head_dim=4, delta_q=0.3, delta_k=0.7, delta_v=0.5, delta_attn=0.25)
    q = QuantTensor(rng.integers(-4, 4, (6, 4)), cfg.params("q"))
    k = QuantTensor(rng.integers(-4, 4, (6, 4)), cfg.params("k"))
    res = simulate_softmax_block(PEBlock(BlockKind.MATMUL_EXP_SOFTMAX, 6, 6), q.codes, k.codes, cfg)
    np.testing.assert_array_equal(res.data.codes, attention_probs_codes(q, k, cfg).codes)


def test_softmax_block_single_token():
    cfg = AttentionConfig(n_tokens=1, head_dim=2, delta_q=0.3, delta_k=0.7, delta_v=0.5, delta_attn=0.25)
    res = simulate_softmax_block(PEBlock(BlockKind.MATMUL_EXP_SOFTMAX, 1, 1), np.array([[1, 2]]), np.array([[3, -1]]), cfg)
    np.testing.assert_array_equal(res.data.codes, [[3]])


def test_layernorm_block_matches_kernel(rng):
    rows = rng.normal(0, 5, (9, 6))
    s = LNQuantSpec(rng.uniform(0.5, 1.5, 6), rng.uniform(-0.5, 0.5, 6), QuantParams(3, 0.5))
    res = simulate_layernorm_block(PEBlock(BlockKind.LAYERNORM_STATS, 2, 6), rows, s)
    np.testing.assert_array_equal(res.data, ln_quantize(rows, s))
    assert res.cycles == (9 + 6 - 1) + 2 + 1
    assert res.macs == 2 * 9 * 6


def test_layernorm_block_constant_row():
    beta = np.array([0.3, -1.2, 2.0])
    s = LNQuantSpec(np.ones(3), beta, QuantParams(3, 1.0))
    res = simulate_layernorm_block(PEBlock(BlockKind.LAYERNORM_STATS, 2, 3), np.full((1, 3), 4.0), s)
    np.testing.assert_array_equal(res.data, quantize(beta[None, :], QuantParams(3, 1.0)).codes)


def test_reversing_examples():
    block = PEBlock(BlockKind.REVERSING, 4, 2)
    rows = np.array([[0, 0], [1, 1], [2, 2]])
    once = simulate_reversing(block, rows).data
    np.testing.assert_array_equal(once, rows[::-1])
    np.testing.assert_array_equal(simulate_reversing(block, once).data, rows)


def test_reversing_overflow():
    with pytest.raises(BufferOverflowError):
        simulate_reversing(PEBlock(BlockKind.REVERSING, 2, 2), np.zeros((3, 2)))


def test_reverse_tokens_tiles(rng):
    block = PEBlock(BlockKind.REVERSING, 4, 3)
    rows = rng.integers(-4, 4, (10, 3))
    res = reverse_tokens(block, rows)
    np.testing.assert_array_equal(res.data, rows[::-1])
    assert res.cycles == 3 * 2 * 4


@pytest.mark.parametrize("seed", range(12))
def test_head_simulation_is_transparent(seed):
    rng = np.random.default_rng(seed)
    n, i_dim, o_dim = (int(v) for v in rng.integers(1, 15, 3))
    inst = random_head(seed, n, i_dim, o_dim, 3 if seed % 2 else 2, "shift" if seed % 3 else "exact")
    head = inst.compile()
    kernel = head_trace(inst.Xq, head)
    sim, report = simulate_head(inst.Xq, head)
    for part in ("q", "k", "v", "attn", "out"):
        np.testing.assert_array_equal(getattr(sim, part).codes, getattr(kernel, part).codes)
    assert report.records() == analytic_report(n, i_dim, o_dim, inst.cfg.nbit).records()


def test_cycles_independent_of_data():
    a = random_head(1, 6, 8, 4)
    b = random_head(2, 6, 8, 4)
    _, ra = simulate_head(a.Xq, a.compile())
    _, rb = simulate_head(b.Xq, b.compile())
    assert [r["cycles"] for r in ra.records()] == [r["cycles"] for r in rb.records()]


def test_full_report_from_config():
    rep = full_report(RunConfig(n_tokens=4, d_in=6, d_head=3))
    assert rep.names == list(BLOCK_NAMES)
    assert rep["Q linear"].mac_count == 4 * 6 * 3
    with pytest.raises(KeyError):
        rep["nope"]


def test_default_energy_proxy():
    rep = analytic_report(2, 3, 4, 3)
    assert rep["Q linear"].energy_proxy == 2 * 3 * 4 * 9
    assert rep["Q layernorm"].energy_proxy == 2 * 2 * 4 * 1024
    assert rep["Q delay"].energy_proxy == 0


def test_cost_model_parsing(tmp_path, monkeypatch):
    text = "# costs\nkind=linear_mac cost_per_mac=2.5\n\nkind=delay cost_per_mac=0.1  # buffers\n"
    costs = parse_cost_model(text)
    assert costs == {BlockKind.LINEAR_MAC: 2.5, BlockKind.DELAY: 0.1}
    path = tmp_path / "costs.txt"
    path.write_text(text)
    monkeypatch.setenv("INTVIT_COST_MODEL", str(path))
    merged = load_cost_model(None, 3)
    assert merged[BlockKind.LINEAR_MAC] == 2.5
    assert merged[BlockKind.MATMUL_MAC] == default_costs(3)[BlockKind.MATMUL_MAC]


@pytest.mark.parametrize("bad", ["kind=linear_mac", "kind=warp cost_per_mac=1", "kind=delay cost_per_mac=-1", "kind=delay cost_per_mac=1 x=2"])
def test_cost_model_rejects(bad):
    with pytest.raises(ValueError):
        parse_cost_model(bad)
