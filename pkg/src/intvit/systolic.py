"""Cycle-level functional model of the self-attention accelerator.

Blocks and their PE grids (``N`` tokens, ``I`` input channels, ``O`` head
channels):

=====================  ==========  =================================
block                  grid        dataflow
=====================  ==========  =================================
linear                 I x O       weight stationary
layernorm statistics   2 x O       mean row + variance row
delay                  N x O       latency buffer
reversing              O x O       LIFO on token order
QK^T + softmax         N x N       output stationary, exp + adders
PV                     N x O       output stationary
=====================  ==========  =================================

Every simulator returns data bit-identical to the corresponding kernel in
:mod:`intvit.linear`, :mod:`intvit.attention` or :mod:`intvit.layernorm`;
timing is added on top and never depends on the data.

The cycle model is our own (no published timing exists):

* output-stationary matmul: ``(rows + cols - 1) + depth + cols`` - wavefront
  fill, ``depth`` accumulation steps, then one scan-chain shift per column;
* the softmax variant adds ``cols`` cycles for the row-sum adder chain;
* weight-stationary linear: ``N + I + O - 2`` steady-state cycles, plus
  ``I`` preload cycles reported separately;
* layernorm statistics: ``(N + O - 1) + 2 + 1`` - skewed stream, the two
  statistics rows, one comparator stage;
* delay: ``N``; reversing: ``2 * O`` per ``O``-token tile.
"""

from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_int32
from .attention import AttentionConfig, attention_exps, output_quantize
from .exceptions import BufferOverflowError, ExpUnderflowError
from .head import CompiledHead, HeadTrace
from .layernorm import LNQuantSpec, RunningStats, compare_table, welford_update
from .linear import IntAccumTensor, layernorm_input, quantizer_output
from .quant import QuantParams, QuantTensor, boundary_refs, count_above

COST_MODEL_ENV = "INTVIT_COST_MODEL"
FULL_PRECISION_BITS = 32


class BlockKind(str, enum.Enum):
    LINEAR_MAC = "linear_mac"
    MATMUL_MAC = "matmul_mac"
    MATMUL_EXP_SOFTMAX = "matmul_exp_softmax"
    LAYERNORM_STATS = "layernorm_stats"
    DELAY = "delay"
    REVERSING = "reversing"


COMPUTE_KINDS = frozenset(
    {BlockKind.LINEAR_MAC, BlockKind.MATMUL_MAC, BlockKind.MATMUL_EXP_SOFTMAX, BlockKind.LAYERNORM_STATS}
)


@dataclass(frozen=True)
class PEBlock:
    kind: BlockKind
    rows: int
    cols: int
    nbit: int = 3
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", BlockKind(self.kind))
        if self.rows < 1 or self.cols < 1:
            raise ValueError("block grids need rows, cols >= 1")

    @property
    def pe_count(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class BlockStats:
    pe_count: int
    mac_count: int
    cycles: int
    energy_proxy: float
    preload_cycles: int = 0


@dataclass(frozen=True)
class AttentionReport:
    blocks: tuple[tuple[str, BlockStats], ...]
    n_tokens: int
    d_in: int
    d_head: int
    nbit: int

    def __getitem__(self, name: str) -> BlockStats:
        for block_name, stats in self.blocks:
            if block_name == name:
                return stats
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.blocks]

    def records(self) -> list[dict]:
        return [
            {
                "block": name,
                "pe": s.pe_count,
                "mac": s.mac_count,
                "cycles": s.cycles,
                "energy_proxy": s.energy_proxy,
                "preload_cycles": s.preload_cycles,
            }
            for name, s in self.blocks
        ]

    @property
    def total_cycles(self) -> int:
        return sum(s.cycles for _, s in self.blocks)

    @property
    def total_macs(self) -> int:
        return sum(s.mac_count for _, s in self.blocks)


BLOCK_NAMES = (
    "Q linear",
    "Q layernorm",
    "Q delay",
    "K linear",
    "K layernorm",
    "K delay",
    "V linear",
    "V reversing",
    "QK^T matmul+softmax",
    "PV matmul",
)


def build_layout(N: int, I: int, O: int, nbit: int = 3) -> list[PEBlock]:  # noqa: E741
    if min(N, I, O) < 1:
        raise ValueError("N, I and O must be positive")
    grids = {
        "linear": (BlockKind.LINEAR_MAC, I, O),
        "layernorm": (BlockKind.LAYERNORM_STATS, 2, O),
        "delay": (BlockKind.DELAY, N, O),
        "reversing": (BlockKind.REVERSING, O, O),
        "matmul+softmax": (BlockKind.MATMUL_EXP_SOFTMAX, N, N),
        "matmul": (BlockKind.MATMUL_MAC, N, O),
    }
    blocks = []
    for name in BLOCK_NAMES:
        kind, rows, cols = grids[name.split(" ", 1)[1]]
        blocks.append(PEBlock(kind, rows, cols, nbit, name))
    return blocks


def build_deit_s_layout(N: int = 198, I: int = 384, O: int = 64, nbit: int = 3) -> list[PEBlock]:  # noqa: E741
    """Block layout of one DeiT-S attention head (198 tokens, 384 embed, 64 per head)."""
    return build_layout(N, I, O, nbit)


def mac_count(block: PEBlock, N: int, I: int, O: int) -> int:  # noqa: E741
    if block.kind is BlockKind.LINEAR_MAC:
        return N * I * O
    if block.kind in (BlockKind.MATMUL_MAC, BlockKind.MATMUL_EXP_SOFTMAX):
        return N * N * O
    if block.kind is BlockKind.LAYERNORM_STATS:
        return 2 * N * O
    return 0


# -- cycle model -------------------------------------------------------------


def matmul_cycles(rows: int, cols: int, depth: int) -> int:
    return (rows + cols - 1) + depth + cols


def softmax_cycles(rows: int, cols: int, depth: int) -> int:
    return matmul_cycles(rows, cols, depth) + cols


def linear_cycles(n_tokens: int, d_in: int, d_out: int) -> int:
    return n_tokens + d_in + d_out - 2


def layernorm_cycles(n_tokens: int, width: int) -> int:
    return (n_tokens + width - 1) + 2 + 1


def reversing_cycles(n_rows: int, capacity: int) -> int:
    return math.ceil(n_rows / capacity) * 2 * capacity


def block_cycles(block: PEBlock, N: int, I: int, O: int) -> tuple[int, int]:  # noqa: E741
    """``(steady-state cycles, preload cycles)`` for a block in an ``N, I, O`` head."""
    kind = block.kind
    if kind is BlockKind.LINEAR_MAC:
        return linear_cycles(N, I, O), I
    if kind is BlockKind.MATMUL_MAC:
        return matmul_cycles(block.rows, block.cols, N), 0
    if kind is BlockKind.MATMUL_EXP_SOFTMAX:
        return softmax_cycles(block.rows, block.cols, O), 0
    if kind is BlockKind.LAYERNORM_STATS:
        return layernorm_cycles(N, O), 0
    if kind is BlockKind.DELAY:
        return N, 0
    return reversing_cycles(N, block.rows), 0


# -- energy proxy ------------------------------------------------------------


def default_costs(nbit: int) -> dict[BlockKind, float]:
    """Unit cost per MAC: ``nbit**2`` for low-bit arrays, 32-bit for the statistics rows."""
    low = float(nbit * nbit)
    return {
        BlockKind.LINEAR_MAC: low,
        BlockKind.MATMUL_MAC: low,
        BlockKind.MATMUL_EXP_SOFTMAX: low,
        BlockKind.LAYERNORM_STATS: float(FULL_PRECISION_BITS**2),
        BlockKind.DELAY: 0.0,
        BlockKind.REVERSING: 0.0,
    }


def parse_cost_model(text: str) -> dict[BlockKind, float]:
    """Parse ``kind=<name> cost_per_mac=<real>`` lines; ``#`` starts a comment."""
    costs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = dict(tok.split("=", 1) for tok in line.split() if "=" in tok)
        if set(fields) != {"kind", "cost_per_mac"} or len(line.split()) != 2:
            raise ValueError(f"cost model line {lineno}: expected 'kind=<name> cost_per_mac=<real>'")
        try:
            kind = BlockKind(fields["kind"])
        except ValueError:
            raise ValueError(f"cost model line {lineno}: unknown kind {fields['kind']!r}") from None
        cost = float(fields["cost_per_mac"])
        if not math.isfinite(cost) or cost < 0:
            raise ValueError(f"cost model line {lineno}: cost must be a finite non-negative number")
        costs[kind] = cost
    return costs


def load_cost_model(path: str | os.PathLike | None, nbit: int) -> dict[BlockKind, float]:
    """Default costs overridden by ``path`` (or ``$INTVIT_COST_MODEL`` when ``path`` is None)."""
    costs = default_costs(nbit)
    path = path if path is not None else os.environ.get(COST_MODEL_ENV)
    if path:
        with open(path) as fh:
            costs.update(parse_cost_model(fh.read()))
    return costs


# -- block simulators --------------------------------------------------------


@dataclass
class SimResult:
    data: object
    cycles: int
    macs: int = 0
    preload_cycles: int = 0
    extra: dict = field(default_factory=dict)


def _check_kind(block: PEBlock, *kinds: BlockKind) -> None:
    if block.kind not in kinds:
        raise ValueError(f"block {block.name or block.kind.value} has kind {block.kind.value}, expected {kinds}")


def _skewed(operand: np.ndarray, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Edge injection for cycle ``t``: lane ``i`` receives ``operand[i, t - i]``."""
    lanes, depth = operand.shape
    k = t - np.arange(lanes)
    valid = (k >= 0) & (k < depth)
    vals = np.where(valid, operand[np.arange(lanes), np.clip(k, 0, max(depth - 1, 0))], 0)
    return vals, valid


def _os_mac_grid(A: np.ndarray, B: np.ndarray):
    """Output-stationary MAC grid computing ``A @ B.T``; returns (acc, compute cycles, macs)."""
    rows, depth = A.shape
    cols = B.shape[0]
    a = np.zeros((rows, cols), dtype=np.int64)
    b = np.zeros((rows, cols), dtype=np.int64)
    av = np.zeros((rows, cols), dtype=bool)
    bv = np.zeros((rows, cols), dtype=bool)
    acc = np.zeros((rows, cols), dtype=np.int64)
    A = A.astype(np.int64)
    B = B.astype(np.int64)
    macs = 0
    n_cycles = rows + cols - 2 + depth if depth else 0
    for t in range(n_cycles):
        a[:, 1:] = a[:, :-1]
        av[:, 1:] = av[:, :-1]
        b[1:, :] = b[:-1, :]
        bv[1:, :] = bv[:-1, :]
        a[:, 0], av[:, 0] = _skewed(A, t)
        b[0, :], bv[0, :] = _skewed(B, t)
        acc += a * b
        macs += int(np.count_nonzero(av & bv))
    return acc, n_cycles, macs


def _scan_out(values: np.ndarray):
    """Shift each row's scan chain out of its right end; returns (values, emission column order)."""
    chain = values.copy()
    cols = values.shape[1]
    out = np.empty_like(values)
    order = []
    for s in range(cols):
        out[:, cols - 1 - s] = chain[:, -1]
        order.append(cols - 1 - s)
        chain[:, 1:] = chain[:, :-1]
    return out, order, cols


def simulate_matmul_block(block: PEBlock, A_codes, B_codes) -> SimResult:
    """Integer ``A @ B.T`` on an output-stationary grid of ``len(A) x len(B)`` PEs.

    Results leave through per-row scan chains; ``extra["emit_order"]`` lists
    the column order of emission (rightmost PE first).
    """
    _check_kind(block, BlockKind.MATMUL_MAC)
    A = np.asarray(A_codes)
    B = np.asarray(B_codes)
    if A.shape[0] != block.rows or B.shape[0] != block.cols:
        raise ValueError(f"operands {A.shape} x {B.shape} do not fit a {block.rows}x{block.cols} grid")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: depth {A.shape[1]} != {B.shape[1]}")
    acc, cycles, macs = _os_mac_grid(A, B)
    check_int32(acc)
    cycles += 1  # latch into the scan chain
    out, order, scan = _scan_out(acc)
    return SimResult(
        IntAccumTensor(out.astype(np.int32)), cycles + scan, macs, extra={"emit_order": order}
    )


def simulate_softmax_block(block: PEBlock, Q_codes, K_codes, cfg: AttentionConfig) -> SimResult:
    """``QK^T`` grid with per-PE exponential, systolic row-sum adders and the attention quantizer."""
    _check_kind(block, BlockKind.MATMUL_EXP_SOFTMAX)
    Q = np.asarray(Q_codes)
    K = np.asarray(K_codes)
    if Q.shape[0] != block.rows or K.shape[0] != block.cols:
        raise ValueError(f"operands {Q.shape} x {K.shape} do not fit a {block.rows}x{block.cols} grid")
    if Q.shape[1] != K.shape[1]:
        raise ValueError(f"dimension mismatch: depth {Q.shape[1]} != {K.shape[1]}")
    acc, cycles, macs = _os_mac_grid(Q, K)
    check_int32(acc)
    cycles += 1
    exps = attention_exps(IntAccumTensor(acc), cfg)

    running = np.zeros(block.rows)
    for j in range(block.cols):
        running = running + exps[:, j]
        cycles += 1

    if np.any(running <= 0):
        raise ExpUnderflowError("an attention row has no non-zero exponential")
    params = QuantParams(cfg.nbit, cfg.delta_attn)
    table = np.asarray(boundary_refs(params))[None, :] * running[:, None]
    emitted, order, scan = _scan_out(exps)
    codes = np.empty(exps.shape, dtype=np.int8)
    for j in order:
        codes[:, j] = params.qmin + count_above(emitted[:, j], table)
    return SimResult(QuantTensor(codes, params), cycles + scan, macs, extra={"emit_order": order, "row_sum": running})


def simulate_linear_block(block: PEBlock, X_codes, W_codes) -> SimResult:
    """Weight-stationary ``X @ W.T``: PE ``(i, o)`` holds ``W[o, i]``, tokens stream in skewed."""
    _check_kind(block, BlockKind.LINEAR_MAC)
    X = np.asarray(X_codes).astype(np.int64)
    W = np.asarray(W_codes).astype(np.int64)
    n_tokens, d_in = X.shape
    d_out = W.shape[0]
    if (block.rows, block.cols) != (d_in, d_out) or W.shape[1] != d_in:
        raise ValueError(f"weights {W.shape} / inputs {X.shape} do not fit a {block.rows}x{block.cols} grid")
    stationary = W.T.copy()
    x = np.zeros((d_in, d_out), dtype=np.int64)
    xv = np.zeros((d_in, d_out), dtype=bool)
    psum = np.zeros((d_in, d_out), dtype=np.int64)
    out = np.zeros((n_tokens, d_out), dtype=np.int64)
    col = np.arange(d_out)
    macs = 0
    cycles = linear_cycles(n_tokens, d_in, d_out)
    for t in range(cycles):
        x[:, 1:] = x[:, :-1]
        xv[:, 1:] = xv[:, :-1]
        x[:, 0], xv[:, 0] = _skewed(X.T, t)
        shifted = np.zeros_like(psum)
        shifted[1:, :] = psum[:-1, :]
        psum = shifted + x * stationary
        macs += int(np.count_nonzero(xv))
        n = t - (d_in - 1) - col
        done = (n >= 0) & (n < n_tokens)
        out[n[done], col[done]] = psum[-1, done]
    check_int32(out)
    return SimResult(IntAccumTensor(out.astype(np.int32)), cycles, macs, preload_cycles=d_in)


def simulate_layernorm_block(block: PEBlock, rows, spec: LNQuantSpec) -> SimResult:
    """Mean row and variance row updated as tokens stream by, then the comparator array."""
    _check_kind(block, BlockKind.LAYERNORM_STATS)
    rows = np.asarray(rows, dtype=np.float64)
    n_tokens, width = rows.shape
    if block.cols != width or spec.n_channels != width:
        raise ValueError(f"rows of width {width} do not fit a {block.rows}x{block.cols} statistics block")
    lane = np.arange(width)
    count = lane.copy()
    mu = np.zeros(width)
    m2 = np.zeros(width)
    final_mu = np.zeros(n_tokens)
    final_m2 = np.zeros(n_tokens)
    macs = 0
    stream = n_tokens + width - 1
    for t in range(stream):
        mu_in = np.concatenate(([0.0], mu[:-1]))
        m2_in = np.concatenate(([0.0], m2[:-1]))
        n = t - lane
        valid = (n >= 0) & (n < n_tokens)
        x = np.where(valid, rows[np.clip(n, 0, n_tokens - 1), lane], 0.0)
        st = welford_update(RunningStats(count, mu_in, m2_in), x)
        mu = np.where(valid, st.mu, 0.0)
        m2 = np.where(valid, st.m2, 0.0)
        macs += 2 * int(np.count_nonzero(valid))
        if valid[-1]:
            final_mu[n[-1]] = mu[-1]
            final_m2[n[-1]] = m2[-1]
    var = final_m2 / width
    passed = compare_table(rows, final_mu, var, spec)
    codes = (spec.out_params.qmin + passed.sum(axis=-1)).astype(np.int8)
    return SimResult(codes, stream + 2 + 1, macs)


def simulate_delay(block: PEBlock, data) -> SimResult:
    _check_kind(block, BlockKind.DELAY)
    arr = np.asarray(data)
    if arr.shape[0] > block.rows or arr.shape[1] > block.cols:
        raise BufferOverflowError(f"{arr.shape} does not fit a {block.rows}x{block.cols} delay buffer")
    return SimResult(arr.copy(), block.rows)


def simulate_reversing(block: PEBlock, V_rows) -> SimResult:
    """Emit rows in reverse arrival order through a LIFO of ``block.rows`` rows of width ``block.cols``."""
    _check_kind(block, BlockKind.REVERSING)
    arr = np.asarray(V_rows)
    if arr.shape[0] > block.rows or (arr.ndim > 1 and arr.shape[1] > block.cols):
        raise BufferOverflowError(
            f"{arr.shape[0]} rows of width {arr.shape[1] if arr.ndim > 1 else 1} "
            f"exceed the {block.rows}x{block.cols} reversing buffer"
        )
    stack = []
    for row in arr:
        stack.append(row)
    out = np.array([stack.pop() for _ in range(len(stack))]).reshape(arr.shape)
    return SimResult(out, 2 * block.rows)


def reverse_tokens(block: PEBlock, V_rows) -> SimResult:
    """Reverse an arbitrarily long token sequence tile by tile.

    Each tile of at most ``block.rows`` tokens goes through the buffer; tiles
    are consumed last-first by the PV array's operand addressing.
    """
    arr = np.asarray(V_rows)
    tiles = [arr[i : i + block.rows] for i in range(0, arr.shape[0], block.rows)]
    cycles = 0
    reversed_tiles = []
    for tile in tiles:
        res = simulate_reversing(block, tile)
        reversed_tiles.append(res.data)
        cycles += res.cycles
    return SimResult(np.concatenate(reversed_tiles[::-1]) if tiles else arr.copy(), cycles)


# -- whole head --------------------------------------------------------------


def _stats(block: PEBlock, res: SimResult, costs: dict[BlockKind, float]) -> BlockStats:
    return BlockStats(
        pe_count=block.pe_count,
        mac_count=res.macs,
        cycles=res.cycles,
        energy_proxy=res.macs * costs[block.kind],
        preload_cycles=res.preload_cycles,
    )


def simulate_head(
    Xq: QuantTensor,
    head: CompiledHead,
    costs: dict[BlockKind, float] | None = None,
) -> tuple[HeadTrace, AttentionReport]:
    """Run one head through every block; returns the data trace and the per-block report."""
    cfg = head.cfg
    N, I = Xq.shape  # noqa: E741
    O = cfg.head_dim  # noqa: E741
    layout = {b.name: b for b in build_layout(N, I, O, cfg.nbit)}
    costs = costs if costs is not None else default_costs(cfg.nbit)
    stats = {}

    def run(name, fn, *args):
        res = fn(layout[name], *args)
        stats[name] = _stats(layout[name], res, costs)
        return res.data

    projected = {}
    for tag, plan, ln in (("Q", head.plan_q, head.ln_q), ("K", head.plan_k, head.ln_k)):
        acc = run(f"{tag} linear", simulate_linear_block, Xq.codes, plan.weight_codes)
        acc = IntAccumTensor(acc.values, plan.post_scale, plan.equiv_bias)
        codes = run(f"{tag} layernorm", simulate_layernorm_block, layernorm_input(acc, plan), ln)
        codes = run(f"{tag} delay", simulate_delay, codes)
        projected[tag] = QuantTensor(codes, cfg.params(tag.lower()))

    acc = run("V linear", simulate_linear_block, Xq.codes, head.plan_v.weight_codes)
    acc = IntAccumTensor(acc.values, head.plan_v.post_scale, head.plan_v.equiv_bias)
    v = QuantTensor(quantizer_output(acc, cfg.params("v")), cfg.params("v"))
    v_rev = run("V reversing", reverse_tokens, v.codes)

    attn = run("QK^T matmul+softmax", simulate_softmax_block, projected["Q"].codes, projected["K"].codes, cfg)
    # attention columns leave the scan chain last-first, matching the reversed V tokens
    pv = run("PV matmul", simulate_matmul_block, attn.codes[:, ::-1], v_rev.T)
    out = output_quantize(IntAccumTensor(pv.values, post_scale=cfg.delta_attn * cfg.delta_v), cfg)

    trace = HeadTrace(q=projected["Q"], k=projected["K"], v=v, attn=attn, out=out)
    report = AttentionReport(
        blocks=tuple((name, stats[name]) for name in BLOCK_NAMES),
        n_tokens=N,
        d_in=I,
        d_head=O,
        nbit=cfg.nbit,
    )
    return trace, report


def analytic_report(
    N: int,
    I: int,  # noqa: E741
    O: int,  # noqa: E741
    nbit: int = 3,
    costs: dict[BlockKind, float] | None = None,
) -> AttentionReport:
    """Counts and cycles from closed forms, without moving any data."""
    costs = costs if costs is not None else default_costs(nbit)
    blocks = []
    for block in build_layout(N, I, O, nbit):
        macs = mac_count(block, N, I, O)
        cycles, preload = block_cycles(block, N, I, O)
        blocks.append((block.name, BlockStats(block.pe_count, macs, cycles, macs * costs[block.kind], preload)))
    return AttentionReport(tuple(blocks), N, I, O, nbit)


def full_report(config, seed: int | None = None, costs: dict[BlockKind, float] | None = None) -> AttentionReport:
    """Simulate one seeded random head with ``config``'s geometry and report every block."""
    from .head import random_head

    seed = config.seed if seed is None else seed
    inst = random_head(
        seed, config.n_tokens, config.d_in, config.d_head, config.nbit, config.exp_mode, getattr(config, "scales", None)
    )
    _, report = simulate_head(inst.Xq, inst.compile(), costs)
    return report
