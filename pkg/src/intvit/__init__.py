"""Integer-only ViT self-attention with operand reordering, plus a systolic-array model."""

from .attention import (
    AttentionConfig,
    ExpMode,
    ExpRow,
    attention_head_forward,
    exp_shift,
    pv_int_matmul,
    qk_int_matmul,
    softmax_quantize_row,
)
from .estimators import IntegerAttentionHead, IntegerLinear, LayerNormQuantizer, UniformQuantizer
from .exceptions import AccumulatorOverflowError, BufferOverflowError, ExpUnderflowError, QTFormatError
from .head import HeadWeights, compile_head, head_forward, random_head
from .layernorm import LNQuantSpec, RunningStats, finalize, ln_compare, ln_quantize_row, welford_update
from .linear import IntAccumTensor, LinearPlan, ScaleSink, apply_post_scale, build_plan, equivalence_gap, int_linear
from .quant import (
    QuantParams,
    QuantTensor,
    boundary_refs,
    comparator_quantize,
    dequantize,
    mean_scale,
    quantize,
)
from .reference import ref_attention, ref_layernorm_quantize, ref_linear
from .systolic import (
    AttentionReport,
    BlockStats,
    PEBlock,
    build_deit_s_layout,
    full_report,
    mac_count,
    simulate_head,
)

__version__ = "0.1.0"
