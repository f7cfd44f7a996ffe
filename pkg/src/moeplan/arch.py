"""MoE model / hardware / workload descriptions and the deterministic
FLOPs and memory calculators everything else is built on.

All types are immutable after construction and all calculators are pure
functions, so they are safe to share across threads. FLOP counts are exact
Python integers (arbitrary precision, no overflow).
"""

from dataclasses import dataclass


class SpecError(ValueError):
    """Raised when a model/hardware/scenario description is inconsistent."""


@dataclass(frozen=True)
class ModelSpec:
    """Architecture parameters of one MoE transformer model.

    ``expert_inter_dim`` is the intermediate size of a single expert MLP.
    Shared experts (Qwen-style) are expressed in units of that size via
    ``n_shared_experts``; a model with one wide always-on expert of
    4x the routed intermediate size sets ``n_shared_experts = 4``.
    """

    name: str
    n_layers: int
    n_q_heads: int
    n_kv_heads: int
    head_dim: int
    hidden_dim: int
    n_experts: int
    n_shared_experts: int
    top_k: int
    expert_inter_dim: int
    dtype_bytes: int

    def __post_init__(self):
        positive = (
            ("n_layers", self.n_layers),
            ("n_q_heads", self.n_q_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("head_dim", self.head_dim),
            ("hidden_dim", self.hidden_dim),
            ("n_experts", self.n_experts),
            ("top_k", self.top_k),
            ("expert_inter_dim", self.expert_inter_dim),
            ("dtype_bytes", self.dtype_bytes),
        )
        for field, value in positive:
            if not isinstance(value, int) or value < 1:
                raise SpecError(f"{field} must be a positive integer, got {value!r}")
        if not isinstance(self.n_shared_experts, int) or self.n_shared_experts < 0:
            raise SpecError(
                f"n_shared_experts must be a non-negative integer, got {self.n_shared_experts!r}"
            )
        if self.n_q_heads * self.head_dim != self.hidden_dim:
            raise SpecError(
                f"n_q_heads * head_dim must equal hidden_dim "
                f"({self.n_q_heads} * {self.head_dim} != {self.hidden_dim})"
            )
        if self.n_q_heads % self.n_kv_heads != 0:
            raise SpecError(
                f"n_kv_heads ({self.n_kv_heads}) must divide n_q_heads ({self.n_q_heads})"
            )
        if self.top_k > self.n_experts:
            raise SpecError(f"top_k ({self.top_k}) exceeds n_experts ({self.n_experts})")

    @property
    def kv_dim(self) -> int:
        return self.n_kv_heads * self.head_dim

    @property
    def total_expert_params(self) -> int:
        """Expert MLP parameters across all layers, routed + shared."""
        per_unit = 3 * self.hidden_dim * self.expert_inter_dim
        return self.n_layers * (self.n_experts + self.n_shared_experts) * per_unit


@dataclass(frozen=True)
class HardwareProfile:
    """A single node of identical accelerators with a flat interconnect."""

    n_devices: int
    peak_flops: float          # FLOP/s per device
    device_mem_bytes: float    # per-device memory capacity
    intra_node_bw: float       # bytes/s device-to-device
    host_to_device_bw: float   # bytes/s CPU-to-device upload
    link_label: str = "pcie"

    def __post_init__(self):
        if not isinstance(self.n_devices, int) or self.n_devices < 1:
            raise SpecError(f"n_devices must be a positive integer, got {self.n_devices!r}")
        for field, value in (
            ("peak_flops", self.peak_flops),
            ("device_mem_bytes", self.device_mem_bytes),
            ("intra_node_bw", self.intra_node_bw),
            ("host_to_device_bw", self.host_to_device_bw),
        ):
            if not value > 0:
                raise SpecError(f"{field} must be > 0, got {value!r}")


@dataclass(frozen=True)
class InferenceScenario:
    """One serving workload: batch of prompts plus generation length."""

    batch: int
    input_len: int
    output_len: int

    def __post_init__(self):
        if not isinstance(self.batch, int) or self.batch < 1:
            raise SpecError(f"batch must be >= 1, got {self.batch!r}")
        if not isinstance(self.input_len, int) or self.input_len < 1:
            raise SpecError(f"input_len must be >= 1, got {self.input_len!r}")
        if not isinstance(self.output_len, int) or self.output_len < 0:
            raise SpecError(f"output_len must be >= 0, got {self.output_len!r}")


@dataclass(frozen=True)
class MemoryBreakdown:
    """Whole-model memory totals in bytes; per-device division happens in
    the feasibility predicate, not here."""

    kv_bytes: int
    attn_weight_bytes: int
    expert_weight_bytes: int
    activation_bytes: int

    def __post_init__(self):
        for field, value in (
            ("kv_bytes", self.kv_bytes),
            ("attn_weight_bytes", self.attn_weight_bytes),
            ("expert_weight_bytes", self.expert_weight_bytes),
            ("activation_bytes", self.activation_bytes),
        ):
            if value < 0:
                raise SpecError(f"{field} must be >= 0, got {value!r}")


DEFAULT_ACT_FACTOR = 4


def attention_flops(model: ModelSpec, n_tokens: int, kv_len: int) -> int:
    """Per-layer attention FLOPs for ``n_tokens`` new tokens attending over
    ``kv_len`` cached positions.

    Counts QKV and output projections at 2 FLOPs per multiply-add plus the
    score (Q.K^T) and value (P.V) batched matmuls. GQA shrinks only the K/V
    projections; the score/value work is governed by the query heads.
    """
    if not isinstance(n_tokens, int) or n_tokens < 1:
        raise SpecError(f"n_tokens must be >= 1, got {n_tokens!r}")
    if not isinstance(kv_len, int) or kv_len < 1:
        raise SpecError(f"kv_len must be >= 1, got {kv_len!r}")
    d = model.hidden_dim
    kv = model.kv_dim
    proj_macs_per_token = 2 * d * d + 2 * d * kv  # Q + O, K + V
    proj = 2 * n_tokens * proj_macs_per_token
    score_and_value = 2 * n_tokens * kv_len * d * 2
    return proj + score_and_value


def expert_flops(model: ModelSpec, n_tokens: int) -> int:
    """Per-layer expert-module FLOPs for ``n_tokens`` tokens.

    Each activated expert (top_k routed plus any shared) runs a gated MLP of
    three matmuls (gate/up/down), each hidden_dim x expert_inter_dim. The
    router matmul over all experts is included for completeness even though
    it is negligible.
    """
    if not isinstance(n_tokens, int) or n_tokens < 1:
        raise SpecError(f"n_tokens must be >= 1, got {n_tokens!r}")
    active = model.top_k + model.n_shared_experts
    mlp = active * n_tokens * 3 * 2 * model.hidden_dim * model.expert_inter_dim
    router = 2 * n_tokens * model.hidden_dim * model.n_experts
    return mlp + router


def memory_footprint(
    model: ModelSpec,
    scenario: InferenceScenario,
    act_factor: float = DEFAULT_ACT_FACTOR,
) -> MemoryBreakdown:
    """Whole-model memory totals for one scenario.

    KV cache is sized for the full input+output horizon. ``act_factor``
    covers residual/intermediate activation buffers as a multiple of one
    hidden-state tensor of the prompt. Embedding and LM-head weights are
    deliberately not counted.
    """
    seq = scenario.input_len + scenario.output_len
    kv = (
        2
        * model.n_layers
        * scenario.batch
        * seq
        * model.kv_dim
        * model.dtype_bytes
    )
    attn_w = (
        model.n_layers
        * (2 * model.hidden_dim * model.hidden_dim + 2 * model.hidden_dim * model.kv_dim)
        * model.dtype_bytes
    )
    exp_w = model.total_expert_params * model.dtype_bytes
    act = int(
        scenario.batch * scenario.input_len * model.hidden_dim * model.dtype_bytes * act_factor
    )
    return MemoryBreakdown(
        kv_bytes=kv,
        attn_weight_bytes=attn_w,
        expert_weight_bytes=exp_w,
        activation_bytes=act,
    )
