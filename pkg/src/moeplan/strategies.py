"""Parallel-strategy enumeration, memory feasibility, and per-layer
communication volumes.

Attention runs under DP x TP (``tp * dp == n_devices``); the Expert module
runs under EP x TP, with DP variants admitted only behind an explicit flag
and never combined with EP. TP degrees are powers of two and must divide
the sharded dimension (query/KV heads for attention, expert intermediate
size for experts); EP degrees must divide the expert count.

Communication-volume table (per layer; t = tokens in the stage, i.e.
batch * input_len for prefill and batch for decode; w = t * hidden *
dtype_bytes; volumes are logical tensor sizes, converted to wire bytes by
``wire_bytes``):

  attention, tp > 1          one AllReduce of w / attention_dp
                             (each DP replica reduces only its token share)
  attention, tp == 1         nothing (DP has no per-layer collective)
  boundary (dp mismatch)     AllGather of w + ReduceScatter of w across all
                             devices, charged when attention DP shards the
                             tokens (attention_dp > 1, != expert_dp) and
                             the expert strategy is TP-only, so no EP
                             dispatch exists to carry them (a pure-DP
                             expert replica set needs no reshard either).
                             The pair subsumes the expert AllReduce below:
                             the trailing ReduceScatter completes the
                             partial-sum reduction, exactly as in
                             sequence-parallel TP blocks, so the AllReduce
                             row is not charged on top of it
  expert, tp > 1, ep == 1    one AllReduce of w / expert_dp (absent when
                             the boundary pair above is charged)
  expert, ep > 1, tp == 1    dispatch + combine All-to-All, top_k * w each
  expert, ep > 1, tp > 1     the All-to-All pair across EP groups plus an
                             AllReduce of w inside each TP group
  shared experts             replicated under EP, sharded under TP; their
                             tokens never enter the All-to-All volume

Wire conversion per collective over a group of g participants with logical
volume X: AllReduce moves 2*X*(g-1)/g per device, AllGather/ReduceScatter
X*(g-1)/g, and All-to-All X*(g-1)/g^2 (the payload starts evenly sharded).
"""

from dataclasses import dataclass
from typing import List, Tuple

from .arch import HardwareProfile, InferenceScenario, MemoryBreakdown, ModelSpec

STAGE_PREFILL = "prefill"
STAGE_DECODE = "decode"

ALLREDUCE = "allreduce"
ALL_TO_ALL = "all_to_all"
ALLGATHER = "allgather"
NONE = "none"


class InfeasibleError(RuntimeError):
    """No strategy (or plan) satisfies the stated constraints."""


def _is_pow2(x: int) -> bool:
    return x >= 1 and (x & (x - 1)) == 0


@dataclass(frozen=True)
class AttentionStrategy:
    tp_degree: int
    dp_degree: int

    def validate(self, model: ModelSpec, n_devices: int) -> List[str]:
        problems = []
        if self.tp_degree * self.dp_degree != n_devices:
            problems.append(
                f"tp*dp = {self.tp_degree}*{self.dp_degree} != n_devices {n_devices}"
            )
        if not _is_pow2(self.tp_degree):
            problems.append(f"tp_degree {self.tp_degree} is not a power of two")
        if model.n_q_heads % self.tp_degree != 0:
            problems.append(f"tp_degree {self.tp_degree} does not divide n_q_heads {model.n_q_heads}")
        if model.n_kv_heads % self.tp_degree != 0:
            problems.append(f"tp_degree {self.tp_degree} does not divide n_kv_heads {model.n_kv_heads}")
        return problems

    def label(self) -> str:
        return f"attn(tp={self.tp_degree},dp={self.dp_degree})"


@dataclass(frozen=True)
class ExpertStrategy:
    tp_degree: int
    ep_degree: int
    dp_degree: int = 1

    def validate(self, model: ModelSpec, n_devices: int) -> List[str]:
        problems = []
        if self.dp_degree * self.tp_degree * self.ep_degree != n_devices:
            problems.append(
                f"dp*tp*ep = {self.dp_degree}*{self.tp_degree}*{self.ep_degree}"
                f" != n_devices {n_devices}"
            )
        if not _is_pow2(self.tp_degree):
            problems.append(f"tp_degree {self.tp_degree} is not a power of two")
        if model.n_experts % self.ep_degree != 0:
            problems.append(f"ep_degree {self.ep_degree} does not divide n_experts {model.n_experts}")
        if model.expert_inter_dim % self.tp_degree != 0:
            problems.append(
                f"tp_degree {self.tp_degree} does not divide expert_inter_dim {model.expert_inter_dim}"
            )
        if self.dp_degree > 1 and self.ep_degree > 1:
            problems.append("DP and EP may not be combined for the expert module")
        return problems

    def label(self) -> str:
        if self.dp_degree > 1:
            return f"exp(tp={self.tp_degree},ep={self.ep_degree},dp={self.dp_degree})"
        return f"exp(tp={self.tp_degree},ep={self.ep_degree})"


@dataclass(frozen=True)
class StrategyCatalog:
    attention: Tuple[AttentionStrategy, ...]
    expert: Tuple[ExpertStrategy, ...]

    @property
    def k_a(self) -> int:
        return len(self.attention)

    @property
    def k_e(self) -> int:
        return len(self.expert)


def _pow2_divisors(n: int) -> List[int]:
    out = []
    p = 1
    while p <= n:
        if n % p == 0:
            out.append(p)
        p *= 2
    return out


def enumerate_attention(model: ModelSpec, hw: HardwareProfile) -> List[AttentionStrategy]:
    """All feasible (tp, dp) splits of the attention module, sorted by tp."""
    n = hw.n_devices
    found, rejected = [], []
    for tp in _pow2_divisors(n):
        cand = AttentionStrategy(tp_degree=tp, dp_degree=n // tp)
        problems = cand.validate(model, n)
        if problems:
            rejected.append(f"{cand.label()}: " + "; ".join(problems))
        else:
            found.append(cand)
    if not found:
        raise InfeasibleError(
            f"no attention strategy for n_devices={n}: " + " | ".join(rejected)
        )
    found.sort(key=lambda a: (a.tp_degree, a.dp_degree))
    return found


def enumerate_expert(
    model: ModelSpec, hw: HardwareProfile, allow_dp: bool = False
) -> List[ExpertStrategy]:
    """All feasible expert splits, sorted by (tp, ep, dp).

    EP x TP combinations cover the device set; DP x TP variants (no EP)
    appear only when ``allow_dp`` is set. Three-way DP x EP x TP is never
    emitted.
    """
    n = hw.n_devices
    found, rejected = [], []
    for tp in _pow2_divisors(n):
        cand = ExpertStrategy(tp_degree=tp, ep_degree=n // tp, dp_degree=1)
        problems = cand.validate(model, n)
        if problems:
            rejected.append(f"{cand.label()}: " + "; ".join(problems))
        else:
            found.append(cand)
    if allow_dp:
        for tp in _pow2_divisors(n):
            dp = n // tp
            if dp <= 1:
                continue  # dp == 1 already covered by the EP x TP sweep
            cand = ExpertStrategy(tp_degree=tp, ep_degree=1, dp_degree=dp)
            problems = cand.validate(model, n)
            if problems:
                rejected.append(f"{cand.label()}: " + "; ".join(problems))
            else:
                found.append(cand)
    if not found:
        raise InfeasibleError(
            f"no expert strategy for n_devices={n}: " + " | ".join(rejected)
        )
    found.sort(key=lambda e: (e.tp_degree, e.ep_degree, e.dp_degree))
    return found


def build_catalog(
    model: ModelSpec, hw: HardwareProfile, allow_expert_dp: bool = False
) -> StrategyCatalog:
    return StrategyCatalog(
        attention=tuple(enumerate_attention(model, hw)),
        expert=tuple(enumerate_expert(model, hw, allow_dp=allow_expert_dp)),
    )


def memory_feasible(
    attn: AttentionStrategy,
    exp: ExpertStrategy,
    mem: MemoryBreakdown,
    hw: HardwareProfile,
) -> bool:
    """Per-device memory predicate.

    (kv + attn_dp * attn_weights + expert_dp * expert_weights) / n_devices
    + 2 * activations < device capacity. The doubled activation term is a
    conservative bound on the uneven per-device activation footprint EP
    dispatch can produce.
    """
    n = hw.n_devices
    if attn.tp_degree * attn.dp_degree != n:
        raise ValueError(f"{attn.label()} does not cover n_devices={n}")
    if exp.dp_degree * exp.tp_degree * exp.ep_degree != n:
        raise ValueError(f"{exp.label()} does not cover n_devices={n}")
    per_device = (
        mem.kv_bytes
        + attn.dp_degree * mem.attn_weight_bytes
        + exp.dp_degree * mem.expert_weight_bytes
    ) / n
    return per_device + 2 * mem.activation_bytes < hw.device_mem_bytes


@dataclass(frozen=True)
class Collective:
    kind: str            # allreduce | all_to_all | allgather | none
    tensor_bytes: float  # logical payload size
    group_size: int      # participants
    side: str            # attention | boundary | expert

    def __post_init__(self):
        if self.kind not in (ALLREDUCE, ALL_TO_ALL, ALLGATHER, NONE):
            raise ValueError(f"unknown collective kind {self.kind!r}")
        if self.tensor_bytes < 0:
            raise ValueError(f"tensor_bytes must be >= 0, got {self.tensor_bytes!r}")
        if self.group_size < 1:
            raise ValueError(f"group_size must be >= 1, got {self.group_size!r}")


@dataclass(frozen=True)
class CommVolumeSpec:
    stage: str
    collectives: Tuple[Collective, ...]

    def side_bytes(self, side: str) -> float:
        return sum(c.tensor_bytes for c in self.collectives if c.side == side)

    @property
    def attention_bytes(self) -> float:
        return self.side_bytes("attention")

    @property
    def expert_bytes(self) -> float:
        return self.side_bytes("expert") + self.side_bytes("boundary")

    @property
    def total_tensor_bytes(self) -> float:
        return sum(c.tensor_bytes for c in self.collectives)

    @property
    def total_wire_bytes(self) -> float:
        return sum(wire_bytes(c) for c in self.collectives)


def wire_bytes(c: Collective) -> float:
    """Per-device bytes actually crossing links for one collective."""
    g = c.group_size
    if g <= 1 or c.tensor_bytes == 0 or c.kind == NONE:
        return 0.0
    if c.kind == ALLREDUCE:
        return 2.0 * c.tensor_bytes * (g - 1) / g
    if c.kind == ALLGATHER:
        return c.tensor_bytes * (g - 1) / g
    if c.kind == ALL_TO_ALL:
        return c.tensor_bytes * (g - 1) / (g * g)
    raise ValueError(f"unknown collective kind {c.kind!r}")


def stage_tokens(scenario: InferenceScenario, stage: str) -> int:
    if stage == STAGE_PREFILL:
        return scenario.batch * scenario.input_len
    if stage == STAGE_DECODE:
        return scenario.batch
    raise ValueError(f"unknown stage {stage!r}")


def comm_volume(
    attn: AttentionStrategy,
    exp: ExpertStrategy,
    model: ModelSpec,
    scenario: InferenceScenario,
    stage: str,
) -> CommVolumeSpec:
    """Per-layer collectives for one (attention, expert, stage) choice,
    following the module-level volume table."""
    n = attn.tp_degree * attn.dp_degree
    if exp.dp_degree * exp.tp_degree * exp.ep_degree != n:
        raise ValueError(
            f"strategies cover different device counts: {attn.label()} vs {exp.label()}"
        )
    t = stage_tokens(scenario, stage)
    w = float(t * model.hidden_dim * model.dtype_bytes)
    cols: List[Collective] = []

    if attn.tp_degree > 1:
        cols.append(
            Collective(
                kind=ALLREDUCE,
                tensor_bytes=w / attn.dp_degree,
                group_size=attn.tp_degree,
                side="attention",
            )
        )

    needs_boundary = (
        attn.dp_degree > 1
        and exp.ep_degree == 1
        and exp.tp_degree > 1
        and attn.dp_degree != exp.dp_degree
    )
    if needs_boundary:
        cols.append(Collective(kind=ALLGATHER, tensor_bytes=w, group_size=n, side="boundary"))
        cols.append(Collective(kind=ALLGATHER, tensor_bytes=w, group_size=n, side="boundary"))

    w_exp = w / exp.dp_degree
    if exp.ep_degree > 1:
        a2a = model.top_k * w_exp
        cols.append(Collective(kind=ALL_TO_ALL, tensor_bytes=a2a, group_size=exp.ep_degree, side="expert"))
        cols.append(Collective(kind=ALL_TO_ALL, tensor_bytes=a2a, group_size=exp.ep_degree, side="expert"))
        if exp.tp_degree > 1:
            cols.append(Collective(kind=ALLREDUCE, tensor_bytes=w_exp, group_size=exp.tp_degree, side="expert"))
    elif exp.tp_degree > 1 and not needs_boundary:
        cols.append(Collective(kind=ALLREDUCE, tensor_bytes=w_exp, group_size=exp.tp_degree, side="expert"))

    return CommVolumeSpec(stage=stage, collectives=tuple(cols))
