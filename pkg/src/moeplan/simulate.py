"""End-to-end latency assembly for a chosen strategy triple.

total = prefill + decode + transition, with
prefill = n_layers * (attn + experts + comm) over the prefill trio and
decode = output_len * n_layers * (attn + experts + comm) over the decode
trio. Decode steps are homogeneous: one representative step scaled by the
output length.
"""

from dataclasses import dataclass
from math import isfinite
from typing import Dict, List, Sequence, Tuple

from .arch import InferenceScenario, ModelSpec
from .strategies import InfeasibleError


@dataclass(frozen=True)
class LatencyBreakdown:
    total_s: float
    prefill_s: float
    decode_s: float
    prefill_attn_s: float     # per layer
    prefill_experts_s: float  # per layer
    prefill_comm_s: float     # per layer
    decode_attn_s: float      # per layer per step
    decode_experts_s: float   # per layer per step
    decode_comm_s: float      # per layer per step
    transition_s: float

    def stage_shares(self) -> Dict[str, float]:
        """Fraction of total per stage."""
        if self.total_s == 0:
            return {"prefill": 0.0, "decode": 0.0, "transition": 0.0}
        return {
            "prefill": self.prefill_s / self.total_s,
            "decode": self.decode_s / self.total_s,
            "transition": self.transition_s / self.total_s,
        }

    def component_shares(self, stage: str) -> Dict[str, float]:
        """Fraction of one stage's per-layer time per component."""
        if stage == "prefill":
            trio = (self.prefill_attn_s, self.prefill_experts_s, self.prefill_comm_s)
        elif stage == "decode":
            trio = (self.decode_attn_s, self.decode_experts_s, self.decode_comm_s)
        else:
            raise ValueError(f"unknown stage {stage!r}")
        total = sum(trio)
        if total == 0:
            return {"attention": 0.0, "experts": 0.0, "communication": 0.0}
        return {
            "attention": trio[0] / total,
            "experts": trio[1] / total,
            "communication": trio[2] / total,
        }

    def to_dict(self) -> Dict[str, float]:
        return {
            "total_s": self.total_s,
            "prefill_s": self.prefill_s,
            "decode_s": self.decode_s,
            "transition_s": self.transition_s,
            "per_layer_prefill": {
                "attention_s": self.prefill_attn_s,
                "experts_s": self.prefill_experts_s,
                "communication_s": self.prefill_comm_s,
            },
            "per_layer_decode_step": {
                "attention_s": self.decode_attn_s,
                "experts_s": self.decode_experts_s,
                "communication_s": self.decode_comm_s,
            },
            "stage_shares": self.stage_shares(),
        }


def simulate(
    plan_indices: Tuple[int, int, int],
    tensors,
    model: ModelSpec,
    scenario: InferenceScenario,
) -> LatencyBreakdown:
    """Assemble the latency breakdown for (attention k, expert i, expert j)."""
    k, i, j = plan_indices
    if not (0 <= k < tensors.k_a and 0 <= i < tensors.k_e and 0 <= j < tensors.k_e):
        raise IndexError(f"plan indices {plan_indices} outside catalog bounds")
    pa = float(tensors.t_a_prefill[k])
    pe = float(tensors.t_e_prefill[i])
    pc = float(tensors.t_c_prefill[k, i])
    da = float(tensors.t_a_decode[k])
    de = float(tensors.t_e_decode[j])
    dc = float(tensors.t_c_decode[k, j])
    cij = float(tensors.c_switch[i, j])
    for name, v in (("prefill comm", pc), ("decode comm", dc)):
        if not isfinite(v):
            raise InfeasibleError(
                f"plan {plan_indices} selects an infeasible pair ({name} is +inf)"
            )
    prefill = model.n_layers * (pa + pe + pc)
    decode = float(scenario.output_len * model.n_layers) * (da + de + dc)
    total = prefill + decode + cij
    return LatencyBreakdown(
        total_s=total,
        prefill_s=prefill,
        decode_s=decode,
        prefill_attn_s=pa,
        prefill_experts_s=pe,
        prefill_comm_s=pc,
        decode_attn_s=da,
        decode_experts_s=de,
        decode_comm_s=dc,
        transition_s=cij,
    )


@dataclass(frozen=True)
class ComparisonEntry:
    label: str
    indices: Tuple[int, int, int]
    breakdown: LatencyBreakdown


@dataclass(frozen=True)
class ComparisonReport:
    entries: Tuple[ComparisonEntry, ...]

    def speedup(self, of_label: str, over_label: str) -> float:
        by = {e.label: e for e in self.entries}
        return by[over_label].breakdown.total_s / by[of_label].breakdown.total_s

    def speedup_matrix(self) -> List[List[float]]:
        """speedup[a][b] = total_b / total_a (how much faster a is than b)."""
        totals = [e.breakdown.total_s for e in self.entries]
        return [[tb / ta for tb in totals] for ta in totals]

    def to_dict(self) -> Dict:
        labels = [e.label for e in self.entries]
        return {
            "plans": {
                e.label: {
                    "indices": list(e.indices),
                    "breakdown": e.breakdown.to_dict(),
                }
                for e in self.entries
            },
            "speedup_matrix": {"labels": labels, "rows": self.speedup_matrix()},
        }


def compare(
    plans: Sequence[Tuple[str, Tuple[int, int, int]]],
    tensors,
    model: ModelSpec,
    scenario: InferenceScenario,
) -> ComparisonReport:
    """Breakdowns plus pairwise speedups for two or more labelled plans."""
    if len(plans) < 2:
        raise ValueError("compare needs at least 2 plans")
    entries = tuple(
        ComparisonEntry(
            label=label,
            indices=tuple(indices),
            breakdown=simulate(tuple(indices), tensors, model, scenario),
        )
        for label, indices in plans
    )
    labels = [e.label for e in entries]
    if len(set(labels)) != len(labels):
        raise ValueError(f"duplicate plan labels: {labels}")
    return ComparisonReport(entries=entries)


def breakdown_csv_rows(label: str, breakdown: LatencyBreakdown) -> List[List]:
    """One row per component; suitable for external plotting."""
    rows = []
    for stage, attn, exp, comm in (
        ("prefill", breakdown.prefill_attn_s, breakdown.prefill_experts_s, breakdown.prefill_comm_s),
        ("decode", breakdown.decode_attn_s, breakdown.decode_experts_s, breakdown.decode_comm_s),
    ):
        for component, value in (
            ("attention", attn),
            ("experts", exp),
            ("communication", comm),
        ):
            rows.append([label, stage, component, repr(value)])
    rows.append([label, "transition", "switch", repr(breakdown.transition_s)])
    rows.append([label, "total", "total", repr(breakdown.total_s)])
    return rows
