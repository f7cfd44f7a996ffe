"""Cost-tensor construction and the strategy-selection solvers.

The objective over one-hot choices (attention k, expert-prefill i,
expert-decode j) is

    n_layers * (ta_p[k] + te_p[i] + tc_p[k,i])
  + output_len * n_layers * (ta_d[k] + te_d[j] + tc_d[k,j])
  + c_switch[i,j]

minimized subject to the per-device memory predicate; infeasible (k, i)
pairs carry +inf in the communication matrices so tensor shapes stay
rectangular. Two solvers are provided: exhaustive evaluation and an
integer program over binary one-hot vectors with the bilinear products
linearized (z_ij >= E_i + F_j - 1, z_ij <= E_i, z_ij <= F_j), solved by
depth-first implicit enumeration with lower-bound pruning. Both return the
same objective and the same argmin under the lexicographic (k, i, j)
tie-break; this equivalence is enforced by the test suite.
"""

import time
from dataclasses import dataclass, field
from math import ceil, isfinite
from typing import Any, Optional, Tuple

import numpy as np

from .arch import (
    DEFAULT_ACT_FACTOR,
    HardwareProfile,
    InferenceScenario,
    ModelSpec,
    attention_flops,
    expert_flops,
    memory_footprint,
)
from .costmodel import EfficiencyModel
from .strategies import (
    STAGE_DECODE,
    STAGE_PREFILL,
    InfeasibleError,
    StrategyCatalog,
    build_catalog,
    comm_volume,
    memory_feasible,
    wire_bytes,
)
from .transition import (
    DequantTimeTable,
    default_dequant_table,
    reshard_volume,
    transition_cost,
)

DEFAULT_GAMMA = 1.3


@dataclass(frozen=True)
class CostModels:
    """Optional fitted efficiency models; missing ones mean pure roofline."""

    eta: Optional[EfficiencyModel] = None
    rho: Optional[EfficiencyModel] = None


@dataclass
class PlanOptions:
    gamma: float = DEFAULT_GAMMA           # EP compute imbalance multiplier
    act_factor: float = DEFAULT_ACT_FACTOR
    allow_expert_dp: bool = False
    literal_eq6: bool = False              # single-layer overlap budget
    cost_models: CostModels = field(default_factory=CostModels)
    dequant_table: Optional[DequantTimeTable] = None
    solver: str = "ilp"                    # ilp | bruteforce

    def __post_init__(self):
        if self.gamma < 1.0:
            raise ValueError(f"gamma must be >= 1, got {self.gamma}")
        if self.solver not in ("ilp", "bruteforce"):
            raise ValueError(f"unknown solver {self.solver!r}")


@dataclass(frozen=True)
class CostTensors:
    """Per-layer latency vectors/matrices feeding the objective.

    Communication matrices may contain +inf (infeasible pairs); everything
    else is finite and non-negative, and the switching matrix has an exactly
    zero diagonal.
    """

    t_a_prefill: np.ndarray   # (K_a,)
    t_a_decode: np.ndarray    # (K_a,)
    t_e_prefill: np.ndarray   # (K_e,)
    t_e_decode: np.ndarray    # (K_e,)
    t_c_prefill: np.ndarray   # (K_a, K_e)
    t_c_decode: np.ndarray    # (K_a, K_e)
    c_switch: np.ndarray      # (K_e, K_e)

    def __post_init__(self):
        k_a = len(self.t_a_prefill)
        k_e = len(self.t_e_prefill)
        shapes = {
            "t_a_decode": (self.t_a_decode, (k_a,)),
            "t_e_decode": (self.t_e_decode, (k_e,)),
            "t_c_prefill": (self.t_c_prefill, (k_a, k_e)),
            "t_c_decode": (self.t_c_decode, (k_a, k_e)),
            "c_switch": (self.c_switch, (k_e, k_e)),
        }
        for name, (arr, want) in shapes.items():
            if arr.shape != want:
                raise ValueError(f"{name} has shape {arr.shape}, expected {want}")
        for name, arr in (
            ("t_a_prefill", self.t_a_prefill),
            ("t_a_decode", self.t_a_decode),
            ("t_e_prefill", self.t_e_prefill),
            ("t_e_decode", self.t_e_decode),
            ("t_c_prefill", self.t_c_prefill),
            ("t_c_decode", self.t_c_decode),
            ("c_switch", self.c_switch),
        ):
            if np.isnan(arr).any() or (arr < 0).any():
                raise ValueError(f"{name} must be non-negative and NaN-free")
        if np.diagonal(self.c_switch).any():
            raise ValueError("c_switch diagonal must be exactly zero")

    @property
    def k_a(self) -> int:
        return len(self.t_a_prefill)

    @property
    def k_e(self) -> int:
        return len(self.t_e_prefill)


@dataclass(frozen=True)
class SolverStats:
    method: str
    nodes_explored: int
    wall_time_s: float


@dataclass(frozen=True)
class Plan:
    attention_idx: int
    expert_prefill_idx: int
    expert_decode_idx: int
    objective_value_s: float
    predicted_total_s: float
    breakdown: Any  # simulate.LatencyBreakdown; typed loosely to avoid a cycle
    solver: SolverStats
    catalog: StrategyCatalog

    @property
    def attention(self):
        return self.catalog.attention[self.attention_idx]

    @property
    def expert_prefill(self):
        return self.catalog.expert[self.expert_prefill_idx]

    @property
    def expert_decode(self):
        return self.catalog.expert[self.expert_decode_idx]

    def indices(self) -> Tuple[int, int, int]:
        return (self.attention_idx, self.expert_prefill_idx, self.expert_decode_idx)


def _eta_features(batch_per_replica: int, seq: int, model: ModelSpec) -> Tuple[float, float, float]:
    return (float(batch_per_replica), float(seq), float(model.hidden_dim))


def _compute_seconds_batch(flops, rows, hw, eta_model) -> np.ndarray:
    """Batched form of predict_compute_latency; identical arithmetic."""
    flops = np.asarray(flops, dtype=np.float64)
    base = flops / hw.peak_flops
    if eta_model is None:
        return base * 1.0
    return base * eta_model.predict_many(np.asarray(rows, dtype=np.float64))


def _comm_seconds_batch(volumes, hw, rho_model) -> np.ndarray:
    """Batched form of predict_comm_latency; identical arithmetic."""
    volumes = np.asarray(volumes, dtype=np.float64)
    out = np.zeros(len(volumes))
    nz = volumes > 0
    if not nz.any():
        return out
    base = volumes[nz] / hw.intra_node_bw
    if rho_model is None:
        out[nz] = base * 1.0
        return out
    rows = np.stack([volumes[nz], np.full(nz.sum(), hw.intra_node_bw)], axis=1)
    out[nz] = base * rho_model.predict_many(rows)
    return out


def build_cost_tensors(
    catalog: StrategyCatalog,
    model: ModelSpec,
    hw: HardwareProfile,
    scenario: InferenceScenario,
    cost_models: Optional[CostModels] = None,
    transition_table: Optional[DequantTimeTable] = None,
    gamma: float = DEFAULT_GAMMA,
    act_factor: float = DEFAULT_ACT_FACTOR,
    literal_eq6: bool = False,
) -> CostTensors:
    """Evaluate every per-layer latency the objective needs.

    Attention FLOPs shard by the TP degree with tokens split over DP
    replicas (ceil split; a replica-starved DP degree simply stops
    helping). Expert FLOPs shard by the full device count, times ``gamma``
    for EP-routed strategies to reflect dispatch imbalance. The decode-step
    KV length is input_len + output_len // 2, a representative mid-stream
    step. The switching matrix evaluates the upload-overlap budget at the
    prefill-minimizing attention choice for each source strategy, which is
    the conservative (smallest-budget-consistent) reading.
    """
    models = cost_models or CostModels()
    table = transition_table or default_dequant_table(max_gpus=max(hw.n_devices, 16))
    n = hw.n_devices
    mem = memory_footprint(model, scenario, act_factor=act_factor)

    k_a, k_e = catalog.k_a, catalog.k_e
    decode_kv = max(1, scenario.input_len + scenario.output_len // 2)
    attn_flops, attn_rows = [], []
    for attn in catalog.attention:
        b_rep = ceil(scenario.batch / attn.dp_degree)
        attn_flops.append(
            attention_flops(model, b_rep * scenario.input_len, scenario.input_len)
            / attn.tp_degree
        )
        attn_rows.append(_eta_features(b_rep, scenario.input_len, model))
        attn_flops.append(attention_flops(model, b_rep, decode_kv) / attn.tp_degree)
        attn_rows.append(_eta_features(b_rep, 1, model))
    attn_seconds = _compute_seconds_batch(attn_flops, attn_rows, hw, models.eta)
    t_a_p, t_a_d = attn_seconds[0::2].copy(), attn_seconds[1::2].copy()

    fl_exp_p = expert_flops(model, scenario.batch * scenario.input_len)
    fl_exp_d = expert_flops(model, scenario.batch)
    exp_flops, exp_rows = [], []
    for exp in catalog.expert:
        imbalance = gamma if exp.ep_degree > 1 else 1.0
        exp_flops.append(fl_exp_p * imbalance / n)
        exp_rows.append(_eta_features(scenario.batch, scenario.input_len, model))
        exp_flops.append(fl_exp_d * imbalance / n)
        exp_rows.append(_eta_features(scenario.batch, 1, model))
    exp_seconds = _compute_seconds_batch(exp_flops, exp_rows, hw, models.eta)
    t_e_p, t_e_d = exp_seconds[0::2].copy(), exp_seconds[1::2].copy()

    t_c_p = np.full((k_a, k_e), np.inf)
    t_c_d = np.full((k_a, k_e), np.inf)
    volumes, targets = [], []  # flattened collectives; targets = (stage_arr, k, i)
    for k, attn in enumerate(catalog.attention):
        for i, exp in enumerate(catalog.expert):
            if not memory_feasible(attn, exp, mem, hw):
                continue
            t_c_p[k, i] = 0.0
            t_c_d[k, i] = 0.0
            for stage, out in ((STAGE_PREFILL, t_c_p), (STAGE_DECODE, t_c_d)):
                spec = comm_volume(attn, exp, model, scenario, stage)
                for c in spec.collectives:
                    volumes.append(wire_bytes(c))
                    targets.append((out, k, i))
    if volumes:
        # accumulated in flattening order, matching a per-cell running sum
        for seconds, (out, k, i) in zip(_comm_seconds_batch(volumes, hw, models.rho), targets):
            out[k, i] += seconds

    reshard_vols = np.zeros((k_e, k_e))
    for i, src in enumerate(catalog.expert):
        for j, dst in enumerate(catalog.expert):
            if i != j:
                reshard_vols[i, j] = float(reshard_volume(src, dst, model))
    reshard_seconds = _comm_seconds_batch(
        reshard_vols.reshape(-1), hw, models.rho
    ).reshape(k_e, k_e)

    c_switch = np.zeros((k_e, k_e))
    for i, src in enumerate(catalog.expert):
        col = t_a_p + t_e_p[i] + t_c_p[:, i]
        best = float(col.min()) if np.isfinite(col).any() else 0.0
        budget = best if isfinite(best) else 0.0
        for j, dst in enumerate(catalog.expert):
            if i == j:
                continue
            c_switch[i, j] = transition_cost(
                src, dst, None, model, hw, budget, table,
                rho_model=models.rho, literal_overlap=literal_eq6,
                reshard_seconds=float(reshard_seconds[i, j]),
            )
    return CostTensors(
        t_a_prefill=t_a_p,
        t_a_decode=t_a_d,
        t_e_prefill=t_e_p,
        t_e_decode=t_e_d,
        t_c_prefill=t_c_p,
        t_c_decode=t_c_d,
        c_switch=c_switch,
    )


def stage_grids(
    tensors: CostTensors, scenario: InferenceScenario, model: ModelSpec
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-stage objective contributions: P[k,i] and D[k,j].

    Infeasible pairs stay +inf in both grids even when output_len is 0
    (0 * inf would otherwise turn them into NaN and corrupt the argmin);
    a plan's decode layout must be loadable whether or not decode runs.
    """
    n_layers = model.n_layers
    prefill = n_layers * (
        tensors.t_a_prefill[:, None] + tensors.t_e_prefill[None, :] + tensors.t_c_prefill
    )
    decode_factor = float(scenario.output_len * n_layers)
    decode_body = (
        tensors.t_a_decode[:, None] + tensors.t_e_decode[None, :] + tensors.t_c_decode
    )
    with np.errstate(invalid="ignore"):
        decode = decode_factor * decode_body
    if decode_factor == 0.0:
        decode = np.where(np.isinf(decode_body), np.inf, decode)
    return prefill, decode


def objective_value(
    indices: Tuple[int, int, int],
    tensors: CostTensors,
    scenario: InferenceScenario,
    model: ModelSpec,
) -> float:
    k, i, j = indices
    if not (
        isfinite(tensors.t_c_prefill[k, i]) and isfinite(tensors.t_c_decode[k, j])
    ):
        return float("inf")
    n_layers = model.n_layers
    prefill = n_layers * (
        tensors.t_a_prefill[k] + tensors.t_e_prefill[i] + tensors.t_c_prefill[k, i]
    )
    decode = float(scenario.output_len * n_layers) * (
        tensors.t_a_decode[k] + tensors.t_e_decode[j] + tensors.t_c_decode[k, j]
    )
    return prefill + decode + tensors.c_switch[i, j]


def _finish_plan(
    indices: Tuple[int, int, int],
    objective: float,
    tensors: CostTensors,
    scenario: InferenceScenario,
    model: ModelSpec,
    catalog: StrategyCatalog,
    stats: SolverStats,
) -> Plan:
    from .simulate import simulate  # local import: simulate depends on CostTensors

    breakdown = simulate(indices, tensors, model, scenario)
    plan = Plan(
        attention_idx=indices[0],
        expert_prefill_idx=indices[1],
        expert_decode_idx=indices[2],
        objective_value_s=objective,
        predicted_total_s=breakdown.total_s,
        breakdown=breakdown,
        solver=stats,
        catalog=catalog,
    )
    rel = abs(breakdown.total_s - objective) / max(abs(objective), 1e-300)
    if rel > 1e-9:
        raise RuntimeError(
            f"internal invariant breach: simulated total {breakdown.total_s} "
            f"!= objective {objective}"
        )
    return plan


def solve_bruteforce(
    tensors: CostTensors,
    scenario: InferenceScenario,
    model: ModelSpec,
    catalog: StrategyCatalog,
) -> Plan:
    """Exhaustive minimization; ties go to the lowest (k, i, j)."""
    start = time.perf_counter()
    prefill, decode = stage_grids(tensors, scenario, model)
    grid = prefill[:, :, None] + decode[:, None, :] + tensors.c_switch[None, :, :]
    flat_idx = int(np.argmin(grid))  # first occurrence = lexicographic winner
    best = float(grid.reshape(-1)[flat_idx])
    if not isfinite(best):
        raise InfeasibleError("every (attention, expert, expert) triple is infeasible")
    k_e = tensors.k_e
    k, rem = divmod(flat_idx, k_e * k_e)
    i, j = divmod(rem, k_e)
    stats = SolverStats(
        method="bruteforce",
        nodes_explored=grid.size,
        wall_time_s=time.perf_counter() - start,
    )
    return _finish_plan((k, i, j), best, tensors, scenario, model, catalog, stats)


@dataclass(frozen=True)
class IlpSolution:
    indices: Tuple[int, int, int]
    objective: float
    nodes_explored: int

    def one_hot(self, k_a: int, k_e: int):
        s = np.zeros(k_a, dtype=int)
        e_p = np.zeros(k_e, dtype=int)
        e_d = np.zeros(k_e, dtype=int)
        k, i, j = self.indices
        s[k], e_p[i], e_d[j] = 1, 1, 1
        z = np.outer(e_p, e_d)
        return s, e_p, e_d, z


def _check_linearization(sol: IlpSolution, k_a: int, k_e: int) -> None:
    s, e_p, e_d, z = sol.one_hot(k_a, k_e)
    if s.sum() != 1 or e_p.sum() != 1 or e_d.sum() != 1:
        raise RuntimeError("internal invariant breach: one-hot constraint violated")
    lhs_lo = e_p[:, None] + e_d[None, :] - 1
    if (z < lhs_lo).any() or (z > e_p[:, None]).any() or (z > e_d[None, :]).any():
        raise RuntimeError("internal invariant breach: z linearization violated")


def _ilp_search(
    prefill: np.ndarray, decode: np.ndarray, c_switch: np.ndarray
) -> IlpSolution:
    """Depth-first implicit enumeration over the one-hot groups.

    Branch order is ascending k, then i; the decode choice j is closed in
    one vectorized bound step. Subtrees are pruned when their lower bound
    cannot strictly beat the incumbent, which preserves the lexicographic
    tie-break because nodes are visited in (k, i, j) order.
    """
    k_a, k_e = prefill.shape
    best_obj = np.inf
    best_idx: Optional[Tuple[int, int, int]] = None
    nodes = 0
    min_pre_per_k = prefill.min(axis=1)
    min_dec_per_k = decode.min(axis=1)
    for k in range(k_a):
        nodes += 1
        if min_pre_per_k[k] + min_dec_per_k[k] >= best_obj:
            continue
        for i in range(k_e):
            nodes += 1
            p = prefill[k, i]
            if p + min_dec_per_k[k] >= best_obj:
                continue
            totals = p + decode[k] + c_switch[i]
            j = int(np.argmin(totals))
            if totals[j] < best_obj:
                best_obj = float(totals[j])
                best_idx = (k, i, j)
    if best_idx is None or not isfinite(best_obj):
        raise InfeasibleError("every (attention, expert, expert) triple is infeasible")
    return IlpSolution(indices=best_idx, objective=best_obj, nodes_explored=nodes)


def solve_ilp(
    tensors: CostTensors,
    scenario: InferenceScenario,
    model: ModelSpec,
    catalog: StrategyCatalog,
) -> Plan:
    """Integer-program solve of the one-hot selection problem."""
    start = time.perf_counter()
    prefill, decode = stage_grids(tensors, scenario, model)
    sol = _ilp_search(prefill, decode, tensors.c_switch)
    _check_linearization(sol, tensors.k_a, tensors.k_e)
    stats = SolverStats(
        method="ilp",
        nodes_explored=sol.nodes_explored,
        wall_time_s=time.perf_counter() - start,
    )
    return _finish_plan(
        sol.indices, sol.objective, tensors, scenario, model, catalog, stats
    )


def baseline_indices(catalog: StrategyCatalog, name: str = "tp") -> Tuple[int, int, int]:
    """Indices of a named reference plan inside the catalog.

    ``tp``: pure tensor parallelism everywhere; ``ep``: pure expert
    parallelism with TP attention; ``dp``: DP attention with pure EP
    experts.
    """
    def attn_idx(pred, what):
        for k, a in enumerate(catalog.attention):
            if pred(a):
                return k
        raise InfeasibleError(f"no {what} attention strategy in catalog")

    def exp_idx(pred, what):
        for i, e in enumerate(catalog.expert):
            if pred(e):
                return i
        raise InfeasibleError(f"no {what} expert strategy in catalog")

    if name == "tp":
        k = attn_idx(lambda a: a.dp_degree == 1, "pure-TP")
        i = exp_idx(lambda e: e.ep_degree == 1 and e.dp_degree == 1, "pure-TP")
        return (k, i, i)
    if name == "ep":
        k = attn_idx(lambda a: a.dp_degree == 1, "pure-TP")
        i = exp_idx(lambda e: e.tp_degree == 1 and e.dp_degree == 1, "pure-EP")
        return (k, i, i)
    if name == "dp":
        k = attn_idx(lambda a: a.tp_degree == 1, "pure-DP")
        i = exp_idx(lambda e: e.tp_degree == 1 and e.dp_degree == 1, "pure-EP")
        return (k, i, i)
    raise ValueError(f"unknown baseline {name!r}")


@dataclass(frozen=True)
class PlanResult:
    plan: Plan
    tensors: CostTensors
    catalog: StrategyCatalog


def plan(
    model: ModelSpec,
    hw: HardwareProfile,
    scenario: InferenceScenario,
    options: Optional[PlanOptions] = None,
) -> PlanResult:
    """End-to-end pipeline: enumerate, filter, cost, solve, simulate."""
    opts = options or PlanOptions()
    catalog = build_catalog(model, hw, allow_expert_dp=opts.allow_expert_dp)
    tensors = build_cost_tensors(
        catalog,
        model,
        hw,
        scenario,
        cost_models=opts.cost_models,
        transition_table=opts.dequant_table,
        gamma=opts.gamma,
        act_factor=opts.act_factor,
        literal_eq6=opts.literal_eq6,
    )
    solver = solve_ilp if opts.solver == "ilp" else solve_bruteforce
    selected = solver(tensors, scenario, model, catalog)
    return PlanResult(plan=selected, tensors=tensors, catalog=catalog)
