"""Cost of switching the expert module's parallel layout between prefill
and decode.

Two mechanisms compete and the cheaper one is charged:

  1. Reshard: redistribute live expert weight shards over the interconnect.
     The per-device volume is the part of the device's new shard it does
     not already hold under the old layout, derived from the shard
     ownership maps of both layouts.
  2. Quantized backup: upload an INT4 copy of the new shard from host
     memory and dequantize on device. The upload/dequant can overlap with
     prefill compute, so only the excess over the overlap budget counts.

cost = min(reshard_time, max(0, upload_time + dequant_time - overlap)).
Identical layouts cost exactly zero. Dequant time comes from a lookup
table keyed by (device count, parameter-count bucket); buckets are powers
of two and lookups round up to the covering bucket.
"""

import csv
from dataclasses import dataclass
from fractions import Fraction
from math import gcd
from typing import Dict, Optional, Set, Tuple

from .arch import HardwareProfile, ModelSpec
from .costmodel import EfficiencyModel, predict_comm_latency
from .quant import DEFAULT_GROUP_SIZE, int4_backup_bytes
from .strategies import AttentionStrategy, ExpertStrategy


class DequantTableMiss(KeyError):
    """Lookup outside the table's declared domain; names the missing bucket."""


DEFAULT_DEQUANT_RATE = 20e9  # dequantized parameters per second per device


def _ceil_pow2(x: int) -> int:
    p = 1
    while p < x:
        p *= 2
    return p


@dataclass(frozen=True)
class DequantTimeTable:
    """Map (n_gpus, v_dequant bucket) -> seconds; total on its domain and
    monotone in the bucket size within each n_gpus row."""

    entries: Dict[Tuple[int, int], float]

    def __post_init__(self):
        rows: Dict[int, list] = {}
        for (n_gpus, bucket), seconds in self.entries.items():
            if n_gpus < 1 or bucket < 1 or seconds < 0:
                raise ValueError(f"bad table entry ({n_gpus}, {bucket}) -> {seconds}")
            if bucket & (bucket - 1):
                raise ValueError(f"bucket {bucket} is not a power of two")
            rows.setdefault(n_gpus, []).append((bucket, seconds))
        for n_gpus, row in rows.items():
            row.sort()
            for (b0, s0), (b1, s1) in zip(row, row[1:]):
                if s1 < s0:
                    raise ValueError(
                        f"table not monotone for n_gpus={n_gpus}: "
                        f"bucket {b1} -> {s1} < bucket {b0} -> {s0}"
                    )

    def lookup(self, n_gpus: int, v_dequant: int) -> float:
        """Seconds to dequantize ``v_dequant`` parameters per device."""
        if v_dequant == 0:
            return 0.0
        bucket = _ceil_pow2(v_dequant)
        key = (n_gpus, bucket)
        if key not in self.entries:
            raise DequantTableMiss(
                f"no entry for n_gpus={n_gpus}, bucket={bucket} "
                f"(v_dequant={v_dequant})"
            )
        return self.entries[key]


def default_dequant_table(
    max_gpus: int = 16,
    min_bucket_log2: int = 10,
    max_bucket_log2: int = 40,
    rate: float = DEFAULT_DEQUANT_RATE,
) -> DequantTimeTable:
    """Synthetic table, linear in the bucketed parameter count."""
    entries = {}
    n = 1
    while n <= max_gpus:
        for lg in range(min_bucket_log2, max_bucket_log2 + 1):
            entries[(n, 1 << lg)] = float(1 << lg) / rate
        n *= 2
    return DequantTimeTable(entries=entries)


def table_to_csv(table: DequantTimeTable, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n_gpus", "v_dequant", "seconds"])
        for (n_gpus, bucket), seconds in sorted(table.entries.items()):
            writer.writerow([n_gpus, bucket, repr(seconds)])


def table_from_csv(path: str) -> DequantTimeTable:
    entries = {}
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["n_gpus", "v_dequant", "seconds"]:
            raise ValueError(f"{path}: expected header n_gpus,v_dequant,seconds")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 columns")
            try:
                entries[(int(row[0]), int(row[1]))] = float(row[2])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return DequantTimeTable(entries=entries)


def _ownership(
    exp: ExpertStrategy, device: int, n_experts: int, n_shared: int, n_slices: int
) -> Set[Tuple[int, int]]:
    """Slices of expert units held by ``device`` under layout ``exp``.

    Units 0..n_experts-1 are routed experts, n_experts..n_experts+n_shared-1
    the shared ones; each unit is cut into ``n_slices`` equal TP slices.
    Devices are ranked dp-major, then ep group, then tp rank. Shared units
    are replicated across EP groups and sharded only by TP.
    """
    per_replica = exp.tp_degree * exp.ep_degree
    within = device % per_replica
    ep_group, tp_rank = divmod(within, exp.tp_degree)
    span = n_slices // exp.tp_degree
    slices = range(tp_rank * span, (tp_rank + 1) * span)
    experts_per_group = n_experts // exp.ep_degree
    owned = set()
    for e in range(ep_group * experts_per_group, (ep_group + 1) * experts_per_group):
        for s in slices:
            owned.add((e, s))
    for shared in range(n_experts, n_experts + n_shared):
        for s in slices:
            owned.add((shared, s))
    return owned


def reshard_volume(i: ExpertStrategy, j: ExpertStrategy, model: ModelSpec) -> int:
    """Per-device bytes a layout change must move over the interconnect.

    Worst device's target-shard bytes not already resident under the source
    layout; 0 when the layouts coincide.
    """
    if i == j:
        return 0
    n_i = i.dp_degree * i.tp_degree * i.ep_degree
    n_j = j.dp_degree * j.tp_degree * j.ep_degree
    if n_i != n_j:
        raise ValueError(f"layouts cover different device counts: {n_i} vs {n_j}")
    n = n_i
    n_slices = i.tp_degree * j.tp_degree // gcd(i.tp_degree, j.tp_degree)
    unit_bytes = Fraction(
        model.n_layers * 3 * model.hidden_dim * model.expert_inter_dim * model.dtype_bytes
    )
    slice_bytes = unit_bytes / n_slices
    worst = Fraction(0)
    for device in range(n):
        src = _ownership(i, device, model.n_experts, model.n_shared_experts, n_slices)
        dst = _ownership(j, device, model.n_experts, model.n_shared_experts, n_slices)
        missing = len(dst - src)
        worst = max(worst, missing * slice_bytes)
    return int(worst)


@dataclass(frozen=True)
class TransitionTimings:
    t_upload: float
    t_dequant: float
    t_reshard: float
    overlap_budget: float

    def __post_init__(self):
        for name, v in (
            ("t_upload", self.t_upload),
            ("t_dequant", self.t_dequant),
            ("t_reshard", self.t_reshard),
            ("overlap_budget", self.overlap_budget),
        ):
            if v < 0:
                raise ValueError(f"{name} must be >= 0, got {v}")

    def cost(self) -> float:
        hidden = max(0.0, self.t_upload + self.t_dequant - self.overlap_budget)
        return min(self.t_reshard, hidden)


def compute_transition_timings(
    i: ExpertStrategy,
    j: ExpertStrategy,
    model: ModelSpec,
    hw: HardwareProfile,
    per_layer_prefill_s: float,
    table: DequantTimeTable,
    rho_model: Optional[EfficiencyModel] = None,
    literal_overlap: bool = False,
    group_size: int = DEFAULT_GROUP_SIZE,
    reshard_seconds: Optional[float] = None,
) -> TransitionTimings:
    """Timing components of an i -> j expert layout switch.

    The upload covers the device's full new shard (all layers) in INT4
    packed form; by default the overlap budget is the whole prefill
    (n_layers * per-layer), ``literal_overlap`` restricts it to a single
    layer's prefill latency. ``reshard_seconds`` lets callers supply an
    already-predicted reshard time (e.g. from a batched prediction).
    """
    if per_layer_prefill_s < 0:
        raise ValueError(f"per_layer_prefill_s must be >= 0, got {per_layer_prefill_s}")
    n = hw.n_devices
    if reshard_seconds is None:
        reshard_seconds = predict_comm_latency(
            float(reshard_volume(i, j, model)), hw, rho_model
        ).seconds
    params_per_device = model.total_expert_params * j.dp_degree // n
    upload = int4_backup_bytes(params_per_device, group_size) / hw.host_to_device_bw
    dequant = table.lookup(n, params_per_device)
    budget = per_layer_prefill_s if literal_overlap else model.n_layers * per_layer_prefill_s
    return TransitionTimings(
        t_upload=upload,
        t_dequant=dequant,
        t_reshard=reshard_seconds,
        overlap_budget=budget,
    )


def transition_cost(
    i: ExpertStrategy,
    j: ExpertStrategy,
    attn: Optional[AttentionStrategy],
    model: ModelSpec,
    hw: HardwareProfile,
    per_layer_prefill_s: float,
    table: DequantTimeTable,
    rho_model: Optional[EfficiencyModel] = None,
    literal_overlap: bool = False,
    reshard_seconds: Optional[float] = None,
) -> float:
    """Seconds charged for switching the expert layout from i to j.

    ``attn`` is accepted for interface symmetry with the planner (the
    overlap budget already reflects the chosen attention strategy through
    ``per_layer_prefill_s``).
    """
    del attn
    if i == j:
        return 0.0
    timings = compute_transition_timings(
        i, j, model, hw, per_layer_prefill_s, table,
        rho_model=rho_model, literal_overlap=literal_overlap,
        reshard_seconds=reshard_seconds,
    )
    return timings.cost()
