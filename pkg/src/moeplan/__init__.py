"""moeplan: hybrid-parallelism planner and latency simulator for
Mixture-of-Experts LLM inference on a single multi-device node."""

__version__ = "0.1.0"

from .arch import (
    HardwareProfile,
    InferenceScenario,
    MemoryBreakdown,
    ModelSpec,
    attention_flops,
    expert_flops,
    memory_footprint,
)
from .configio import ConfigError, MODEL_PRESETS, load_preset
from .costmodel import (
    CalibrationSample,
    EfficiencyModel,
    LatencyEstimate,
    predict_comm_latency,
    predict_compute_latency,
    synthetic_oracle,
    train_forest,
)
from .planner import (
    CostModels,
    CostTensors,
    Plan,
    PlanOptions,
    PlanResult,
    baseline_indices,
    build_cost_tensors,
    plan,
    solve_bruteforce,
    solve_ilp,
)
from .quant import GroupQuantizedTensor, dequantize, quantize_int4
from .simulate import LatencyBreakdown, compare, simulate
from .strategies import (
    AttentionStrategy,
    ExpertStrategy,
    InfeasibleError,
    StrategyCatalog,
    build_catalog,
    comm_volume,
    enumerate_attention,
    enumerate_expert,
    memory_feasible,
)
from .transition import (
    DequantTimeTable,
    default_dequant_table,
    reshard_volume,
    transition_cost,
)

__all__ = [
    "AttentionStrategy",
    "CalibrationSample",
    "ConfigError",
    "CostModels",
    "CostTensors",
    "DequantTimeTable",
    "EfficiencyModel",
    "ExpertStrategy",
    "GroupQuantizedTensor",
    "HardwareProfile",
    "InfeasibleError",
    "InferenceScenario",
    "LatencyBreakdown",
    "LatencyEstimate",
    "MemoryBreakdown",
    "MODEL_PRESETS",
    "ModelSpec",
    "Plan",
    "PlanOptions",
    "PlanResult",
    "StrategyCatalog",
    "attention_flops",
    "baseline_indices",
    "build_catalog",
    "build_cost_tensors",
    "compare",
    "comm_volume",
    "default_dequant_table",
    "dequantize",
    "enumerate_attention",
    "enumerate_expert",
    "expert_flops",
    "load_preset",
    "memory_feasible",
    "memory_footprint",
    "plan",
    "predict_comm_latency",
    "predict_compute_latency",
    "quantize_int4",
    "reshard_volume",
    "simulate",
    "solve_bruteforce",
    "solve_ilp",
    "synthetic_oracle",
    "train_forest",
    "transition_cost",
]
