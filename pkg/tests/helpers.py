"""Shared builders for the test suite."""

import numpy as np

from moeplan import HardwareProfile, InferenceScenario, ModelSpec
from moeplan.planner import CostTensors


def toy_model(**overrides) -> ModelSpec:
    base = dict(
        name="toy",
        n_layers=1,
        n_q_heads=2,
        n_kv_heads=2,
        head_dim=4,
        hidden_dim=8,
        n_experts=4,
        n_shared_experts=0,
        top_k=1,
        expert_inter_dim=16,
        dtype_bytes=2,
    )
    base.update(overrides)
    return ModelSpec(**base)


def low_bw_profile(n_devices: int = 4) -> HardwareProfile:
    return HardwareProfile(
        n_devices=n_devices,
        peak_flops=150e12,
        device_mem_bytes=48e9,
        intra_node_bw=25e9,
        host_to_device_bw=12e9,
        link_label="pcie",
    )


def solver_instance(rng: np.random.Generator, k_a: int, k_e: int,
                    quantized: bool = False, inf_fraction: float = 0.0):
    """Random cost tensors plus the (model, scenario) pair solvers need.

    ``quantized`` snaps entries to a coarse grid so exact objective ties
    occur; ``inf_fraction`` marks that share of (k, i) pairs infeasible.
    """
    def draw(shape):
        x = rng.uniform(0.1, 10.0, shape)
        if quantized:
            x = np.round(x * 2) / 2
        return x

    t_c_p = draw((k_a, k_e))
    t_c_d = draw((k_a, k_e))
    if inf_fraction > 0:
        mask = rng.random((k_a, k_e)) < inf_fraction
        t_c_p[mask] = np.inf
        t_c_d[mask] = np.inf
    c = draw((k_e, k_e))
    np.fill_diagonal(c, 0.0)
    tensors = CostTensors(
        t_a_prefill=draw(k_a),
        t_a_decode=draw(k_a),
        t_e_prefill=draw(k_e),
        t_e_decode=draw(k_e),
        t_c_prefill=t_c_p,
        t_c_decode=t_c_d,
        c_switch=c,
    )
    model = toy_model(n_layers=int(rng.integers(1, 40)))
    scenario = InferenceScenario(
        batch=1, input_len=16, output_len=int(rng.integers(0, 300))
    )
    return tensors, model, scenario
