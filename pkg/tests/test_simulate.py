import numpy as np
import pytest

from moeplan import (
    InferenceScenario,
    InfeasibleError,
    baseline_indices,
    compare,
    load_preset,
    plan,
    simulate,
)
from moeplan.planner import CostTensors, objective_value
from moeplan.simulate import breakdown_csv_rows

from helpers import low_bw_profile, solver_instance, toy_model


def unit_tensors(k_a=1, k_e=1, switch=0.5):
    c = np.full((k_e, k_e), switch)
    np.fill_diagonal(c, 0.0)
    return CostTensors(
        t_a_prefill=np.ones(k_a), t_a_decode=np.ones(k_a),
        t_e_prefill=np.ones(k_e), t_e_decode=np.ones(k_e),
        t_c_prefill=np.ones((k_a, k_e)), t_c_decode=np.ones((k_a, k_e)),
        c_switch=c,
    )


class TestSimulate:
    def test_zero_output_len(self):
        tensors = unit_tensors(k_e=2)
        model = toy_model(n_layers=3)
        scenario = InferenceScenario(batch=1, input_len=8, output_len=0)
        bd = simulate((0, 0, 1), tensors, model, scenario)
        assert bd.decode_s == 0.0
        assert bd.total_s == bd.prefill_s + bd.transition_s

    def test_single_layer_unit_trios(self):
        tensors = unit_tensors(k_e=2, switch=0.25)
        model = toy_model(n_layers=1)
        scenario = InferenceScenario(batch=1, input_len=8, output_len=7)
        bd = simulate((0, 0, 1), tensors, model, scenario)
        assert bd.total_s == pytest.approx((1 + 7) * 3 + 0.25)

    def test_additivity_invariants(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            tensors, model, scenario = solver_instance(
                rng, int(rng.integers(1, 5)), int(rng.integers(1, 5))
            )
            k = int(rng.integers(0, tensors.k_a))
            i = int(rng.integers(0, tensors.k_e))
            j = int(rng.integers(0, tensors.k_e))
            bd = simulate((k, i, j), tensors, model, scenario)
            assert bd.total_s == pytest.approx(
                bd.prefill_s + bd.decode_s + bd.transition_s, rel=1e-9
            )
            assert bd.prefill_s == pytest.approx(
                model.n_layers * (bd.prefill_attn_s + bd.prefill_experts_s + bd.prefill_comm_s),
                rel=1e-9,
            )
            assert bd.decode_s == pytest.approx(
                scenario.output_len
                * model.n_layers
                * (bd.decode_attn_s + bd.decode_experts_s + bd.decode_comm_s),
                rel=1e-9,
            )

    def test_matches_objective(self):
        rng = np.random.default_rng(1)
        tensors, model, scenario = solver_instance(rng, 3, 3)
        bd = simulate((1, 2, 0), tensors, model, scenario)
        assert bd.total_s == pytest.approx(
            objective_value((1, 2, 0), tensors, scenario, model), rel=1e-12
        )

    def test_infeasible_selection_raises(self):
        tensors = unit_tensors(k_a=2, k_e=2)
        tensors.t_c_prefill[1, 1] = np.inf
        model = toy_model()
        scenario = InferenceScenario(batch=1, input_len=4, output_len=1)
        with pytest.raises(InfeasibleError, match="infeasible"):
            simulate((1, 1, 0), tensors, model, scenario)

    def test_out_of_range_indices(self):
        tensors = unit_tensors()
        with pytest.raises(IndexError):
            simulate((0, 0, 5), tensors, toy_model(),
                     InferenceScenario(batch=1, input_len=4, output_len=1))

    def test_stage_and_component_shares(self):
        tensors = unit_tensors(k_e=2, switch=1.0)
        model = toy_model(n_layers=2)
        scenario = InferenceScenario(batch=1, input_len=4, output_len=3)
        bd = simulate((0, 0, 1), tensors, model, scenario)
        shares = bd.stage_shares()
        assert shares["prefill"] + shares["decode"] + shares["transition"] == pytest.approx(1.0)
        comp = bd.component_shares("prefill")
        assert comp["attention"] == pytest.approx(1 / 3)


class TestCompare:
    def test_identical_plans_unit_speedup(self):
        tensors = unit_tensors(k_a=2, k_e=2)
        model = toy_model()
        scenario = InferenceScenario(batch=1, input_len=4, output_len=2)
        report = compare([("a", (0, 0, 0)), ("b", (0, 0, 0))], tensors, model, scenario)
        assert report.speedup("a", "b") == 1.0

    def test_requires_two_plans(self):
        tensors = unit_tensors()
        with pytest.raises(ValueError, match="at least 2"):
            compare([("only", (0, 0, 0))], tensors, toy_model(),
                    InferenceScenario(batch=1, input_len=4, output_len=1))

    def test_duplicate_labels_rejected(self):
        tensors = unit_tensors()
        sc = InferenceScenario(batch=1, input_len=4, output_len=1)
        with pytest.raises(ValueError, match="duplicate"):
            compare([("x", (0, 0, 0)), ("x", (0, 0, 0))], tensors, toy_model(), sc)

    def test_optimum_dominates_in_space_baselines(self):
        model = load_preset("mixtral-8x7b")
        hw = low_bw_profile(4)
        scenario = InferenceScenario(batch=8, input_len=2048, output_len=128)
        result = plan(model, hw, scenario)
        plans = [("optimum", result.plan.indices())]
        for name in ("tp", "ep", "dp"):
            plans.append((name, baseline_indices(result.catalog, name)))
        report = compare(plans, result.tensors, model, scenario)
        for name in ("tp", "ep", "dp"):
            assert report.speedup("optimum", name) >= 1.0 - 1e-9

    def test_long_prefill_low_bw_comparison_shape(self):
        # the optimum trades the TP baseline's allreduces for cheaper
        # collectives: lower prefill comm and no-worse decode
        model = load_preset("mixtral-8x7b")
        hw = low_bw_profile(4)
        scenario = InferenceScenario(batch=8, input_len=4096, output_len=64)
        result = plan(model, hw, scenario)
        report = compare(
            [("optimum", result.plan.indices()),
             ("tp", baseline_indices(result.catalog, "tp"))],
            result.tensors, model, scenario,
        )
        by = {e.label: e.breakdown for e in report.entries}
        assert by["optimum"].prefill_comm_s < by["tp"].prefill_comm_s
        assert by["optimum"].decode_s <= by["tp"].decode_s
        assert report.speedup("optimum", "tp") >= 1.0 - 1e-9

    def test_speedup_matrix_consistent(self):
        tensors = unit_tensors(k_a=2, k_e=2, switch=0.3)
        model = toy_model(n_layers=2)
        scenario = InferenceScenario(batch=1, input_len=4, output_len=6)
        report = compare([("a", (0, 0, 0)), ("b", (1, 0, 1))], tensors, model, scenario)
        m = report.speedup_matrix()
        assert m[0][0] == 1.0 and m[1][1] == 1.0
        assert m[0][1] == pytest.approx(1.0 / m[1][0])

    def test_csv_rows_cover_components(self):
        tensors = unit_tensors()
        bd = simulate((0, 0, 0), tensors, toy_model(),
                      InferenceScenario(batch=1, input_len=4, output_len=1))
        rows = breakdown_csv_rows("x", bd)
        stages = {r[1] for r in rows}
        assert stages == {"prefill", "decode", "transition", "total"}
