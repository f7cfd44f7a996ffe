import hashlib
import json
import os

import pytest

from moeplan.cli import main
from moeplan.costmodel import synthetic_oracle, write_samples_csv


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


HW_TEXT = """
[hardware]
n_devices = 4
peak_flops = 150e12
device_mem_bytes = 48e9
intra_node_bw = 25e9
host_to_device_bw = 12e9
link_label = pcie
"""


@pytest.fixture
def hw_file(tmp_path):
    path = tmp_path / "node.cfg"
    path.write_text(HW_TEXT)
    return str(path)


class TestPlanCommand:
    def test_plan_preset_json(self, capsys, hw_file):
        code, out, err = run(
            capsys, "plan", "--preset", "mixtral-8x7b", "--hw", hw_file,
            "--devices", "4", "--input", "4096", "--output-len", "64", "--batch", "8",
        )
        assert code == 0, err
        doc = json.loads(out)
        p = doc["plan"]
        assert p["attention"]["tp"] * p["attention"]["dp"] == 4
        e = p["expert_prefill"]
        assert e["tp"] * e["ep"] * e["dp"] == 4
        assert doc["manifest"]["preset"] == "mixtral-8x7b"
        assert doc["manifest"]["solver_wall_time_s"] >= 0
        assert p["breakdown"]["total_s"] > 0
        # the emitted degrees must satisfy the memory predicate
        from moeplan import (AttentionStrategy, ExpertStrategy, InferenceScenario,
                             load_preset, memory_feasible, memory_footprint)
        from moeplan.cli import DEFAULT_HW
        from moeplan.arch import HardwareProfile

        model = load_preset("mixtral-8x7b")
        hw = HardwareProfile(**DEFAULT_HW)
        mem = memory_footprint(model, InferenceScenario(batch=8, input_len=4096, output_len=64))
        attn = AttentionStrategy(p["attention"]["tp"], p["attention"]["dp"])
        for key in ("expert_prefill", "expert_decode"):
            exp = ExpertStrategy(p[key]["tp"], p[key]["ep"], p[key]["dp"])
            assert memory_feasible(attn, exp, mem, hw)

    def test_single_device_trivial(self, capsys):
        # the small preset fits one default 48 GB device; Mixtral does not
        code, out, _ = run(capsys, "plan", "--preset", "qwen1.5-moe-a2.7b", "--devices", "1")
        assert code == 0
        p = json.loads(out)["plan"]
        assert p["attention"] == {"tp": 1, "dp": 1}
        assert p["breakdown"]["per_layer_prefill"]["communication_s"] == 0.0

    def test_missing_hw_file_exits_2_no_partial_output(self, capsys, tmp_path):
        out_path = tmp_path / "plan.json"
        code, out, err = run(
            capsys, "plan", "--preset", "mixtral-8x7b",
            "--hw", str(tmp_path / "missing.cfg"), "--out", str(out_path),
        )
        assert code == 2
        assert "config error" in err
        assert not out_path.exists()
        assert out == ""

    def test_model_and_preset_conflict(self, capsys, hw_file):
        code, _, err = run(capsys, "plan", "--preset", "mixtral-8x7b", "--model", hw_file)
        assert code == 2
        assert "not both" in err

    def test_infeasible_exits_3(self, capsys, tmp_path):
        path = tmp_path / "small.cfg"
        path.write_text(HW_TEXT.replace("48e9", "1e6"))
        code, out, err = run(
            capsys, "plan", "--preset", "mixtral-8x7b", "--hw", str(path)
        )
        assert code == 3
        assert "infeasible" in err
        assert out == ""

    def test_out_file_written_atomically(self, capsys, tmp_path):
        out_path = tmp_path / "plan.json"
        code, out, _ = run(
            capsys, "plan", "--preset", "qwen1.5-moe-a2.7b", "--devices", "2",
            "--out", str(out_path),
        )
        assert code == 0
        assert out == ""
        doc = json.loads(out_path.read_text())
        assert doc["plan"]["indices"]
        assert not os.path.exists(str(out_path) + ".tmp")

    def test_csv_format_has_manifest_comment(self, capsys):
        code, out, _ = run(
            capsys, "plan", "--preset", "mixtral-8x7b", "--devices", "4", "--format", "csv"
        )
        assert code == 0
        first, rest = out.split("\n", 1)
        assert first.startswith("# manifest ")
        json.loads(first[len("# manifest "):])
        assert "optimum,total,total" in rest


class TestCalibrateCommand:
    @pytest.fixture
    def dataset(self, tmp_path):
        path = str(tmp_path / "cal.csv")
        write_samples_csv(synthetic_oracle("communication", {"n": 120}, seed=3), path)
        return path

    def test_reports_errors_and_writes_model(self, capsys, dataset, tmp_path):
        model_path = str(tmp_path / "rho.json")
        code, out, err = run(
            capsys, "calibrate", dataset, "--seed", "5", "--out", model_path,
            "--n-trees", "30",
        )
        assert code == 0, err
        doc = json.loads(out)
        assert doc["model"]["target"] == "rho"
        assert doc["test_mean_relative_error"] < 0.05
        saved = json.loads(open(model_path).read())
        assert saved["format"] == "moeplan-efficiency-model"

    def test_deterministic_given_seed(self, capsys, dataset, tmp_path):
        h = []
        for run_ix in range(2):
            model_path = str(tmp_path / f"m{run_ix}.json")
            code, _, _ = run(
                capsys, "calibrate", dataset, "--seed", "9", "--out", model_path,
                "--n-trees", "20",
            )
            assert code == 0
            h.append(hashlib.sha256(open(model_path, "rb").read()).hexdigest())
        assert h[0] == h[1]

    def test_empty_csv_rejected(self, capsys, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        code, _, err = run(capsys, "calibrate", str(path))
        assert code == 2
        assert "empty" in err

    def test_schema_violation_names_column(self, capsys, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("kind,b,s,h,volume,context,latency_s\ncompute,1,2,,,1e12,0.5\n")
        code, _, err = run(capsys, "calibrate", str(path))
        assert code == 2
        assert "positive h" in err

    def test_trained_model_usable_by_plan(self, capsys, dataset, tmp_path):
        model_path = str(tmp_path / "rho.json")
        code, _, _ = run(capsys, "calibrate", dataset, "--out", model_path, "--n-trees", "10")
        assert code == 0
        code, out, err = run(
            capsys, "plan", "--preset", "mixtral-8x7b", "--devices", "4",
            "--rho-model", model_path,
        )
        assert code == 0, err
        assert json.loads(out)["plan"]["breakdown"]["total_s"] > 0


class TestEnumerateCommand:
    def test_catalog_respects_divisibility(self, capsys):
        code, out, _ = run(
            capsys, "enumerate", "--preset", "qwen2-57b-a14b", "--devices", "4"
        )
        assert code == 0
        doc = json.loads(out)
        for e in doc["expert"]:
            assert 64 % e["ep"] == 0
            assert e["tp"] * e["ep"] * e["dp"] == 4
        assert doc["memory_feasible"]

    def test_feasibility_matrix_shape(self, capsys):
        code, out, _ = run(capsys, "enumerate", "--preset", "mixtral-8x7b", "--devices", "4")
        doc = json.loads(out)
        assert len(doc["memory_feasible"]) == len(doc["attention"])
        assert len(doc["memory_feasible"][0]) == len(doc["expert"])


class TestSimulateCommand:
    def test_explicit_triple(self, capsys):
        code, out, err = run(
            capsys, "simulate", "--preset", "mixtral-8x7b", "--devices", "4",
            "--attn-tp", "4", "--prefill-tp", "1", "--prefill-ep", "4",
            "--decode-tp", "4", "--decode-ep", "1",
        )
        assert code == 0, err
        doc = json.loads(out)
        assert doc["expert_prefill"]["ep"] == 4
        assert doc["expert_decode"]["tp"] == 4
        assert doc["breakdown"]["transition_s"] >= 0

    def test_unknown_strategy_exits_3(self, capsys):
        code, _, err = run(
            capsys, "simulate", "--preset", "mixtral-8x7b", "--devices", "4",
            "--attn-tp", "3", "--prefill-tp", "1", "--prefill-ep", "4",
            "--decode-tp", "4", "--decode-ep", "1",
        )
        assert code == 3
        assert "not in the catalog" in err


class TestCompareCommand:
    def test_compare_against_tp(self, capsys):
        code, out, err = run(
            capsys, "compare", "--preset", "mixtral-8x7b", "--devices", "4",
            "--input", "2048", "--output-len", "64", "--baseline", "tp",
        )
        assert code == 0, err
        doc = json.loads(out)
        assert doc["speedup_of_optimum"]["tp"] >= 1.0 - 1e-9
        assert "optimum" in doc["comparison"]["plans"]


class TestQuantBenchCommand:
    def test_reports_min_cosine(self, capsys):
        code, out, _ = run(
            capsys, "quant-bench", "--n", "4096", "--group", "128", "--seeds", "10"
        )
        assert code == 0
        doc = json.loads(out)
        assert 0.99 < doc["cosine"]["min"] <= doc["cosine"]["mean"] <= 1.0
        assert doc["error_bound_half_scale_ok"] is True

    def test_bad_args_exit_2(self, capsys):
        code, _, err = run(capsys, "quant-bench", "--n", "0")
        assert code == 2


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "moeplan" in capsys.readouterr().out
