"""Command-line surface: plan, calibrate, enumerate, simulate, compare,
quant-bench.

Every run emits a manifest (resolved inputs, seed, flags, tool version,
solver wall time) alongside its payload so results are reproducible.
Exit codes: 0 success, 2 config error, 3 infeasible, 4 internal invariant
breach.
"""

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import __version__
from .arch import (
    HardwareProfile,
    InferenceScenario,
    ModelSpec,
    SpecError,
    memory_footprint,
)
from .configio import (
    ConfigError,
    MODEL_PRESETS,
    hardware_from_sections,
    load_config,
    load_preset,
    model_from_sections,
)
from .costmodel import (
    load_model,
    model_to_json,
    read_samples_csv,
    train_forest,
)
from .planner import (
    CostModels,
    PlanOptions,
    baseline_indices,
    plan as run_plan,
)
from .quant import cosine_similarity, dequantize, quantize_int4
from .simulate import breakdown_csv_rows, compare as run_compare, simulate
from .strategies import InfeasibleError, build_catalog, memory_feasible
from .transition import DequantTableMiss, table_from_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_INTERNAL = 4

DEFAULT_HW = {
    "n_devices": 4,
    "peak_flops": 150e12,
    "device_mem_bytes": 48e9,
    "intra_node_bw": 25e9,
    "host_to_device_bw": 12e9,
    "link_label": "pcie",
}


@dataclass
class CommandOutput:
    payload: Dict
    rows: List[List] = field(default_factory=list)
    out_written: bool = False


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=MODEL_PRESETS, help="bundled model preset")
    p.add_argument("--model", help="model config file ([model] section)")
    p.add_argument("--hw", help="hardware config file ([hardware] section)")
    p.add_argument("--devices", type=int, help="override device count")


def _add_scenario_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--input", type=int, default=512, dest="input_len")
    p.add_argument("--output-len", type=int, default=64)


def _add_planner_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eta-model", help="fitted compute-efficiency model (JSON)")
    p.add_argument("--rho-model", help="fitted communication-efficiency model (JSON)")
    p.add_argument("--gamma", type=float, default=1.3, help="EP compute imbalance factor")
    p.add_argument("--allow-expert-dp", action="store_true")
    p.add_argument("--literal-eq6", action="store_true",
                   help="restrict the upload overlap budget to one layer's prefill")
    p.add_argument("--dequant-table", help="dequant timing table (CSV)")


def _add_output_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write payload to this path instead of stdout")
    p.add_argument("--format", choices=("json", "csv"), default="json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moeplan",
        description="Plan hybrid parallel strategies for MoE inference.",
    )
    parser.add_argument("--version", action="version", version=f"moeplan {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_plan = sub.add_parser("plan", help="select the optimal strategy triple")
    for add in (_add_model_args, _add_scenario_args, _add_planner_args, _add_output_args):
        add(p_plan)
    p_plan.add_argument("--solver", choices=("ilp", "bruteforce"), default="ilp")

    p_cal = sub.add_parser("calibrate", help="fit an efficiency model from a CSV dataset")
    p_cal.add_argument("dataset", help="calibration CSV (kind,b,s,h,volume,context,latency_s)")
    p_cal.add_argument("--n-trees", type=int, default=100)
    p_cal.add_argument("--max-depth", type=int, default=8)
    p_cal.add_argument("--min-leaf", type=int, default=2)
    p_cal.add_argument("--degree", type=int, default=2, help="polynomial expansion degree")
    p_cal.add_argument("--test-fraction", type=float, default=0.25)
    _add_output_args(p_cal)

    p_enum = sub.add_parser("enumerate", help="dump the strategy catalog with feasibility")
    for add in (_add_model_args, _add_scenario_args, _add_output_args):
        add(p_enum)
    p_enum.add_argument("--allow-expert-dp", action="store_true")

    p_sim = sub.add_parser("simulate", help="latency breakdown of an explicit strategy triple")
    for add in (_add_model_args, _add_scenario_args, _add_planner_args, _add_output_args):
        add(p_sim)
    p_sim.add_argument("--attn-tp", type=int, required=True)
    p_sim.add_argument("--prefill-tp", type=int, required=True)
    p_sim.add_argument("--prefill-ep", type=int, required=True)
    p_sim.add_argument("--decode-tp", type=int, required=True)
    p_sim.add_argument("--decode-ep", type=int, required=True)

    p_cmp = sub.add_parser("compare", help="optimum vs named baseline plans")
    for add in (_add_model_args, _add_scenario_args, _add_planner_args, _add_output_args):
        add(p_cmp)
    p_cmp.add_argument("--baseline", action="append", choices=("tp", "ep", "dp"),
                       help="baseline plan(s) to compare against (default: tp)")

    p_q = sub.add_parser("quant-bench", help="INT4 round-trip fidelity over seeded tensors")
    p_q.add_argument("--n", type=int, default=4096)
    p_q.add_argument("--group", type=int, default=128)
    p_q.add_argument("--seeds", type=int, default=50)
    _add_output_args(p_q)

    return parser


def _load_model_spec(args) -> Tuple[ModelSpec, Optional[str]]:
    if args.preset and args.model:
        raise ConfigError("give either --preset or --model, not both")
    if args.preset:
        return load_preset(args.preset), None
    if args.model:
        return model_from_sections(load_config(args.model), source=args.model), args.model
    raise ConfigError("one of --preset or --model is required")


def _load_hardware(args) -> Tuple[HardwareProfile, Optional[str]]:
    if args.hw:
        return (
            hardware_from_sections(load_config(args.hw), source=args.hw,
                                   n_devices_override=args.devices),
            args.hw,
        )
    hw = dict(DEFAULT_HW)
    if args.devices is not None:
        hw["n_devices"] = args.devices
    try:
        return HardwareProfile(**hw), None
    except SpecError as exc:
        raise ConfigError(str(exc)) from exc


def _load_scenario(args) -> InferenceScenario:
    try:
        return InferenceScenario(
            batch=args.batch, input_len=args.input_len, output_len=args.output_len
        )
    except SpecError as exc:
        raise ConfigError(str(exc)) from exc


def _load_cost_models(args) -> CostModels:
    eta = load_model(args.eta_model) if getattr(args, "eta_model", None) else None
    rho = load_model(args.rho_model) if getattr(args, "rho_model", None) else None
    return CostModels(eta=eta, rho=rho)


def _plan_options(args) -> PlanOptions:
    table = table_from_csv(args.dequant_table) if getattr(args, "dequant_table", None) else None
    return PlanOptions(
        gamma=args.gamma,
        allow_expert_dp=args.allow_expert_dp,
        literal_eq6=args.literal_eq6,
        cost_models=_load_cost_models(args),
        dequant_table=table,
        solver=getattr(args, "solver", "ilp"),
    )


def _manifest(args, extra: Optional[Dict] = None) -> Dict:
    flags = {
        k: v for k, v in sorted(vars(args).items())
        if k not in ("command",) and v is not None
    }
    manifest = {
        "tool": "moeplan",
        "version": __version__,
        "command": args.command,
        "flags": flags,
        "seed": getattr(args, "seed", None),
        "preset": getattr(args, "preset", None),
        "config_paths": {
            "model": getattr(args, "model", None),
            "hw": getattr(args, "hw", None),
            "eta_model": getattr(args, "eta_model", None),
            "rho_model": getattr(args, "rho_model", None),
            "dequant_table": getattr(args, "dequant_table", None),
        },
    }
    manifest.update(extra or {})
    return manifest


def _attn_dict(a) -> Dict:
    return {"tp": a.tp_degree, "dp": a.dp_degree}


def _exp_dict(e) -> Dict:
    return {"tp": e.tp_degree, "ep": e.ep_degree, "dp": e.dp_degree}


def _plan_payload(result, args) -> "CommandOutput":
    p = result.plan
    payload = {
        "manifest": _manifest(args, {"solver_wall_time_s": p.solver.wall_time_s}),
        "plan": {
            "attention": _attn_dict(p.attention),
            "expert_prefill": _exp_dict(p.expert_prefill),
            "expert_decode": _exp_dict(p.expert_decode),
            "indices": list(p.indices()),
            "objective_s": p.objective_value_s,
            "predicted_total_s": p.predicted_total_s,
            "breakdown": p.breakdown.to_dict(),
            "solver": {
                "method": p.solver.method,
                "nodes_explored": p.solver.nodes_explored,
                "wall_time_s": p.solver.wall_time_s,
            },
        },
        "catalog_sizes": {"attention": result.catalog.k_a, "expert": result.catalog.k_e},
    }
    return CommandOutput(payload, breakdown_csv_rows("optimum", p.breakdown))


def cmd_plan(args) -> "CommandOutput":
    model, _ = _load_model_spec(args)
    hw, _ = _load_hardware(args)
    scenario = _load_scenario(args)
    result = run_plan(model, hw, scenario, _plan_options(args))
    return _plan_payload(result, args)


def cmd_calibrate(args) -> "CommandOutput":
    try:
        samples = read_samples_csv(args.dataset)
    except OSError as exc:
        raise ConfigError(f"{args.dataset}: {exc.strerror or exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not 0.0 < args.test_fraction < 1.0:
        raise ConfigError(f"--test-fraction must be in (0, 1), got {args.test_fraction}")
    ordered = sorted(
        samples, key=lambda s: (s.kind, s.base_features(), s.context, s.measured_latency)
    )
    rng = np.random.default_rng(args.seed)
    perm = rng.permutation(len(ordered))
    n_test = max(1, int(round(args.test_fraction * len(ordered))))
    if len(ordered) - n_test < 1:
        raise ConfigError("dataset too small for the requested test fraction")
    test_idx = set(perm[:n_test].tolist())
    train = [ordered[ix] for ix in range(len(ordered)) if ix not in test_idx]
    test = [ordered[ix] for ix in range(len(ordered)) if ix in test_idx]
    hyper = {
        "n_trees": args.n_trees,
        "max_depth": args.max_depth,
        "min_leaf": args.min_leaf,
        "seed": args.seed,
    }
    try:
        model = train_forest(train, hyper, expansion_degree=args.degree)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    def rel_err(group) -> float:
        rows = np.array([s.base_features() for s in group])
        targets = np.array([s.target() for s in group])
        preds = model.predict_many(rows)
        return float(np.mean(np.abs(preds - targets) / targets))

    model_text = model_to_json(model)
    payload = {
        "manifest": _manifest(args),
        "model": {
            "target": model.target,
            "n_trees": model.n_trees,
            "max_depth": model.max_depth,
            "feature_expansion_degree": model.feature_expansion_degree,
        },
        "dataset": {"path": args.dataset, "n_train": len(train), "n_test": len(test)},
        "train_mean_relative_error": rel_err(train),
        "test_mean_relative_error": rel_err(test),
        "model_sha256": hashlib.sha256(model_text.encode("utf-8")).hexdigest(),
    }
    rows = [
        ["split", "n", "mean_relative_error"],
        ["train", len(train), repr(payload["train_mean_relative_error"])],
        ["test", len(test), repr(payload["test_mean_relative_error"])],
    ]
    if args.out:
        # --out receives the reusable model document; the report prints to
        # stdout so both survive one invocation
        payload["model_path"] = args.out
        _emit(model_text, args.out)
        return CommandOutput(payload, rows, out_written=True)
    payload["model_json"] = json.loads(model_text)
    return CommandOutput(payload, rows)


def cmd_enumerate(args) -> "CommandOutput":
    model, _ = _load_model_spec(args)
    hw, _ = _load_hardware(args)
    scenario = _load_scenario(args)
    catalog = build_catalog(model, hw, allow_expert_dp=args.allow_expert_dp)
    mem = memory_footprint(model, scenario)
    attn_entries = [_attn_dict(a) for a in catalog.attention]
    exp_entries = [_exp_dict(e) for e in catalog.expert]
    feasible = [
        [memory_feasible(a, e, mem, hw) for e in catalog.expert]
        for a in catalog.attention
    ]
    payload = {
        "manifest": _manifest(args),
        "attention": attn_entries,
        "expert": exp_entries,
        "memory_feasible": feasible,
        "memory_bytes": {
            "kv": mem.kv_bytes,
            "attention_weights": mem.attn_weight_bytes,
            "expert_weights": mem.expert_weight_bytes,
            "activations": mem.activation_bytes,
        },
    }
    rows = [["attention", "expert", "memory_feasible"]]
    for k, a in enumerate(catalog.attention):
        for i, e in enumerate(catalog.expert):
            rows.append([a.label(), e.label(), feasible[k][i]])
    return CommandOutput(payload, rows)


def _find_strategy_indices(args, catalog) -> Tuple[int, int, int]:
    k = next(
        (ix for ix, a in enumerate(catalog.attention) if a.tp_degree == args.attn_tp),
        None,
    )
    if k is None:
        raise InfeasibleError(f"attention tp={args.attn_tp} is not in the catalog")

    def expert_ix(tp, ep, what):
        ix = next(
            (
                ix
                for ix, e in enumerate(catalog.expert)
                if e.tp_degree == tp and e.ep_degree == ep
            ),
            None,
        )
        if ix is None:
            raise InfeasibleError(f"{what} expert tp={tp},ep={ep} is not in the catalog")
        return ix

    i = expert_ix(args.prefill_tp, args.prefill_ep, "prefill")
    j = expert_ix(args.decode_tp, args.decode_ep, "decode")
    return k, i, j


def cmd_simulate(args) -> "CommandOutput":
    from .planner import build_cost_tensors

    model, _ = _load_model_spec(args)
    hw, _ = _load_hardware(args)
    scenario = _load_scenario(args)
    opts = _plan_options(args)
    catalog = build_catalog(model, hw, allow_expert_dp=opts.allow_expert_dp)
    indices = _find_strategy_indices(args, catalog)
    tensors = build_cost_tensors(
        catalog, model, hw, scenario,
        cost_models=opts.cost_models,
        transition_table=opts.dequant_table,
        gamma=opts.gamma,
        literal_eq6=opts.literal_eq6,
    )
    breakdown = simulate(indices, tensors, model, scenario)
    payload = {
        "manifest": _manifest(args),
        "indices": list(indices),
        "attention": _attn_dict(catalog.attention[indices[0]]),
        "expert_prefill": _exp_dict(catalog.expert[indices[1]]),
        "expert_decode": _exp_dict(catalog.expert[indices[2]]),
        "breakdown": breakdown.to_dict(),
    }
    return CommandOutput(payload, breakdown_csv_rows("simulated", breakdown))


def cmd_compare(args) -> "CommandOutput":
    model, _ = _load_model_spec(args)
    hw, _ = _load_hardware(args)
    scenario = _load_scenario(args)
    result = run_plan(model, hw, scenario, _plan_options(args))
    baselines = args.baseline or ["tp"]
    plans = [("optimum", result.plan.indices())]
    for name in dict.fromkeys(baselines):
        plans.append((name, baseline_indices(result.catalog, name)))
    report = run_compare(plans, result.tensors, model, scenario)
    payload = {
        "manifest": _manifest(args, {"solver_wall_time_s": result.plan.solver.wall_time_s}),
        "comparison": report.to_dict(),
        "speedup_of_optimum": {
            name: report.speedup("optimum", name) for name in dict.fromkeys(baselines)
        },
    }
    rows = [["plan", "stage", "component", "seconds"]]
    for entry in report.entries:
        rows.extend(breakdown_csv_rows(entry.label, entry.breakdown))
    return CommandOutput(payload, rows)


def cmd_quant_bench(args) -> "CommandOutput":
    if args.n < 1 or args.group < 1 or args.seeds < 1:
        raise ConfigError("--n, --group and --seeds must all be >= 1")
    cosines = []
    max_scaled_err = 0.0
    for seed in range(args.seed, args.seed + args.seeds):
        x = np.random.default_rng(seed).standard_normal(args.n)
        q = quantize_int4(x, group_size=args.group)
        y = dequantize(q)
        cosines.append(cosine_similarity(x, y))
        group_idx = np.arange(args.n) // args.group
        scale = q.scales[group_idx]
        err = np.abs(y - x)
        with np.errstate(invalid="ignore", divide="ignore"):
            scaled = np.where(scale > 0, err / np.maximum(scale, 1e-300), err)
        max_scaled_err = max(max_scaled_err, float(scaled.max()))
    cos = np.array(cosines)
    payload = {
        "manifest": _manifest(args),
        "n": args.n,
        "group_size": args.group,
        "n_seeds": args.seeds,
        "cosine": {
            "min": float(cos.min()),
            "mean": float(cos.mean()),
            "max": float(cos.max()),
        },
        "max_error_over_scale": max_scaled_err,
        "error_bound_half_scale_ok": bool(max_scaled_err <= 0.5 + 1e-12),
    }
    rows = [["seed", "cosine"]] + [
        [args.seed + ix, repr(c)] for ix, c in enumerate(cosines)
    ]
    return CommandOutput(payload, rows)


def _render(payload: Dict, rows: List[List], fmt: str) -> str:
    if fmt == "json":
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    buf.write("# manifest " + json.dumps(payload.get("manifest", {}), sort_keys=True) + "\n")
    writer = csv.writer(buf)
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def _emit(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    tmp = out + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, out)


_COMMANDS = {
    "plan": cmd_plan,
    "calibrate": cmd_calibrate,
    "enumerate": cmd_enumerate,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "quant-bench": cmd_quant_bench,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"moeplan: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DequantTableMiss as exc:
        print(f"moeplan: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"moeplan: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (RuntimeError, AssertionError) as exc:
        print(f"moeplan: internal invariant breach: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    out = None if result.out_written else args.out
    _emit(_render(result.payload, result.rows, args.format), out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
