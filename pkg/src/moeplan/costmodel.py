"""Latency simulation models: analytic roofline terms multiplied by learned
efficiency factors.

Compute latency for a module is ``(flops / peak_flops) * eta`` and
communication latency is ``(volume / bandwidth) * rho``. The eta and rho
factors are fitted by a random-forest regressor over polynomially expanded
features (degree 2 by default): (b, s, h) for compute and (volume,
bandwidth) for communication. When no fitted model is supplied the factors
default to 1.0, i.e. a pure roofline estimate.

Calibration targets are the observed ratios measured_latency /
analytic_base per sample. For communication the base is volume / bandwidth.
For compute the calibration workload is by convention a (b*s, h) x (h, h)
GEMM, so the base is 2*b*s*h^2 / peak_flops; the fitted eta then transfers
to arbitrary module FLOP counts multiplicatively.
"""

import csv
import io
import json
import math
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .arch import HardwareProfile
from .forest import RandomForest, expand_matrix, polynomial_expand

KIND_COMPUTE = "compute"
KIND_COMM = "communication"

MIN_TRAIN_SAMPLES = 20

DEFAULT_HYPER = {"n_trees": 100, "max_depth": 8, "min_leaf": 2, "seed": 0}
DEFAULT_EXPANSION_DEGREE = 2


@dataclass(frozen=True)
class CalibrationSample:
    """One measured operator latency.

    Compute samples carry (b, s, h) and context = peak FLOP/s; communication
    samples carry volume bytes and context = bandwidth bytes/s.
    """

    kind: str
    b: Optional[float] = None
    s: Optional[float] = None
    h: Optional[float] = None
    volume: Optional[float] = None
    context: float = 0.0
    measured_latency: float = 0.0

    def __post_init__(self):
        if self.kind not in (KIND_COMPUTE, KIND_COMM):
            raise ValueError(f"unknown sample kind {self.kind!r}")
        if not self.measured_latency > 0:
            raise ValueError(f"measured_latency must be > 0, got {self.measured_latency!r}")
        if not self.context > 0:
            raise ValueError(f"context must be > 0, got {self.context!r}")
        if self.kind == KIND_COMPUTE:
            for name, v in (("b", self.b), ("s", self.s), ("h", self.h)):
                if v is None or not v > 0:
                    raise ValueError(f"compute sample needs positive {name}, got {v!r}")
        else:
            if self.volume is None or not self.volume > 0:
                raise ValueError(f"communication sample needs positive volume, got {self.volume!r}")

    def base_features(self) -> Tuple[float, ...]:
        if self.kind == KIND_COMPUTE:
            return (float(self.b), float(self.s), float(self.h))
        return (float(self.volume), float(self.context))

    def analytic_base(self) -> float:
        if self.kind == KIND_COMPUTE:
            return 2.0 * self.b * self.s * self.h * self.h / self.context
        return self.volume / self.context

    def target(self) -> float:
        return self.measured_latency / self.analytic_base()


TARGET_ETA = "eta"
TARGET_RHO = "rho"

_KIND_TO_TARGET = {KIND_COMPUTE: TARGET_ETA, KIND_COMM: TARGET_RHO}


@dataclass
class EfficiencyModel:
    """Fitted eta or rho predictor: a random forest over expanded features."""

    forest: RandomForest
    target: str
    feature_expansion_degree: int = DEFAULT_EXPANSION_DEGREE

    @property
    def n_trees(self) -> int:
        return self.forest.n_trees

    @property
    def max_depth(self) -> int:
        return self.forest.max_depth

    @property
    def seed(self) -> int:
        return self.forest.seed

    def predict_factor(self, base_features: Sequence[float]) -> float:
        x = polynomial_expand(base_features, self.feature_expansion_degree)
        return float(self.forest.predict(x[None, :])[0])

    def predict_many(self, rows: np.ndarray) -> np.ndarray:
        return self.forest.predict(expand_matrix(rows, self.feature_expansion_degree))


def _canonical_sort(samples: Sequence[CalibrationSample]) -> List[CalibrationSample]:
    return sorted(
        samples,
        key=lambda s: (s.kind, s.base_features(), s.context, s.measured_latency),
    )


def train_forest(
    samples: Sequence[CalibrationSample],
    hyper: Optional[Dict] = None,
    expansion_degree: int = DEFAULT_EXPANSION_DEGREE,
) -> EfficiencyModel:
    """Fit an efficiency model on calibration samples of one kind.

    Training is invariant to sample order (samples are sorted canonically)
    and reproducible given the seed in ``hyper``.
    """
    if len(samples) < MIN_TRAIN_SAMPLES:
        raise ValueError(f"need at least {MIN_TRAIN_SAMPLES} samples, got {len(samples)}")
    kinds = {s.kind for s in samples}
    if len(kinds) != 1:
        raise ValueError(f"mixed sample kinds: {sorted(kinds)}")
    hp = dict(DEFAULT_HYPER)
    hp.update(hyper or {})
    ordered = _canonical_sort(samples)
    targets = np.array([s.target() for s in ordered])
    if not (targets > 0).all():
        raise ValueError("all efficiency targets must be positive")
    X = expand_matrix(
        np.array([s.base_features() for s in ordered], dtype=np.float64),
        expansion_degree,
    )
    forest = RandomForest(
        n_trees=int(hp["n_trees"]),
        max_depth=int(hp["max_depth"]),
        min_leaf=int(hp["min_leaf"]),
        seed=int(hp["seed"]),
    ).fit(X, targets)
    return EfficiencyModel(
        forest=forest,
        target=_KIND_TO_TARGET[ordered[0].kind],
        feature_expansion_degree=expansion_degree,
    )


@dataclass(frozen=True)
class LatencyEstimate:
    seconds: float
    base_seconds: float
    factor: float


def predict_compute_latency(
    flops: float,
    hw: HardwareProfile,
    features: Sequence[float],
    model: Optional[EfficiencyModel] = None,
) -> LatencyEstimate:
    """Compute latency = (flops / peak) * eta(features)."""
    if not flops > 0:
        raise ValueError(f"flops must be > 0, got {flops!r}")
    if model is not None and model.target != TARGET_ETA:
        raise ValueError(f"expected an eta model, got target {model.target!r}")
    base = float(flops) / hw.peak_flops
    factor = 1.0 if model is None else model.predict_factor(features)
    return LatencyEstimate(seconds=base * factor, base_seconds=base, factor=factor)


def predict_comm_latency(
    volume: float,
    hw: HardwareProfile,
    model: Optional[EfficiencyModel] = None,
) -> LatencyEstimate:
    """Communication latency = (volume / bandwidth) * rho(volume, bandwidth)."""
    if volume < 0:
        raise ValueError(f"volume must be >= 0, got {volume!r}")
    if model is not None and model.target != TARGET_RHO:
        raise ValueError(f"expected a rho model, got target {model.target!r}")
    if volume == 0:
        return LatencyEstimate(seconds=0.0, base_seconds=0.0, factor=1.0)
    base = float(volume) / hw.intra_node_bw
    factor = 1.0 if model is None else model.predict_factor((float(volume), hw.intra_node_bw))
    return LatencyEstimate(seconds=base * factor, base_seconds=base, factor=factor)


# Synthetic measurement oracle. Ground truth shapes:
#   eta(b, s, h) = eta_floor + eta_span * sigmoid((log(knee) - log(b*s)) / width)
#     (small workloads underutilize the device, large ones approach the
#      roofline floor)
#   rho(volume)  = 1 + floor_bytes / volume
#     (per-operation latency floor dominating small messages)

ETA_DEFAULTS = {
    "n": 500,
    "noise": 0.02,
    "eta_floor": 1.2,
    "eta_span": 0.8,
    "knee": 4096.0,
    "width": 1.5,
    "b_range": (1, 64),
    "s_range": (1, 8192),
    "h_range": (512, 8192),
    "peak_flops": 150e12,
}

RHO_DEFAULTS = {
    "n": 500,
    "noise": 0.01,
    "floor_bytes": float(2 ** 18),
    "volume_range": (float(2 ** 12), float(2 ** 30)),
    "bandwidth": 25e9,
}


def eta_ground_truth(b, s, h, params: Optional[Dict] = None):
    p = dict(ETA_DEFAULTS)
    p.update(params or {})
    z = (np.log(p["knee"]) - np.log(np.asarray(b, dtype=np.float64) * s)) / p["width"]
    return p["eta_floor"] + p["eta_span"] / (1.0 + np.exp(-z))


def rho_ground_truth(volume, params: Optional[Dict] = None):
    p = dict(RHO_DEFAULTS)
    p.update(params or {})
    return 1.0 + p["floor_bytes"] / np.asarray(volume, dtype=np.float64)


def _log_uniform_int(rng, lo, hi, n):
    return np.exp(rng.uniform(math.log(lo), math.log(hi), n)).round().clip(lo, hi)


def synthetic_oracle(
    kind: str,
    params: Optional[Dict] = None,
    seed: int = 0,
) -> List[CalibrationSample]:
    """Deterministic stand-in for hardware benchmarking.

    Generates calibration samples whose measured latencies follow the
    documented ground-truth efficiency curves with multiplicative Gaussian
    noise. Identical (kind, params, seed) always yields the same dataset.
    """
    if kind == KIND_COMPUTE:
        p = dict(ETA_DEFAULTS)
        p.update(params or {})
        if p["noise"] < 0:
            raise ValueError(f"noise must be >= 0, got {p['noise']!r}")
        rng = np.random.default_rng(seed)
        n = int(p["n"])
        b = _log_uniform_int(rng, *p["b_range"], n)
        s = _log_uniform_int(rng, *p["s_range"], n)
        h = _log_uniform_int(rng, *p["h_range"], n)
        eta = eta_ground_truth(b, s, h, p) * (1.0 + p["noise"] * rng.standard_normal(n))
        base = 2.0 * b * s * h * h / p["peak_flops"]
        return [
            CalibrationSample(
                kind=KIND_COMPUTE,
                b=float(b[i]),
                s=float(s[i]),
                h=float(h[i]),
                context=float(p["peak_flops"]),
                measured_latency=float(base[i] * eta[i]),
            )
            for i in range(n)
        ]
    if kind == KIND_COMM:
        p = dict(RHO_DEFAULTS)
        p.update(params or {})
        if p["noise"] < 0:
            raise ValueError(f"noise must be >= 0, got {p['noise']!r}")
        rng = np.random.default_rng(seed)
        n = int(p["n"])
        lo, hi = p["volume_range"]
        volume = np.exp(rng.uniform(math.log(lo), math.log(hi), n))
        rho = rho_ground_truth(volume, p) * (1.0 + p["noise"] * rng.standard_normal(n))
        base = volume / p["bandwidth"]
        return [
            CalibrationSample(
                kind=KIND_COMM,
                volume=float(volume[i]),
                context=float(p["bandwidth"]),
                measured_latency=float(base[i] * rho[i]),
            )
            for i in range(n)
        ]
    raise ValueError(f"unknown oracle kind {kind!r}")


CSV_HEADER = ["kind", "b", "s", "h", "volume", "context", "latency_s"]


def samples_to_csv_text(samples: Sequence[CalibrationSample]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(CSV_HEADER)
    for s in samples:
        writer.writerow(
            [
                s.kind,
                "" if s.b is None else repr(float(s.b)),
                "" if s.s is None else repr(float(s.s)),
                "" if s.h is None else repr(float(s.h)),
                "" if s.volume is None else repr(float(s.volume)),
                repr(float(s.context)),
                repr(float(s.measured_latency)),
            ]
        )
    return buf.getvalue()


def write_samples_csv(samples: Sequence[CalibrationSample], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(samples_to_csv_text(samples))


def read_samples_csv(path: str) -> List[CalibrationSample]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        return _read_samples(fh, path)


def _read_samples(fh, source: str) -> List[CalibrationSample]:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError(f"{source}: empty calibration CSV") from None
    if [c.strip() for c in header] != CSV_HEADER:
        raise ValueError(
            f"{source}: bad header {header!r}, expected {','.join(CSV_HEADER)}"
        )
    samples = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(CSV_HEADER):
            raise ValueError(f"{source}:{lineno}: expected {len(CSV_HEADER)} columns")
        kind = row[0].strip()
        try:
            vals = [float(c) if c.strip() else None for c in row[1:]]
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: non-numeric field: {exc}") from None
        b, s, h, volume, context, latency = vals
        if context is None:
            raise ValueError(f"{source}:{lineno}: column 'context' is required")
        if latency is None:
            raise ValueError(f"{source}:{lineno}: column 'latency_s' is required")
        try:
            samples.append(
                CalibrationSample(
                    kind=kind, b=b, s=s, h=h, volume=volume,
                    context=context, measured_latency=latency,
                )
            )
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: {exc}") from None
    if not samples:
        raise ValueError(f"{source}: no calibration samples found")
    return samples


MODEL_JSON_FORMAT = "moeplan-efficiency-model"
MODEL_JSON_VERSION = 1


def model_to_json(model: EfficiencyModel) -> str:
    doc = {
        "format": MODEL_JSON_FORMAT,
        "version": MODEL_JSON_VERSION,
        "target": model.target,
        "feature_expansion_degree": model.feature_expansion_degree,
        "forest": model.forest.to_dict(),
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def model_from_json(text: str) -> EfficiencyModel:
    doc = json.loads(text)
    if doc.get("format") != MODEL_JSON_FORMAT:
        raise ValueError(f"not an efficiency model document: {doc.get('format')!r}")
    if doc.get("version") != MODEL_JSON_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')!r}")
    if doc.get("target") not in (TARGET_ETA, TARGET_RHO):
        raise ValueError(f"bad target {doc.get('target')!r}")
    return EfficiencyModel(
        forest=RandomForest.from_dict(doc["forest"]),
        target=doc["target"],
        feature_expansion_degree=int(doc["feature_expansion_degree"]),
    )


def save_model(model: EfficiencyModel, path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(model_to_json(model))
    os.replace(tmp, path)


def load_model(path: str) -> EfficiencyModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_json(fh.read())
