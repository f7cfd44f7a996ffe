"""Plain-text config files for model/hardware/scenario descriptions.

Format: ``[section]`` headers with ``key = value`` lines, ``#`` comments.
Values parse as int, then float, then bare string. Bundled model presets
live in the package's ``presets/`` directory and are addressed by name
(``mixtral-8x7b``, ``qwen1.5-moe-a2.7b``, ``qwen2-57b-a14b``).
"""

from importlib import resources
from typing import Dict, Optional, Union

from .arch import HardwareProfile, InferenceScenario, ModelSpec, SpecError

Value = Union[int, float, str]
Sections = Dict[str, Dict[str, Value]]


class ConfigError(ValueError):
    """Malformed config file; message names the file and line."""


def _parse_value(raw: str) -> Value:
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def parse_config_text(text: str, source: str = "<string>") -> Sections:
    sections: Sections = {}
    current: Optional[str] = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip()
            if not current:
                raise ConfigError(f"{source}:{lineno}: empty section name")
            sections.setdefault(current, {})
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {stripped!r}")
        if current is None:
            raise ConfigError(f"{source}:{lineno}: key outside any [section]")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        sections[current][key] = _parse_value(raw.strip())
    return sections


def load_config(path: str) -> Sections:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror or exc}") from exc
    return parse_config_text(text, source=path)


def _require(section: Dict[str, Value], keys, source: str, name: str) -> None:
    missing = [k for k in keys if k not in section]
    if missing:
        raise ConfigError(f"{source}: [{name}] missing keys: {', '.join(missing)}")


def model_from_sections(sections: Sections, source: str = "<config>") -> ModelSpec:
    if "model" not in sections:
        raise ConfigError(f"{source}: missing [model] section")
    sec = sections["model"]
    keys = (
        "n_layers",
        "n_q_heads",
        "n_kv_heads",
        "head_dim",
        "hidden_dim",
        "n_experts",
        "n_shared_experts",
        "top_k",
        "expert_inter_dim",
        "dtype_bytes",
    )
    _require(sec, keys, source, "model")
    try:
        return ModelSpec(
            name=str(sec.get("name", "unnamed")),
            **{k: int(sec[k]) for k in keys},
        )
    except (SpecError, TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: invalid [model]: {exc}") from exc


def hardware_from_sections(
    sections: Sections,
    source: str = "<config>",
    n_devices_override: Optional[int] = None,
) -> HardwareProfile:
    if "hardware" not in sections:
        raise ConfigError(f"{source}: missing [hardware] section")
    sec = sections["hardware"]
    _require(
        sec,
        ("n_devices", "peak_flops", "device_mem_bytes", "intra_node_bw", "host_to_device_bw"),
        source,
        "hardware",
    )
    try:
        return HardwareProfile(
            n_devices=int(n_devices_override if n_devices_override is not None else sec["n_devices"]),
            peak_flops=float(sec["peak_flops"]),
            device_mem_bytes=float(sec["device_mem_bytes"]),
            intra_node_bw=float(sec["intra_node_bw"]),
            host_to_device_bw=float(sec["host_to_device_bw"]),
            link_label=str(sec.get("link_label", "pcie")),
        )
    except (SpecError, TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: invalid [hardware]: {exc}") from exc


def scenario_from_sections(sections: Sections, source: str = "<config>") -> InferenceScenario:
    if "scenario" not in sections:
        raise ConfigError(f"{source}: missing [scenario] section")
    sec = sections["scenario"]
    _require(sec, ("batch", "input_len", "output_len"), source, "scenario")
    try:
        return InferenceScenario(
            batch=int(sec["batch"]),
            input_len=int(sec["input_len"]),
            output_len=int(sec["output_len"]),
        )
    except (SpecError, TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: invalid [scenario]: {exc}") from exc


MODEL_PRESETS = ("mixtral-8x7b", "qwen1.5-moe-a2.7b", "qwen2-57b-a14b")


def preset_text(name: str) -> str:
    if name not in MODEL_PRESETS:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(MODEL_PRESETS)}"
        )
    ref = resources.files("moeplan").joinpath("presets").joinpath(name)
    return ref.read_text(encoding="utf-8")


def load_preset(name: str) -> ModelSpec:
    return model_from_sections(parse_config_text(preset_text(name), source=f"preset:{name}"),
                               source=f"preset:{name}")
