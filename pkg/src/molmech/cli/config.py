"""JSON run configurations: one dataclass per command, strict keys, dotted overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, get_type_hints

from molmech.cli.errors import ConfigError
from molmech.hashing import sha256_hex

SCHEMA_VERSION = 1


@dataclass
class GenCorpusConfig:
    n: int = 100_000
    max_atoms: int = 20
    seed: int = 0
    split_ratios: list[float] = field(default_factory=lambda: [0.7, 0.1, 0.2])
    schema_version: int = SCHEMA_VERSION


@dataclass
class FilterConfig:
    mw_range: list[float] = field(default_factory=lambda: [150.0, 500.0])
    ring_range: list[int] = field(default_factory=lambda: [1, 6])
    max_rotatable: int = 10
    allowed_elements: list[str] = field(default_factory=lambda: ["C", "N", "O", "S", "F", "Cl", "Br", "I"])


@dataclass
class PrepareCorpusConfig:
    input: str = ""
    filter: FilterConfig = field(default_factory=FilterConfig)
    split_ratios: list[float] = field(default_factory=lambda: [0.7, 0.1, 0.2])
    canonicalize: bool = True
    seed: int = 0
    schema_version: int = SCHEMA_VERSION


@dataclass
class LmModelConfig:
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    context_len: int = 64


@dataclass
class LmTrainConfig:
    lr: float = 3e-3
    min_lr_ratio: float = 0.1
    warmup: int = 200
    steps: int = 6000
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    batch_size: int = 64
    log_every: int = 50


@dataclass
class TrainLmConfig:
    corpus: str = "corpus/splits.tsv"
    model: LmModelConfig = field(default_factory=LmModelConfig)
    train: LmTrainConfig = field(default_factory=LmTrainConfig)
    eval_samples: int = 1000
    eval_molecules: int = 2000
    temperature: float = 1.0
    resume: str = ""
    seed: int = 0
    schema_version: int = SCHEMA_VERSION


@dataclass
class DumpActivationsConfig:
    model: str = "lm/lm.ckpt"
    corpus: str = "corpus/splits.tsv"
    split: str = "train"
    layers: list[int] = field(default_factory=lambda: [0, 1])
    max_molecules: int = 20_000
    seed: int = 0
    schema_version: int = SCHEMA_VERSION


@dataclass
class SaeTrainConfig:
    expansion: int = 8
    l1: float = 1e-3
    lr: float = 1e-3
    min_lr_ratio: float = 0.1
    warmup: int = 100
    steps: int = 3000
    batch_size: int = 256
    ghost_coeff: float = 0.1
    dead_window: int = 1000
    log_every: int = 50


@dataclass
class TrainSaeConfig:
    model: str = "lm/lm.ckpt"
    activations: str = "acts/activations.bin"
    corpus: str = "corpus/splits.tsv"
    layer: int = 1
    sae: SaeTrainConfig = field(default_factory=SaeTrainConfig)
    sweep: bool = True
    sweep_steps: int = 1500
    target_l0: list[float] = field(default_factory=lambda: [10.0, 50.0])
    sweep_max_evals: int = 10
    eval_molecules: int = 500
    gen_samples: int = 200
    name: str = ""
    seed: int = 0
    schema_version: int = SCHEMA_VERSION


@dataclass
class AnalyzeCircuitsConfig:
    model: str = "lm/lm.ckpt"
    corpus: str = "corpus/splits.tsv"
    split: str = "test"
    n_molecules: int = 500
    ablation_samples: int = 500
    temperature: float = 1.0
    seed: int = 0
    schema_version: int = SCHEMA_VERSION


@dataclass
class ProbeValenceConfig:
    model: str = "lm/lm.ckpt"
    corpus: str = "corpus/splits.tsv"
    split: str = "test"
    n_molecules: int = 2000
    layers: list[int] = field(default_factory=lambda: [0, 1])
    l2: float = 1e-3
    n_boot: int = 1000
    direction_method: str = "mean-shift"
    steer_layer: int = -1
    steer_alphas: list[float] = field(default_factory=lambda: [-2.0, -1.0, 0.0, 1.0, 2.0])
    steer_molecules: int = 300
    seed: int = 0
    schema_version: int = SCHEMA_VERSION


@dataclass
class ScreenFeaturesConfig:
    model: str = "lm/lm.ckpt"
    sae: str = "sae/sae_L1.ckpt"
    corpus: str = "corpus/splits.tsv"
    split: str = "test"
    n_molecules: int = 2000
    patterns: str = ""
    baselines: bool = True
    top_k: int = 10
    seed: int = 0
    schema_version: int = SCHEMA_VERSION


@dataclass
class RobustnessConfig:
    model: str = "lm/lm.ckpt"
    sae: str = "sae/sae_L1.ckpt"
    corpus: str = "corpus/splits.tsv"
    split: str = "test"
    n_molecules: int = 500
    n_seeds: int = 3
    seed: int = 0
    schema_version: int = SCHEMA_VERSION


@dataclass
class UniversalityConfig:
    sae_small: str = "sae/sae_L1.ckpt"
    sae_large: str = "sae/sae_L1_x16.ckpt"
    threshold: float = 0.9
    seed: int = 0
    schema_version: int = SCHEMA_VERSION


@dataclass
class SteerConfig:
    model: str = "lm/lm.ckpt"
    saes: dict[str, str] = field(default_factory=lambda: {"0": "sae/sae_L0.ckpt", "1": "sae/sae_L1.ckpt"})
    corpus: str = "corpus/splits.tsv"
    split: str = "test"
    targets: list[str] = field(default_factory=list)
    n_targets: int = 3
    alphas: list[float] = field(default_factory=lambda: [0.2, 0.4, 0.6, 0.8])
    k: int = 5
    n_samples: int = 100
    n_baseline: int = 200
    temperature: float = 1.0
    seed: int = 0
    schema_version: int = SCHEMA_VERSION


@dataclass
class ReportConfig:
    run_dir: str = "."
    seed: int = 0
    schema_version: int = SCHEMA_VERSION


@dataclass
class ExportFeaturesConfig:
    model: str = "lm/lm.ckpt"
    sae: str = "sae/sae_L1.ckpt"
    labels: str = ""
    seed: int = 0
    schema_version: int = SCHEMA_VERSION


@dataclass
class FitSimpleHeadConfig:
    features: str = "export/features.bin"
    task: str = "regression"
    feature_set: str = "sae"
    l2_grid: list[float] = field(default_factory=lambda: [1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0])
    n_folds: int = 5
    seed: int = 0
    schema_version: int = SCHEMA_VERSION


COMMAND_CONFIGS: dict[str, type] = {
    "gen-corpus": GenCorpusConfig,
    "prepare-corpus": PrepareCorpusConfig,
    "train-lm": TrainLmConfig,
    "dump-activations": DumpActivationsConfig,
    "train-sae": TrainSaeConfig,
    "analyze-circuits": AnalyzeCircuitsConfig,
    "probe-valence": ProbeValenceConfig,
    "screen-features": ScreenFeaturesConfig,
    "robustness": RobustnessConfig,
    "universality": UniversalityConfig,
    "steer": SteerConfig,
    "report": ReportConfig,
    "export-features": ExportFeaturesConfig,
    "fit-simple-head": FitSimpleHeadConfig,
}


def from_dict(cls: type, data: dict, where: str = "") -> Any:
    """Build ``cls`` from ``data`` recursively, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where or cls.__name__}: expected an object, got {type(data).__name__}")
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where or cls.__name__}: unknown keys {unknown}")
    kwargs = {}
    for name, value in data.items():
        t = hints[name]
        if dataclasses.is_dataclass(t):
            kwargs[name] = from_dict(t, value, f"{where}{name}.")
        else:
            kwargs[name] = _coerce(value, t, f"{where}{name}")
    obj = cls(**kwargs)
    if getattr(obj, "schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError(f"schema_version {obj.schema_version} is not supported (expected {SCHEMA_VERSION})")
    return obj


def _coerce(value: Any, t: Any, where: str) -> Any:
    origin = getattr(t, "__origin__", None)
    if t is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if t in (int, float, str, bool):
        if not isinstance(value, t) or (t is int and isinstance(value, bool)):
            raise ConfigError(f"{where}: expected {t.__name__}, got {value!r}")
        return value
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        (inner,) = t.__args__
        return [_coerce(v, inner, f"{where}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected an object, got {value!r}")
        _, inner = t.__args__
        return {str(k): _coerce(v, inner, f"{where}.{k}") for k, v in value.items()}
    return value


def to_dict(obj: Any) -> dict:
    return dataclasses.asdict(obj)


def config_hash(obj: Any) -> str:
    return sha256_hex(json.dumps(to_dict(obj), sort_keys=True).encode())


def apply_override(data: dict, assignment: str) -> None:
    """Apply ``a.b.c=value`` where value is parsed as JSON (bare strings allowed)."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} must look like key=value")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r}: {p} is not an object")
    node[parts[-1]] = value


def load_config(command: str, path: str | None = None, overrides: list[str] = (),
                seed: int | None = None) -> Any:
    cls = COMMAND_CONFIGS[command]
    data: dict = to_dict(cls())
    if path:
        try:
            loaded = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        from_dict(cls, loaded)  # reject unknown keys before merging
        _merge(data, loaded)
    for o in overrides:
        apply_override(data, o)
    if seed is not None:
        data["seed"] = seed
    return from_dict(cls, data)


def _merge(base: dict, new: dict) -> None:
    for k, v in new.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict) and k != "saes":
            _merge(base[k], v)
        else:
            base[k] = v
