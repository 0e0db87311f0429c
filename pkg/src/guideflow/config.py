"""Run configuration: dataclasses, key=value config files, overrides.

Config files are flat ``key=value`` lines grouped by ``[section]``
headers. Every key has a default; the fully-defaulted config drives the
1D N(+/-1.0, 0.05) pipeline end to end. Command-line ``--set
section.key=value`` overrides win over the file.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

from .errors import ConfigError


@dataclass
class DataConfig:
    kind: str = "gaussian1d"  # gaussian1d | fractal
    mean: float = 1.0
    std: float = 0.05
    n_per_class: int = 10000
    max_points: int = 0  # 0 = keep all rows


@dataclass
class ScheduleConfig:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass
class ModelConfig:
    hidden_dims: tuple[int, ...] = (128, 128, 128, 128)
    activation: str = "silu"
    time_embed_dim: int = 64
    class_embed_dim: int = 64
    time_scale: float = 1000.0
    classifier_kind: str = "linear"  # linear | mlp


@dataclass
class TrainConfig:
    denoiser_steps: int = 100000
    classifier_steps: int = 50000
    flow_steps: int = 100000
    batch_size: int = 4096
    learning_rate: float = 1e-4
    flow_learning_rate: float = 1e-4
    optimizer: str = "adamw"
    weight_decay: float = 0.0
    dropout_prob: float = 0.1
    ema_decay: float = 0.0  # 0 disables the EMA shadow


@dataclass
class GuidanceGridConfig:
    mode: str = "cfg"  # vanilla | cg | cfg
    scales: tuple[float, ...] = (1.0, 2.0, 4.0)
    n_per_class: int = 10000


@dataclass
class PostprocessConfig:
    k: int = 20
    ode_steps: int = 50
    ode_method: str = "rk4"


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    guidance: GuidanceGridConfig = field(default_factory=GuidanceGridConfig)
    postprocess: PostprocessConfig = field(default_factory=PostprocessConfig)
    seed: int = 0
    out: str = "runs/default"


_SECTIONS = ("data", "schedule", "model", "train", "guidance", "postprocess")
_TOP_KEYS = ("seed", "out")


def _parse_value(raw: str, current):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            if not raw:
                return ()
            parts = [p for p in raw.split(",") if p.strip()]
            elem = type(current[0]) if current else float
            return tuple(elem(p) for p in parts)
        return raw
    except ValueError as exc:
        raise ConfigError(f"cannot parse value {raw!r}: {exc}") from exc


def set_key(config: RunConfig, dotted: str, raw: str) -> None:
    """Apply one ``section.key=value`` (or ``seed``/``out``) override."""
    if dotted in _TOP_KEYS:
        setattr(config, dotted, _parse_value(raw, getattr(config, dotted)))
        return
    if "." not in dotted:
        raise ConfigError(f"expected section.key, got {dotted!r}")
    section, key = dotted.split(".", 1)
    if section not in _SECTIONS:
        raise ConfigError(f"unknown config section {section!r}")
    target = getattr(config, section)
    names = {f.name for f in fields(target)}
    if key not in names:
        raise ConfigError(f"unknown config key {section}.{key}")
    setattr(target, key, _parse_value(raw, getattr(target, key)))


def load_config(path) -> RunConfig:
    config = RunConfig()
    section = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                if section not in _SECTIONS and section != "run":
                    raise ConfigError(f"{path}:{lineno}: unknown section [{section}]")
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, raw = (s.strip() for s in line.split("=", 1))
            if section in (None, "run"):
                set_key(config, key, raw)
            else:
                set_key(config, f"{section}.{key}", raw)
    return config


def dump_config(config: RunConfig) -> str:
    """Canonical text form, also the input of the config hash."""
    lines = [f"seed={config.seed}", f"out={config.out}"]
    for section in _SECTIONS:
        lines.append(f"[{section}]")
        target = getattr(config, section)
        for f in fields(target):
            value = getattr(target, f.name)
            if isinstance(value, tuple):
                value = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
            lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def config_hash(config: RunConfig) -> str:
    """Hash of the run semantics; the output location is not part of it."""
    lines = [l for l in dump_config(config).splitlines() if not l.startswith("out=")]
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()
