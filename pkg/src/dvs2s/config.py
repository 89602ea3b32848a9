"""Run configuration: defaults, ``key=value`` config files and validation."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    emb: int = 620
    hidden: int = 1024
    attn: int = 0  # 0 -> same as hidden
    samples: int = 5
    batch_size: int = 64
    lr: float = 1.0
    baseline_decay: float = 0.9
    max_epochs: int = 10
    pretrain_epochs: int = 5
    predictor_epochs: int = 5
    seed: int = 0
    topk_content: int = 1000
    beta_clip: float = 1e-7
    rho: float = 0.95
    eps: float = 1e-6
    grad_clip: float = 5.0
    normalize_reward: bool = True
    beam: int = 20
    max_len: int = 50
    max_vocab: int = 30000
    function_min_count: int = 10

    def __post_init__(self):
        if self.samples < 1:
            raise ConfigError("samples must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.hidden % 2:
            raise ConfigError("hidden must be even")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values):
        return cls(**coerce(values))

    def replace(self, **changes):
        return dataclasses.replace(self, **coerce(changes))


_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _parse_bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def coerce(values):
    """Validate keys against :class:`TrainConfig` and convert string values."""
    out = {}
    for key, value in values.items():
        key = key.replace("-", "_")
        if key not in _TYPES:
            raise ConfigError(f"unknown configuration key {key!r}")
        kind = _TYPES[key]
        try:
            if kind == "bool":
                out[key] = value if isinstance(value, bool) else _parse_bool(value)
            elif kind == "int":
                out[key] = int(value)
            else:
                out[key] = float(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return out


def read_config_file(path, extra_keys=()):
    """Parse ``key=value`` lines; ``#`` starts a comment.

    Keys must be :class:`TrainConfig` fields or listed in ``extra_keys``.
    """
    allowed = set(_TYPES) | set(extra_keys)
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in allowed:
            raise ConfigError(f"{path}:{lineno}: unknown configuration key {key!r}")
        values[key] = value
    return values
