"""Run configuration and the key=value config-file reader."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

from .corpus import DEFAULT_CEFR_MAP, SynthConfig
from .errors import ConfigError
from .model import ModelConfig


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    batch_size: int = 64
    grad_accum_steps: int = 2
    initial_lrs: tuple = (3e-3, 1e-3, 3e-4, 1e-4, 3e-5)
    lr_decay: float = 0.85
    patience: int = 4
    max_epochs: int = 30
    seeds: tuple = (0, 1, 2, 3, 4)
    split_ratios: tuple = (0.8, 0.1, 0.1)
    split_seed: int = 0
    word_vec_path: str | None = None
    word_vec_seed: int = 7
    stage1_data: str | None = None
    stage1_epochs: int = 3
    cefr_map: dict = field(default_factory=lambda: dict(DEFAULT_CEFR_MAP))

    def validate(self) -> None:
        self.model.validate()
        if self.batch_size < 1 or self.grad_accum_steps < 1:
            raise ConfigError("batch_size and grad_accum_steps must be positive")
        if self.patience < 1 or self.max_epochs < 1:
            raise ConfigError("patience and max_epochs must be positive")
        if not self.seeds or not self.initial_lrs:
            raise ConfigError("need at least one seed and one learning rate")
        if len(self.seeds) != len(self.initial_lrs):
            raise ConfigError(
                "seeds and initial_lrs run pairwise and must have equal length")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("lr_decay must be in (0, 1]")
        if sorted(self.cefr_map) != list(range(1, 10)):
            raise ConfigError("cefr_map must cover scores 1..9")


def _parse_scalar(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    return text


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines; '#' comments; commas make tuples."""
    out: dict[str, object] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip()
            if not key:
                raise ConfigError(f"{path}:{line_no}: empty key")
            value = value.strip()
            if "," in value:
                out[key] = tuple(_parse_scalar(v) for v in value.split(",") if v.strip())
            else:
                out[key] = _parse_scalar(value)
    return out


def _apply(obj, key: str, value, path_hint: str) -> bool:
    for f in fields(obj):
        if f.name != key:
            continue
        current = getattr(obj, key)
        if isinstance(current, tuple) and not isinstance(value, tuple):
            value = (value,)
        if isinstance(current, bool) and not isinstance(value, bool):
            raise ConfigError(f"{path_hint}: {key} expects true/false")
        if isinstance(current, float) and isinstance(value, int):
            value = float(value)
        setattr(obj, key, value)
        return True
    return False


def train_config_from_mapping(raw: dict, base: TrainConfig | None = None,
                              path_hint: str = "config") -> TrainConfig:
    cfg = base if base is not None else TrainConfig()
    for key, value in raw.items():
        if key.startswith("cefr_map."):
            score = int(key.split(".", 1)[1])
            cfg.cefr_map[score] = str(value)
            continue
        if _apply(cfg, key, value, path_hint):
            continue
        if _apply(cfg.model, key, value, path_hint):
            continue
        raise ConfigError(f"{path_hint}: unknown key {key!r}")
    cfg.validate()
    return cfg


def load_train_config(path) -> TrainConfig:
    return train_config_from_mapping(parse_config_file(path), path_hint=str(path))


def synth_config_from_mapping(raw: dict, path_hint: str = "config") -> SynthConfig:
    cfg = SynthConfig()
    for key, value in raw.items():
        if not _apply(cfg, key, value, path_hint):
            raise ConfigError(f"{path_hint}: unknown key {key!r}")
    cfg.validate()
    return cfg


def load_synth_config(path) -> SynthConfig:
    return synth_config_from_mapping(parse_config_file(path), path_hint=str(path))


def describe(cfg: TrainConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["cefr_map"] = {str(k): v for k, v in cfg.cefr_map.items()}
    return out
