"""Run configuration: YAML/JSON file, presets and ``--key value`` overrides."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from .env import EnvConfig
from .policy import PolicyConfig
from .ppo import TrainConfig
from .render import RenderStyle
from .stdplace import StdPlaceConfig

CONFIG_ENV_VAR = "MACROPLACE_CONFIG"

# Ablation presets: backbone and immediate-reward switch.
PRESETS = {
    "full": {"env.backbone": "gat", "env.use_immediate_reward": True},
    "gat_only": {"env.backbone": "gat", "env.use_immediate_reward": False},
    "ri_only": {"env.backbone": "gcn", "env.use_immediate_reward": True},
    "gcn_no_ri": {"env.backbone": "gcn", "env.use_immediate_reward": False},
}


class ConfigError(ValueError):
    pass


@dataclass
class Paths:
    aux: str = ""
    pl: str = ""
    checkpoint: str = ""
    output_dir: str = "runs/default"


@dataclass
class BookshelfConfig:
    macro_threshold: float = 10.0
    macro_rule: str = "area"


@dataclass
class RunConfig:
    seed: int = 0
    preset: str = ""
    paths: Paths = field(default_factory=Paths)
    bookshelf: BookshelfConfig = field(default_factory=BookshelfConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    stdplace: StdPlaceConfig = field(default_factory=StdPlaceConfig)
    render: RenderStyle = field(default_factory=RenderStyle)

    SECTIONS = ("paths", "bookshelf", "env", "policy", "train", "stdplace", "render")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def policy_config(self) -> PolicyConfig:
        """Policy settings with grid and backbone taken from the env section."""
        return dataclasses.replace(self.policy, grid=self.env.grid, backbone=self.env.backbone,
                                   seed=self.seeds()["policy"])

    def seeds(self) -> dict[str, int]:
        """Independent per-component seeds derived from the single run seed."""
        names = ("env", "policy", "train", "stdplace", "place")
        root = np.random.SeedSequence(self.seed)
        return {n: int(s.generate_state(1)[0]) for n, s in zip(names, root.spawn(len(names)))}

    def validate(self, need: tuple[str, ...] = ()) -> None:
        for p in need:
            v = getattr(self.paths, p)
            if not v or not os.path.exists(v):
                raise ConfigError(f"paths.{p} {v!r} does not exist")
        try:
            self.env.validate()
            self.train.validate()
            self.render.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.bookshelf.macro_rule not in ("area", "terminals"):
            raise ConfigError(f"unknown macro rule {self.bookshelf.macro_rule!r}")
        if self.stdplace.mode not in ("quadratic", "external"):
            raise ConfigError(f"unknown stdplace mode {self.stdplace.mode!r}")


def _field_index(cfg: RunConfig) -> dict[str, list[str]]:
    """Map bare field names to their dotted keys."""
    index: dict[str, list[str]] = {}
    for f in dataclasses.fields(cfg):
        if f.name in RunConfig.SECTIONS:
            for g in dataclasses.fields(getattr(cfg, f.name)):
                index.setdefault(g.name, []).append(f"{f.name}.{g.name}")
        else:
            index.setdefault(f.name, []).append(f.name)
    return index


def _coerce(value, current):
    if isinstance(value, str) and not isinstance(current, str):
        value = yaml.safe_load(value)
    if isinstance(current, bool):
        if isinstance(value, str):
            value = value.lower() in ("1", "true", "yes", "on")
        return bool(value)
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"expected an integer, got {value!r}")
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, str):
        return str(value)
    return value


def set_key(cfg: RunConfig, key: str, value) -> None:
    key = key.replace("-", "_")
    if "." not in key:
        hits = _field_index(cfg).get(key, [])
        if key in hits:  # a top-level field wins over section fields of the same name
            hits = [key]
        if not hits:
            raise ConfigError(f"unknown config key {key!r}")
        if len(hits) > 1:
            raise ConfigError(f"ambiguous config key {key!r}: use one of {', '.join(hits)}")
        key = hits[0]
    parts = key.split(".")
    target = cfg
    for p in parts[:-1]:
        if not hasattr(target, p):
            raise ConfigError(f"unknown config section {p!r}")
        target = getattr(target, p)
    name = parts[-1]
    if not dataclasses.is_dataclass(target) or name not in {f.name for f in dataclasses.fields(target)}:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        setattr(target, name, _coerce(value, getattr(target, name)))
    except (TypeError, ValueError, yaml.YAMLError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from exc


def apply_preset(cfg: RunConfig, name: str) -> None:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    for k, v in PRESETS[name].items():
        set_key(cfg, k, v)
    cfg.preset = name


def load_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from defaults, an optional file, a preset and overrides.

    The file path falls back to ``$MACROPLACE_CONFIG``.
    """
    cfg = RunConfig()
    path = path or os.environ.get(CONFIG_ENV_VAR)
    data: dict = {}
    if path:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping")
    overrides = dict(overrides or {})
    preset = overrides.pop("preset", None) or data.get("preset")
    if preset:
        apply_preset(cfg, preset)
    for key, value in data.items():
        if key == "preset":
            continue
        if isinstance(value, dict):
            for k, v in value.items():
                set_key(cfg, f"{key}.{k}", v)
        else:
            set_key(cfg, key, value)
    for key, value in overrides.items():
        set_key(cfg, key, value)
    return cfg


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
