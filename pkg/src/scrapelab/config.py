"""Flat ``section.field = value`` run configuration.

Every tunable default of the package is addressable; unknown keys are an
error. Lists are comma separated, booleans are true/false, ``#`` starts a
comment. A handful of bare seed names are accepted as aliases.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import BaselineParams, PpoConfig
from .arm import ArmModel
from .controller import ImpedanceParams
from .env import (ActionBounds, ContactParams, EnvConfig, EpisodeConfig, MaterialParams,
                  RewardParams)
from .material import VialGeometry
from .perception import PerceptionParams

FORMAT_VERSION = "scrapelab-config 1"
HELD_OUT_BASE = 1 << 31


class ConfigError(ValueError):
    pass


@dataclass
class RunSettings:
    policy_seed: int = 0
    render_seed: int = 0
    workers: int = 1
    out: str = "runs/default"
    checkpoint_every: int = 0
    eval_episodes: int = 20
    # first held-out profile seed; training keys stay below it
    held_out_base: int = HELD_OUT_BASE
    profiles: int = 5
    episodes_per_profile: int = 20
    oracle_forces: tuple = (2.0, 4.0, 6.0, 8.0, 10.0)
    oracle_episodes: int = 2
    n_scenes: int = 20
    depth_noise: float = 0.0
    artifact_rate: float = 0.0


ENV_SECTIONS = {"arm": ArmModel, "impedance": ImpedanceParams, "geometry": VialGeometry,
                "contact": ContactParams, "reward": RewardParams, "episode": EpisodeConfig,
                "material": MaterialParams, "bounds": ActionBounds}
OTHER_SECTIONS = {"ppo": PpoConfig, "perception": PerceptionParams, "baseline": BaselineParams,
                  "run": RunSettings}
ENV_SCALARS = ("initial_pitch", "initial_q1")
ALIASES = {"noise_seed": "episode.noise_seed", "spatial_seed": "episode.spatial_seed",
           "friction_seed": "episode.friction_seed", "policy_seed": "run.policy_seed",
           "render_seed": "run.render_seed", "seed": "run.policy_seed",
           "workers": "run.workers", "out": "run.out"}


@dataclass
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    perception: PerceptionParams = field(default_factory=PerceptionParams)
    baseline: BaselineParams = field(default_factory=BaselineParams)
    run: RunSettings = field(default_factory=RunSettings)

    def section(self, name):
        if name in ENV_SECTIONS:
            return getattr(self.env, name)
        return getattr(self, name)

    def held_out_profiles(self, n=None):
        n = self.run.profiles if n is None else n
        return [self.run.held_out_base + i for i in range(n)]


# ------------------------------------------------------------------ parsing

def _parse_scalar(text, like, key):
    try:
        if isinstance(like, bool):
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError
            return low == "true"
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot read {text!r} as {type(like).__name__}") from None


def _parse_value(text, default, key):
    if isinstance(default, (tuple, list, np.ndarray)):
        items = [s.strip() for s in text.split(",") if s.strip()]
        if isinstance(default, np.ndarray):
            return np.array([_parse_scalar(s, 0.0, key) for s in items])
        like = default[0] if len(default) else 0.0
        return tuple(_parse_scalar(s, like, key) for s in items)
    return _parse_scalar(text, default, key)


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list, np.ndarray)):
        return ", ".join(_format_value(x.item() if isinstance(x, np.generic) else x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_pairs(text: str):
    pairs = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ConfigError(f"line {n}: empty key")
        pairs.append((k, v))
    return pairs


def _defaults(cls):
    return {f.name: getattr(cls(), f.name) for f in dataclasses.fields(cls)}


def build_config(pairs) -> RunConfig:
    """Apply ``(key, value)`` overrides to the defaults; validates everything."""
    sections = {**ENV_SECTIONS, **OTHER_SECTIONS}
    overrides = {name: {} for name in sections}
    scalars = {}
    for key, text in pairs:
        key = ALIASES.get(key, key)
        if "." not in key:
            raise ConfigError(f"unknown key {key!r}")
        sec, name = key.split(".", 1)
        if sec == "env" and name in ENV_SCALARS:
            scalars[name] = _parse_scalar(text, 0.0, key)
            continue
        if sec not in sections:
            raise ConfigError(f"unknown section in key {key!r}")
        defaults = _defaults(sections[sec])
        if name not in defaults:
            raise ConfigError(f"unknown key {key!r}")
        overrides[sec][name] = _parse_value(text, defaults[name], key)
    try:
        built = {name: cls(**overrides[name]) for name, cls in sections.items()}
        env = EnvConfig(**{n: built[n] for n in ENV_SECTIONS}, **scalars)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    cfg = RunConfig(env, built["ppo"], built["perception"], built["baseline"], built["run"])
    if cfg.run.workers < 1:
        raise ConfigError("run.workers must be at least 1")
    return cfg


def load_config(path) -> RunConfig:
    return build_config(parse_pairs(Path(path).read_text(encoding="utf-8")))


def resolved_text(cfg: RunConfig) -> str:
    """Every key with its effective value, in a stable order."""
    lines = [f"# {FORMAT_VERSION}"]
    for name in (*ENV_SECTIONS, *OTHER_SECTIONS):
        obj = cfg.section(name)
        for f in dataclasses.fields(obj):
            lines.append(f"{name}.{f.name} = {_format_value(getattr(obj, f.name))}")
    for name in ENV_SCALARS:
        val = getattr(cfg.env, name)
        lines.append(f"env.{name} = {_format_value(float(val))}")
    return "\n".join(lines) + "\n"

