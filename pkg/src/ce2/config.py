"""Experiment configuration: nested dataclasses and a dotted ``key = value`` text format.

Example::

    # comments start with '#'
    env.name = grid_four_rooms
    strategy.name = CE2
    train.rounds = 300
    seeds = 0, 1, 2
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

STRATEGIES = ("CE2", "CE2_G", "CE2_noPEG", "MEGA", "MEGA_G", "PEG", "PEG_G", "MEGA_PEG",
              "GC_ONLY", "RANDOM")


class ConfigError(ValueError):
    pass


@dataclass
class EnvConfig:
    name: str = ""
    layout_file: str = ""
    size: int = 10
    max_episode_len: int = 50
    success_radius: float = 0.0  # 0 -> env default
    step_scale: float = 0.3


@dataclass
class StrategyConfig:
    name: str = "CE2"
    n_candidate: int = 1000
    n_edge: int = 100
    K: int = 10
    T_go: int = 0  # 0 -> floor(H_max / 2)
    T_explore: int = 0  # 0 -> H_max - T_go
    potential_greedy: bool = False
    mega_keep_fraction: float = 0.5
    mega_support: int = 1000
    mega_peg_top: int = 10


@dataclass
class LatentConfig:
    dim: int = 50
    hidden: int = 32
    optimizer: str = "momentum"
    lr: float = 3e-4
    steps_per_round: int = 10
    batch_size: int = 64
    linear_norm: bool = False


@dataclass
class DistanceConfig:
    hidden: int = 32
    optimizer: str = "adam"
    lr: float = 5e-3
    steps_per_round: int = 10
    batch_size: int = 256
    horizon: int = 20
    rollouts: int = 32
    source: str = "imagined"  # imagined | real


@dataclass
class GmmConfig:
    n_components: int = 30
    step_size: float = 3e-4
    prior_strength: float = 0.1
    init_sigma2: float = 1.0
    steps_per_round: int = 5
    batch_size: int = 256
    reassign_period: int = 10
    recent_trajectories: int = 100


@dataclass
class AgentConfig:
    gamma: float = 0.95
    epsilon: float = 0.1
    lr: float = 0.2
    goal_rollouts: int = 64
    explore_rollouts: int = 64
    imagination_horizon: int = 0  # 0 -> T_go
    ensemble_size: int = 5
    bootstrap_fraction: float = 1.0


@dataclass
class TrainConfig:
    rounds: int = 300
    episodes_per_round: int = 2
    warmup_episodes: int = 2
    capacity: int = 10_000
    snapshot_period: int = 10


@dataclass
class EvalConfig:
    goals: str = ""  # "x,y; x,y" ; empty -> farthest free cell
    episodes: int = 1


@dataclass
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    latent: LatentConfig = field(default_factory=LatentConfig)
    distance: DistanceConfig = field(default_factory=DistanceConfig)
    gmm: GmmConfig = field(default_factory=GmmConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "runs"
    env_goals: str = ""  # "x,y; x,y" ; empty -> env default

    def validate(self) -> None:
        if not self.env.name:
            raise ConfigError("env.name is required")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.strategy.name not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy.name!r}; expected one of {STRATEGIES}")
        if self.strategy.n_edge > self.strategy.n_candidate:
            raise ConfigError("strategy.n_edge must not exceed strategy.n_candidate")
        if self.strategy.K < 1:
            raise ConfigError("strategy.K must be >= 1")

    def horizons(self) -> tuple[int, int]:
        H = self.env.max_episode_len
        t_go = self.strategy.T_go or H // 2
        t_ex = self.strategy.T_explore or H - t_go
        return t_go, t_ex

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(raw: str, current, lineno: int, key: str):
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, list):
            return [int(x) for x in raw.replace(",", " ").split()]
        return raw
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {raw!r} for {key}") from None


def apply_override(cfg: ExperimentConfig, key: str, raw: str, lineno: int = 0) -> None:
    parts = key.split(".")
    obj = cfg
    for p in parts[:-1]:
        if not hasattr(obj, p) or not dataclasses.is_dataclass(getattr(obj, p)):
            raise ConfigError(f"line {lineno}: unknown section {p!r} in {key!r}")
        obj = getattr(obj, p)
    leaf = parts[-1]
    if not hasattr(obj, leaf) or dataclasses.is_dataclass(getattr(obj, leaf)):
        raise ConfigError(f"line {lineno}: unknown key {key!r}")
    setattr(obj, leaf, _coerce(raw.strip(), getattr(obj, leaf), lineno, key))


def parse_config(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        apply_override(cfg, key.strip(), raw, lineno)
    cfg.validate()
    return cfg


def load_config(path: str | Path, overrides: list[str] | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror or e}") from None
    if overrides:
        text += "\n" + "\n".join(overrides)
    return parse_config(text)


def parse_points(text: str) -> list[tuple[float, float]]:
    pts = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        xy = [float(v) for v in chunk.replace(",", " ").split()]
        if len(xy) != 2:
            raise ConfigError(f"bad point {chunk!r}")
        pts.append((xy[0], xy[1]))
    return pts
