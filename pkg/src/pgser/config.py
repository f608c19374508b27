"""Experiment configuration: typed sections, validation, TOML round-trip, presets."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any

import tomli
import tomli_w

from pgser.grid import VARIANTS as GRID_VARIANTS
from pgser.grid import GridSpec, GridSpecError, build_env, four_rooms_spec, islands_spec, open_spec
from pgser.learner import KINDS, VARIANTS, TrainSchedule

PRESETS = ("desk_four_rooms", "desk_open", "desk_islands")


class ConfigError(ValueError):
    def __init__(self, fld: str, message: str):
        self.field = fld
        super().__init__(f"{fld}: {message}")


@dataclass
class EnvConfig:
    variant: str = "four_rooms"
    width: int = 11
    height: int = 11
    walls: list | None = None
    h_max: int = 50

    def grid_spec(self) -> GridSpec:
        if self.walls is not None:
            return GridSpec(self.width, self.height, frozenset(tuple(w) for w in self.walls), self.variant)
        if self.variant == "four_rooms":
            if (self.width, self.height) != (11, 11):
                raise ConfigError("env.walls", "four_rooms without explicit walls must be 11x11")
            return four_rooms_spec()
        if self.variant == "islands":
            return islands_spec(self.width, self.height)
        return open_spec(self.width, self.height)

    def build(self):
        return build_env(self.grid_spec(), self.h_max)


@dataclass
class DatasetConfig:
    n_expert: int = 100
    n_random: int = 400
    noise: float = 0.1
    seed: int | None = None


@dataclass
class StageConfig:
    updates: int = 50_000
    batch_size: int = 64
    learning_rate: float = 0.25
    rho: float = 0.5
    her_ratio: float = 0.5
    learner: str = "dataset_constrained"
    warm_start: bool = False

    def schedule(self, seed: int) -> TrainSchedule:
        return TrainSchedule(self.updates, self.batch_size, self.learning_rate, self.rho, self.her_ratio, seed)


@dataclass
class BufferConfig:
    capacity: int = 0  # 0: ten times the dataset transition count
    alpha: float = 1.0
    eps: float = 1e-3


@dataclass
class EvalConfig:
    episodes: int = 50
    seeds: list = field(default_factory=lambda: list(range(1, 11)))


@dataclass
class AnalysisConfig:
    n_per_class: int = 2000
    bins: int = 20
    negatives: str = "swap"


def _default_pretrain() -> StageConfig:
    return StageConfig(updates=100_000)


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    variant: str = "mem"
    output_dir: str = "runs/experiment"
    env: EnvConfig = field(default_factory=EnvConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    pretrain: StageConfig = field(default_factory=_default_pretrain)
    train: StageConfig = field(default_factory=StageConfig)
    buffer: BufferConfig = field(default_factory=BufferConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    @property
    def dataset_seed(self) -> int:
        return self.seed if self.dataset.seed is None else self.dataset.seed

    def validate(self) -> "ExperimentConfig":
        def check(ok: bool, fld: str, msg: str):
            if not ok:
                raise ConfigError(fld, msg)

        check(self.seed >= 0, "seed", "must be non-negative")
        check(self.variant in VARIANTS, "variant", f"must be one of {VARIANTS}")
        check(self.env.variant in GRID_VARIANTS, "env.variant", f"must be one of {GRID_VARIANTS}")
        check(self.env.width > 0 and self.env.height > 0, "env.width", "grid dimensions must be positive")
        check(self.env.h_max > 0, "env.h_max", "must be positive")
        try:
            self.env.build()
        except GridSpecError as e:
            raise ConfigError("env", str(e)) from None
        d = self.dataset
        check(d.n_expert >= 0, "dataset.n_expert", "must be non-negative")
        check(d.n_random >= 0, "dataset.n_random", "must be non-negative")
        check(d.n_expert + d.n_random > 0, "dataset.n_random", "dataset must contain trajectories")
        check(0.0 <= d.noise <= 1.0, "dataset.noise", "must lie in [0, 1]")
        check(d.seed is None or d.seed >= 0, "dataset.seed", "must be non-negative")
        for name in ("pretrain", "train"):
            st: StageConfig = getattr(self, name)
            check(st.updates >= 0, f"{name}.updates", "must be non-negative")
            check(st.batch_size > 0, f"{name}.batch_size", "must be positive")
            check(0.0 < st.learning_rate <= 1.0, f"{name}.learning_rate", "must lie in (0, 1]")
            check(0.0 <= st.rho <= 1.0, f"{name}.rho", "must lie in [0, 1]")
            check(0.0 <= st.her_ratio <= 1.0, f"{name}.her_ratio", "must lie in [0, 1]")
            check(st.learner in KINDS, f"{name}.learner", f"must be one of {KINDS}")
        b = self.buffer
        check(b.capacity >= 0, "buffer.capacity", "must be non-negative (0 = automatic)")
        check(b.alpha > 0, "buffer.alpha", "must be positive")
        check(b.eps > 0, "buffer.eps", "must be positive")
        check(self.eval.episodes >= 1, "eval.episodes", "must be at least 1")
        check(len(self.eval.seeds) >= 1, "eval.seeds", "need at least one seed")
        check(all(isinstance(s, int) and s >= 0 for s in self.eval.seeds), "eval.seeds", "seeds must be non-negative integers")
        check(len(set(self.eval.seeds)) == len(self.eval.seeds), "eval.seeds", "seeds must be distinct")
        a = self.analysis
        check(a.n_per_class >= 1, "analysis.n_per_class", "must be positive")
        check(a.bins >= 2, "analysis.bins", "need at least two bins")
        check(a.negatives in ("swap", "unreachable"), "analysis.negatives", "must be 'swap' or 'unreachable'")
        return self

    # -- serialization ----------------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    def to_toml(self) -> str:
        return tomli_w.dumps(_strip_none(self.to_dict()))

    def subtree_hash(self, *keys: str, extra: Any = None) -> str:
        d = self.to_dict()
        payload = {k: d[k] for k in keys}
        payload["_extra"] = extra
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _strip_none(d):
    if isinstance(d, dict):
        return {k: _strip_none(v) for k, v in d.items() if v is not None}
    return d


_SECTIONS = {
    "env": EnvConfig,
    "dataset": DatasetConfig,
    "pretrain": StageConfig,
    "train": StageConfig,
    "buffer": BufferConfig,
    "eval": EvalConfig,
    "analysis": AnalysisConfig,
}

_FLOATS = {"noise", "learning_rate", "rho", "her_ratio", "alpha", "eps"}


def _coerce(fld: str, key: str, value, default):
    if value is None and default is None:
        return None
    if key in _FLOATS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(fld, "expected a number")
        return float(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(fld, "expected true/false")
        return value
    if isinstance(default, int) or key in ("seed",):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(fld, "expected an integer")
        return value
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(fld, "expected a string")
        return value
    if key in ("walls", "seeds") and not isinstance(value, list):
        raise ConfigError(fld, "expected a list")
    return value


def from_dict(d: dict) -> ExperimentConfig:
    base = ExperimentConfig()
    kwargs: dict[str, Any] = {}
    for key, value in d.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(key, "expected a table of settings")
            cls = _SECTIONS[key]
            default_obj = getattr(base, key)
            known = {f.name for f in fields(cls)}
            sub = {}
            for k, v in value.items():
                if k not in known:
                    raise ConfigError(f"{key}.{k}", "unknown setting")
                sub[k] = _coerce(f"{key}.{k}", k, v, getattr(default_obj, k))
            merged = {**asdict(default_obj), **sub}
            kwargs[key] = cls(**merged)
        elif key in ("name", "seed", "variant", "output_dir"):
            kwargs[key] = _coerce(key, key, value, getattr(base, key))
        else:
            raise ConfigError(key, "unknown setting")
    return ExperimentConfig(**kwargs)


def loads(text: str) -> ExperimentConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        raise ConfigError("<file>", f"invalid TOML ({e})") from None
    return from_dict(data).validate()


def load(path_or_preset: str | Path) -> ExperimentConfig:
    """Load a config file, or a bundled preset by name."""
    p = Path(path_or_preset)
    if not p.exists() and str(path_or_preset) in PRESETS:
        text = resources.files("pgser.presets").joinpath(f"{path_or_preset}.toml").read_text("utf-8")
        return loads(text)
    if not p.exists():
        raise ConfigError("--config", f"{path_or_preset} is neither a file nor a preset {PRESETS}")
    return loads(p.read_text(encoding="utf-8"))


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise KeyError(name)
    return load(name)
