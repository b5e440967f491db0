"""Run configuration: a TOML file with one table per component.

Every key must be known; unknown keys are errors so typos never pass
silently. ``PBL_SEED`` in the environment overrides the file's seed.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

import tomli
import tomli_w

from .core import DeckError, DeckSpec
from .scoring import DDAConfig
from .trainer import (ConfigError, TrainerConfig, bridge_desk_profile, guide_desk_profile,
                      matrix_desk_profile)

EXPERIMENTS = ("matrix", "bridge", "guide")
SEED_ENV = "PBL_SEED"


@dataclass(frozen=True)
class DataConfig:
    train: Optional[str] = None
    test: Optional[str] = None
    n_train: int = 50_000
    n_test: int = 2_000
    payoff: Optional[str] = None  # matrix payoff fixture (JSON)


@dataclass(frozen=True)
class TaskConfig:
    hidden: tuple[int, ...] = (256, 256)
    belief_hidden: tuple[int, ...] = (256, 256)
    history_slots: Optional[int] = None  # default: room for the longest auction
    recall: Optional[int] = None
    eval_episodes: Optional[int] = None


@dataclass(frozen=True)
class RunConfig:
    experiment: str = "bridge"
    seed: int = 0
    out: str = "runs/default"
    deck: DeckSpec = field(default_factory=DeckSpec.mini)
    trainer: TrainerConfig = field(default_factory=bridge_desk_profile)
    dda: DDAConfig = field(default_factory=DDAConfig)
    data: DataConfig = field(default_factory=DataConfig)
    task: TaskConfig = field(default_factory=TaskConfig)

    def to_dict(self) -> dict:
        d = {"experiment": self.experiment, "seed": self.seed, "out": self.out,
             "deck": self.deck.to_dict(), "dda": self.dda.to_dict()}
        d["trainer"] = _plain(self.trainer)
        d["data"] = _plain(self.data)
        d["task"] = _plain(self.task)
        return d


def _plain(obj) -> dict:
    # TOML has no null, so unset optionals are left out
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            out[f.name] = _plain(v)
        elif v is not None:
            out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def _build(cls, values: dict, base, where: str):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    changes = {}
    for name, v in values.items():
        current = getattr(base, name)
        if dataclasses.is_dataclass(current):
            if not isinstance(v, dict):
                raise ConfigError(f"[{where}.{name}] must be a table")
            changes[name] = _build(type(current), v, current, f"{where}.{name}")
        elif isinstance(current, tuple) or name in ("hidden", "belief_hidden"):
            changes[name] = tuple(int(x) for x in v)
        else:
            changes[name] = _coerce(v, current, f"{where}.{name}")
    try:
        return replace(base, **changes)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{where}]: {e}") from None


def _coerce(v: Any, current: Any, where: str):
    if isinstance(current, bool) and not isinstance(v, bool):
        raise ConfigError(f"{where} must be true or false")
    if isinstance(current, float) and isinstance(v, int) and not isinstance(v, bool):
        return float(v)
    return v


def paper_scale_trainer() -> TrainerConfig:
    return TrainerConfig()


def default_config(experiment: str = "bridge", paper_scale: bool = False) -> RunConfig:
    desk = {"matrix": matrix_desk_profile, "bridge": bridge_desk_profile, "guide": guide_desk_profile}
    trainer = paper_scale_trainer() if paper_scale else desk[experiment]()
    if paper_scale and experiment == "guide":
        trainer = replace(trainer, gamma=0.95, mode="distributed")
    data = DataConfig(n_train=1_500_000, n_test=30_000) if paper_scale else DataConfig()
    task = TaskConfig()
    if experiment == "matrix":
        task = TaskConfig(hidden=(32, 32), belief_hidden=(32,))
    elif experiment == "guide":
        task = TaskConfig(hidden=(64, 64), belief_hidden=(64, 64))
    elif not paper_scale:
        task = TaskConfig(hidden=(128, 128), belief_hidden=(128, 128))
    return RunConfig(experiment=experiment, trainer=trainer, data=data, task=task)


def config_from_dict(d: dict, paper_scale: bool = False, env: Optional[dict] = None) -> RunConfig:
    d = dict(d)
    top = {"experiment", "seed", "out", "deck", "trainer", "dda", "data", "task"}
    unknown = sorted(set(d) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    experiment = d.get("experiment", "bridge")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {experiment!r}")
    cfg = default_config(experiment, paper_scale)
    deck = cfg.deck
    if "deck" in d:
        deck_d = dict(d["deck"])
        preset = deck_d.pop("preset", None)
        if preset not in (None, "mini", "standard"):
            raise ConfigError(f"unknown deck preset {preset!r}")
        base = DeckSpec.standard() if preset == "standard" else DeckSpec.mini()
        extra = sorted(set(deck_d) - {"suits", "ranks", "cards_per_hand", "max_level"})
        if extra:
            raise ConfigError(f"unknown key(s) in [deck]: {', '.join(extra)}")
        try:
            deck = DeckSpec.from_dict({**base.to_dict(), **deck_d})
        except DeckError as e:
            raise ConfigError(f"[deck]: {e}") from None
    cfg = replace(
        cfg, deck=deck,
        seed=int(d.get("seed", cfg.seed)), out=str(d.get("out", cfg.out)),
        trainer=_build(TrainerConfig, d.get("trainer", {}), cfg.trainer, "trainer"),
        dda=_build(DDAConfig, d.get("dda", {}), cfg.dda, "dda"),
        data=_build(DataConfig, d.get("data", {}), cfg.data, "data"),
        task=_build(TaskConfig, d.get("task", {}), cfg.task, "task"),
    )
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            cfg = replace(cfg, seed=int(env[SEED_ENV]))
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    cfg.trainer.validate()
    return cfg


def load_config(path: str | Path, paper_scale: bool = False, env: Optional[dict] = None) -> RunConfig:
    try:
        with open(path, "rb") as f:
            d = tomli.load(f)
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return config_from_dict(d, paper_scale, env)


def dump_config(cfg: RunConfig, path: str | Path) -> None:
    with open(path, "wb") as f:
        tomli_w.dump(cfg.to_dict(), f)
