"""Run configuration: a single YAML file drives every command.

All constants that are not physically forced (tariff prices, generator
amplitudes, learner hyperparameters, forecast mode) surface here so that
sensitivity studies need no code changes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .forecaster import ForecasterConfig
from .agents import LearnerConfig
from .profiles import ProsumerSpec, ProsumerKind, default_community
from .rewards import TariffCalendar, TariffPeriod


class ConfigError(ValueError):
    pass


FORECAST_MODES = ("oracle", "model", "none")
POLICY_FAMILIES = ("rule_based", "dqn", "dqn_forecast")


@dataclass
class RunConfig:
    scenario: str = "desk"
    seed: int = 0
    output_dir: str = "out"

    # profiles
    profiles_csv: str | None = None
    community: list[ProsumerSpec] = field(default_factory=default_community)
    generator_seed: int = 7

    calendar: TariffCalendar = field(default_factory=TariffCalendar)

    forecaster: ForecasterConfig = field(default_factory=ForecasterConfig)
    forecaster_checkpoint: str | None = None

    learner: LearnerConfig = field(default_factory=LearnerConfig)
    total_steps: int = 20_000
    episode_hours: int = 720
    start_step: int = 48

    forecast_mode: str = "oracle"
    oracle_noise_sigma: float = 0.5
    p2p_enabled: bool = True
    eval_episodes: int = 10
    eval_families: list[str] = field(default_factory=lambda: list(POLICY_FAMILIES))
    agent_checkpoint_dirs: dict[str, str] = field(default_factory=dict)

    raw: dict = field(default_factory=dict, repr=False)

    def config_hash(self) -> str:
        canon = yaml.safe_dump(self.raw, sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _check(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def _parse_community(items) -> list[ProsumerSpec]:
    specs = []
    for i, it in enumerate(items):
        try:
            specs.append(ProsumerSpec(
                id=str(it["id"]), kind=ProsumerKind(it["kind"]),
                annual_load=float(it["annual_load"]),
                pv_capacity=float(it.get("pv_capacity", 0.0)),
                battery_capacity=float(it.get("battery_capacity", 0.0))))
        except (KeyError, ValueError) as e:
            raise ConfigError(f"community[{i}]: {e}") from None
    return specs


def _parse_calendar(d: dict) -> TariffCalendar:
    kwargs = {}
    if "period_of_hour" in d:
        hours = d["period_of_hour"]
        _check(len(hours) == 24, "calendar.period_of_hour must list 24 entries")
        kwargs["period_of_hour"] = tuple(TariffPeriod(h) for h in hours)
    if "lambda_buy" in d:
        kwargs["lambda_buy_of_period"] = {
            TariffPeriod(k): float(v) for k, v in d["lambda_buy"].items()}
    if "lambda_sell" in d:
        kwargs["lambda_sell"] = float(d["lambda_sell"])
    try:
        return TariffCalendar(**kwargs)
    except ValueError as e:
        raise ConfigError(f"calendar: {e}") from None


def _sub_config(cls, d: dict, name: str):
    valid = set(cls.__dataclass_fields__)
    for k in d:
        _check(k in valid, f"{name}: unknown field '{k}'")
    try:
        return cls(**d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{name}: {e}") from None


def load_config(path) -> RunConfig:
    path = Path(path)
    _check(path.exists(), f"config file not found: {path}")
    with open(path, encoding="utf-8") as f:
        raw = yaml.safe_load(f) or {}
    _check(isinstance(raw, dict), "config root must be a mapping")

    cfg = RunConfig(raw=raw)
    known = {"scenario", "seed", "output_dir", "profiles_csv", "community",
             "generator_seed", "calendar", "forecaster", "forecaster_checkpoint",
             "learner", "total_steps", "episode_hours", "start_step",
             "forecast_mode", "oracle_noise_sigma", "p2p_enabled",
             "eval_episodes", "eval_families", "agent_checkpoint_dirs"}
    for k in raw:
        _check(k in known, f"unknown config field '{k}'")

    for name in ("scenario", "output_dir", "profiles_csv", "forecaster_checkpoint"):
        if name in raw and raw[name] is not None:
            setattr(cfg, name, str(raw[name]))
    for name in ("seed", "generator_seed", "total_steps", "episode_hours",
                 "start_step", "eval_episodes"):
        if name in raw:
            _check(isinstance(raw[name], int), f"{name} must be an integer")
            setattr(cfg, name, raw[name])
    if "oracle_noise_sigma" in raw:
        cfg.oracle_noise_sigma = float(raw["oracle_noise_sigma"])
    if "p2p_enabled" in raw:
        _check(isinstance(raw["p2p_enabled"], bool), "p2p_enabled must be a boolean")
        cfg.p2p_enabled = raw["p2p_enabled"]
    if "forecast_mode" in raw:
        _check(raw["forecast_mode"] in FORECAST_MODES,
               f"forecast_mode must be one of {FORECAST_MODES}")
        cfg.forecast_mode = raw["forecast_mode"]
    if "community" in raw:
        cfg.community = _parse_community(raw["community"])
    if "calendar" in raw:
        cfg.calendar = _parse_calendar(raw["calendar"])
    if "forecaster" in raw:
        cfg.forecaster = _sub_config(ForecasterConfig, raw["forecaster"], "forecaster")
    if "learner" in raw:
        cfg.learner = _sub_config(LearnerConfig, raw["learner"], "learner")
    if "eval_families" in raw:
        for fam in raw["eval_families"]:
            _check(fam in POLICY_FAMILIES,
                   f"eval_families: '{fam}' not in {POLICY_FAMILIES}")
        cfg.eval_families = list(raw["eval_families"])
    if "agent_checkpoint_dirs" in raw:
        cfg.agent_checkpoint_dirs = {str(k): str(v)
                                     for k, v in raw["agent_checkpoint_dirs"].items()}

    if cfg.profiles_csv is not None:
        _check(Path(cfg.profiles_csv).exists(),
               f"profiles_csv not found: {cfg.profiles_csv}")
    if cfg.forecaster_checkpoint is not None:
        _check(Path(cfg.forecaster_checkpoint).exists(),
               f"forecaster_checkpoint not found: {cfg.forecaster_checkpoint}")
    _check(cfg.episode_hours > 0, "episode_hours must be positive")
    _check(cfg.start_step >= cfg.forecaster.window + 1,
           "start_step must leave room for the forecast window")
    return cfg
