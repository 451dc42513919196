"""Command-line entry points: profile generation, forecaster and agent
training, scenario evaluation, and random hyperparameter search.

Every command takes a YAML run config; all outputs land under --out with
a manifest recording the config hash.  Exit codes: 0 success, 2 config
validation failure, 3 runtime failure.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__, forecaster as fc
from .agents import DQNLearner, LearnerConfig
from .config import ConfigError, RunConfig, load_config
from .env import (DQNPolicy, ModelForecastProvider, NullForecastProvider,
                  OracleForecastProvider, RuleBasedPolicy, Simulation,
                  kpi_report, run_episode, train_dqn_agents, write_episode_csv)
from .profiles import (build_community_dataset, generate_synthetic_profiles,
                       load_profiles_csv, write_profiles_csv)

EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def _fail(code: int, msg: str):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _guarded(fn):
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as e:
            _fail(EXIT_VALIDATION, str(e))
        except (ValueError, FileNotFoundError, RuntimeError) as e:
            _fail(EXIT_RUNTIME, str(e))
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _out_dir(cfg: RunConfig, out: str | None) -> Path:
    d = Path(out) if out else Path(cfg.output_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_manifest(out: Path, cfg: RunConfig, command: str):
    manifest = {"command": command, "config_hash": cfg.config_hash(),
                "package_version": __version__, "scenario": cfg.scenario,
                "seed": cfg.seed}
    with open(out / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def _get_profiles(cfg: RunConfig):
    if cfg.profiles_csv:
        profiles = load_profiles_csv(cfg.profiles_csv)
        ids = {p.prosumer_id for p in profiles}
        specs = {s.id: s for s in cfg.community if s.id in ids}
        missing = ids - set(specs)
        if missing:
            raise ConfigError(f"no community spec for prosumers: {sorted(missing)}")
    else:
        profiles = generate_synthetic_profiles(cfg.community, cfg.generator_seed)
        specs = {s.id: s for s in cfg.community}
    return profiles, specs


def _make_provider(cfg: RunConfig, profiles_map, specs, mode: str | None = None):
    mode = mode or cfg.forecast_mode
    horizon = cfg.forecaster.horizon
    if mode == "none":
        return NullForecastProvider(horizon)
    if mode == "oracle":
        return OracleForecastProvider(profiles_map, horizon,
                                      cfg.oracle_noise_sigma, cfg.seed)
    if mode == "model":
        if not cfg.forecaster_checkpoint:
            raise ConfigError("forecast_mode 'model' requires forecaster_checkpoint")
        model = fc.load_checkpoint(cfg.forecaster_checkpoint)
        return ModelForecastProvider(model, profiles_map, specs)
    raise ConfigError(f"unknown forecast mode: {mode}")


def _make_sim(cfg: RunConfig, provider, p2p: bool) -> Simulation:
    profiles, specs = _get_profiles(cfg)
    pm = {p.prosumer_id: p for p in profiles}
    return Simulation(pm, specs, cfg.calendar, provider, p2p_enabled=p2p,
                      start_step=cfg.start_step)


@click.group()
def main():
    """Peer-to-peer energy community simulator."""


@main.command("generate-profiles")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", default=None, type=click.Path())
@_guarded
def cmd_generate_profiles(config_path, out):
    """Write one year of synthetic hourly profiles to CSV."""
    cfg = load_config(config_path)
    out_dir = _out_dir(cfg, out)
    profiles = generate_synthetic_profiles(cfg.community, cfg.generator_seed)
    write_profiles_csv(out_dir / "profiles.csv", profiles)
    _write_manifest(out_dir, cfg, "generate-profiles")
    click.echo(f"wrote {len(profiles)} profiles to {out_dir / 'profiles.csv'}")


@main.command("train-forecaster")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", default=None, type=click.Path())
@_guarded
def cmd_train_forecaster(config_path, out):
    """Train the probabilistic forecaster; writes checkpoint + metrics."""
    cfg = load_config(config_path)
    out_dir = _out_dir(cfg, out)
    profiles, specs = _get_profiles(cfg)
    dataset = build_community_dataset(profiles, specs, cfg.forecaster.window,
                                      cfg.forecaster.horizon)
    model, logs = fc.train(dataset, cfg.forecaster)
    fc.save_checkpoint(out_dir / "forecaster.pt", model,
                       dataset.norm_mean, dataset.norm_std)
    fc.write_training_log(out_dir / "forecaster_log.csv", logs)

    test = dataset.split("test")
    intervals, dist = fc.predict_with_intervals(
        model, test.inputs, test.exo_daylight, test.exo_norm_daylight,
        n_samples=1000, level=0.9, seed=cfg.seed)
    lo_l, hi_l, _ = intervals["load"]
    lo_p, hi_p, _ = intervals["pv"]
    metrics = {
        "picp_load": fc.picp(lo_l, hi_l, test.targets[..., 0]),
        "picp_pv": fc.picp(lo_p, hi_p, test.targets[..., 1]),
        "mpiw_load": fc.mpiw(lo_l, hi_l),
        "mpiw_pv": fc.mpiw(lo_p, hi_p),
        "crps_load": float(np.mean(fc.crps_gaussian(
            dist.mu_load, np.sqrt(dist.var_load), test.targets[..., 0]))),
        "epochs_run": len(logs),
    }
    with open(out_dir / "forecaster_metrics.json", "w", encoding="utf-8") as f:
        json.dump(metrics, f, indent=2, sort_keys=True)
    _write_manifest(out_dir, cfg, "train-forecaster")
    click.echo(f"forecaster trained ({len(logs)} epochs), "
               f"test PICP load={metrics['picp_load']:.3f}")


def _agent_seed(base: int, index: int) -> int:
    return base * 1009 + index


@main.command("train-agents")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", default=None, type=click.Path())
@click.option("--family", type=click.Choice(["dqn", "dqn_forecast"]),
              default="dqn_forecast")
@click.option("--p2p", type=click.Choice(["on", "off"]), default=None)
@_guarded
def cmd_train_agents(config_path, out, family, p2p):
    """Train independent DQN learners; writes checkpoints + reward curves."""
    cfg = load_config(config_path)
    out_dir = _out_dir(cfg, out)
    agents_dir = out_dir / f"agents_{family}"
    agents_dir.mkdir(parents=True, exist_ok=True)
    p2p_on = cfg.p2p_enabled if p2p is None else p2p == "on"

    profiles, specs = _get_profiles(cfg)
    pm = {p.prosumer_id: p for p in profiles}
    mode = "none" if family == "dqn" else None
    provider = _make_provider(cfg, pm, specs, mode)
    sim = Simulation(pm, specs, cfg.calendar, provider, p2p_enabled=p2p_on,
                     start_step=cfg.start_step)

    learners = {}
    for i, aid in enumerate(sim.agent_ids):
        lc = dataclasses.replace(cfg.learner, seed=_agent_seed(cfg.seed, i))
        learners[aid] = DQNLearner(lc)
    curves = train_dqn_agents(sim, learners, cfg.total_steps, cfg.episode_hours)

    for aid, learner in learners.items():
        learner.save(agents_dir / f"{aid}.pt")
        with open(agents_dir / f"{aid}_curve.csv", "w", newline="",
                  encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["step", "mean_reward"])
            for step, r in curves[aid]:
                w.writerow([step, repr(r)])
    _write_manifest(out_dir, cfg, "train-agents")
    click.echo(f"trained {len(learners)} agents ({family}) into {agents_dir}")


def _load_policies(cfg: RunConfig, family: str, sim: Simulation):
    if family == "rule_based":
        return {aid: RuleBasedPolicy() for aid in sim.agent_ids}
    ckpt_dir = cfg.agent_checkpoint_dirs.get(family)
    if not ckpt_dir:
        raise ConfigError(f"no agent_checkpoint_dirs entry for family '{family}'")
    policies = {}
    for aid in sim.agent_ids:
        path = Path(ckpt_dir) / f"{aid}.pt"
        if not path.exists():
            raise ConfigError(f"missing checkpoint for agent {aid}: {path}")
        policies[aid] = DQNPolicy(DQNLearner.load(path), greedy=True)
    return policies


def _eval_cell(cfg: RunConfig, family: str, p2p: bool):
    profiles, specs = _get_profiles(cfg)
    pm = {p.prosumer_id: p for p in profiles}
    mode = "none" if family in ("rule_based", "dqn") else None
    provider = _make_provider(cfg, pm, specs, mode)
    sim = Simulation(pm, specs, cfg.calendar, provider, p2p_enabled=p2p,
                     start_step=cfg.start_step)
    policies = _load_policies(cfg, family, sim)
    max_start = sim.n_steps - cfg.episode_hours - cfg.forecaster.horizon - 2
    logs = []
    for e in range(cfg.eval_episodes):
        start = cfg.start_step + e * cfg.episode_hours
        if start > max_start:
            start = cfg.start_step + (e * 173) % max(max_start - cfg.start_step, 1)
        logs.append(run_episode(sim, policies, cfg.episode_hours, start))
    label = f"{family}_{'p2p' if p2p else 'no_p2p'}"
    return kpi_report(logs, label), logs


def _pct_diff(a: float, b: float) -> float | None:
    """(b - a) / a in percent; None when the base is zero."""
    return None if a == 0 else 100.0 * (b - a) / a


@main.command("evaluate")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", default=None, type=click.Path())
@click.option("--p2p", type=click.Choice(["on", "off", "both"]), default="both")
@_guarded
def cmd_evaluate(config_path, out, p2p):
    """Run the scenario grid and emit the KPI comparison table."""
    cfg = load_config(config_path)
    out_dir = _out_dir(cfg, out)
    p2p_values = {"on": [True], "off": [False], "both": [False, True]}[p2p]

    reports = {}
    for family in cfg.eval_families:
        for p2p_on in p2p_values:
            report, logs = _eval_cell(cfg, family, p2p_on)
            reports[report.scenario] = report
            with open(out_dir / f"kpi_{report.scenario}.json", "w",
                      encoding="utf-8") as f:
                f.write(report.to_json())
            write_episode_csv(out_dir / f"episode_{report.scenario}.csv", logs[0])

    rows = []
    for p2p_on in p2p_values:
        tag = "p2p" if p2p_on else "no_p2p"
        scenario = "with P2P" if p2p_on else "w/o P2P"
        for metric, attr in (("cost_bought", "cost_bought_mean"),
                             ("revenue_sold", "revenue_sold_mean"),
                             ("peak_hour_demand", "peak_demand_mean")):
            row = {"metric": metric, "scenario": scenario}
            for family in cfg.eval_families:
                rep = reports.get(f"{family}_{tag}")
                row[family] = getattr(rep, attr) if rep else None
            if row.get("dqn") is not None and row.get("dqn_forecast") is not None:
                row["pct_diff_dqn_vs_dqn_forecast"] = _pct_diff(
                    row["dqn"], row["dqn_forecast"])
            rows.append(row)

    with open(out_dir / "comparison.json", "w", encoding="utf-8") as f:
        json.dump(rows, f, indent=2, sort_keys=True)
    fieldnames = ["metric", "scenario", *cfg.eval_families,
                  "pct_diff_dqn_vs_dqn_forecast"]
    with open(out_dir / "comparison.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=fieldnames, restval="")
        w.writeheader()
        for row in rows:
            w.writerow(row)
    _write_manifest(out_dir, cfg, "evaluate")
    click.echo(f"evaluated {len(reports)} scenario cells into {out_dir}")


@main.command("hp-search")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", default=None, type=click.Path())
@click.option("--trials", default=10, type=int)
@click.option("--epochs", default=5, type=int, help="budget per trial")
@_guarded
def cmd_hp_search(config_path, out, trials, epochs):
    """Random search over forecaster hyperparameters."""
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    cfg = load_config(config_path)
    out_dir = _out_dir(cfg, out)
    profiles, specs = _get_profiles(cfg)
    dataset = build_community_dataset(profiles, specs, cfg.forecaster.window,
                                      cfg.forecaster.horizon)
    rng = np.random.default_rng(cfg.seed)
    results = []
    for trial in range(trials):
        d_model, n_heads = [(8, 2), (16, 2), (16, 4), (32, 4)][rng.integers(0, 4)]
        trial_cfg = dataclasses.replace(
            cfg.forecaster,
            learning_rate=float(10 ** rng.uniform(-4, -2)),
            batch_size=int(rng.choice([32, 64, 128])),
            d_model=d_model, n_heads=n_heads,
            d_ff=int(rng.choice([32, 64, 128])),
            dropout=float(rng.uniform(0.0, 0.2)),
            alpha_smooth=float(10 ** rng.uniform(-3, -1)),
            beta_night=float(10 ** rng.uniform(-2, 0)),
            max_epochs=epochs, seed=cfg.seed)
        _, logs = fc.train(dataset, trial_cfg)
        best_val = min(log.total for log in logs)
        results.append((trial, best_val, trial_cfg))
        click.echo(f"trial {trial}: val total {best_val:.4f}")

    results.sort(key=lambda r: (r[1], r[0]))
    with open(out_dir / "hp_trials.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["rank", "trial", "val_total", "learning_rate", "batch_size",
                    "d_model", "n_heads", "d_ff", "dropout", "alpha_smooth",
                    "beta_night"])
        for rank, (trial, val, tc) in enumerate(results):
            w.writerow([rank, trial, repr(val), repr(tc.learning_rate),
                        tc.batch_size, tc.d_model, tc.n_heads, tc.d_ff,
                        repr(tc.dropout), repr(tc.alpha_smooth),
                        repr(tc.beta_night)])
    best = results[0][2]
    with open(out_dir / "hp_best.json", "w", encoding="utf-8") as f:
        json.dump(dataclasses.asdict(best), f, indent=2, sort_keys=True)
    _write_manifest(out_dir, cfg, "hp-search")
    click.echo(f"best trial {results[0][0]} (val total {results[0][1]:.4f})")


if __name__ == "__main__":
    main()
