"""Hourly simulation loop: battery dynamics, action translation, market
clearing, reward dispatch, and KPI accounting.

Each step: all agents observe and act, actions become battery operations
plus at most one market order (or direct grid fallback), the community
market clears at SDR-derived prices, residuals settle with the grid, and
rewards are paid against the pre-action observation.
"""

from __future__ import annotations

import csv
import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import market
from .agents import DQNLearner, build_state, rule_based_policy
from .forecaster import TransformerForecaster, predict
from .market import Order, PriceSignal, Settlement, Side
from .profiles import (EnergyProfile, ProsumerSpec, feature_matrix,
                       DAYLIGHT_FLAG_COLUMN, NORM_DAYLIGHT_COLUMN,
                       HELSINKI_LATITUDE)
from .rewards import (Action, Observation, TariffCalendar, TariffPeriod,
                      aggregate_confidence, peak_deficit, reward)


@dataclass
class BatteryState:
    soc: float            # kWh stored
    capacity: float       # kWh
    max_charge: float     # kW
    max_discharge: float  # kW
    efficiency: float = 0.9  # round-trip

    def __post_init__(self):
        if not 0.0 < self.efficiency <= 1.0:
            raise ValueError(f"efficiency out of (0, 1]: {self.efficiency}")
        if not 0.0 <= self.soc <= self.capacity + 1e-9:
            raise ValueError(f"soc {self.soc} outside [0, {self.capacity}]")

    @property
    def one_way_efficiency(self) -> float:
        return self.efficiency ** 0.5

    @property
    def soc_pct(self) -> float:
        return 100.0 * self.soc / self.capacity if self.capacity > 0 else 0.0


def energy_balance(generation: float, load: float) -> float:
    """G - L; positive means surplus."""
    return generation - load


def apply_battery(battery: BatteryState, requested: float, direction: str,
                  ) -> tuple[BatteryState, float]:
    """Clamp a charge/discharge request to power limits, headroom, and SoC.

    Returns (new state, grid-side actual kWh): energy drawn from outside
    when charging, energy delivered outside when discharging.  One-way
    efficiency is the square root of the round-trip value.
    """
    if requested < 0:
        raise ValueError(f"requested energy must be nonnegative, got {requested}")
    eta = battery.one_way_efficiency
    if battery.capacity <= 0 or requested == 0:
        return battery, 0.0
    def clamp(soc: float) -> float:  # absorb float round-off at the rails
        return min(max(soc, 0.0), battery.capacity)

    if direction == "charge":
        headroom = battery.capacity - battery.soc
        actual = min(requested, battery.max_charge, headroom / eta)
        new = BatteryState(clamp(battery.soc + actual * eta), battery.capacity,
                           battery.max_charge, battery.max_discharge,
                           battery.efficiency)
        return new, actual
    if direction == "discharge":
        delivered = min(requested, battery.max_discharge, battery.soc * eta)
        new = BatteryState(clamp(battery.soc - delivered / eta), battery.capacity,
                           battery.max_charge, battery.max_discharge,
                           battery.efficiency)
        return new, delivered
    raise ValueError(f"unknown direction: {direction}")


@dataclass
class FlowPlan:
    """Physical result of one agent action for one hour."""
    battery: BatteryState
    charge: float = 0.0        # grid-side kWh consumed by charging
    discharge: float = 0.0     # kWh delivered by the battery
    order_side: Side | None = None
    order_qty: float = 0.0
    fallback_import: float = 0.0  # direct grid purchase, never auctioned
    fallback_export: float = 0.0


# Actions whose net imbalance becomes a market order (rest go straight to grid).
_BUY_ORDER_ACTIONS = {Action.CHARGE_AND_BUY, Action.BUY, Action.DISCHARGE_AND_BUY}
_SELL_ORDER_ACTIONS = {Action.SELL, Action.DISCHARGE_AND_SELL}


def translate_action(action: Action, balance: float, battery: BatteryState,
                     ) -> FlowPlan:
    """Map an action to battery flows plus at most one order or grid fallback.

    balance = G - L.  Charging actions charge at full rate (pre-peak top-up)
    except SelfAndCharge which only absorbs the surplus; discharging actions
    deliver at full rate except the self/deficit variants which only cover
    the deficit.
    """
    charge = discharge = 0.0
    bat = battery
    if action == Action.CHARGE_AND_BUY:
        bat, charge = apply_battery(battery, battery.max_charge, "charge")
    elif action == Action.SELF_AND_CHARGE:
        bat, charge = apply_battery(battery, max(0.0, balance), "charge")
    elif action == Action.DISCHARGE_AND_SELL:
        bat, discharge = apply_battery(battery, battery.max_discharge, "discharge")
    elif action in (Action.DISCHARGE_AND_BUY, Action.SELF_AND_DISCHARGE):
        bat, discharge = apply_battery(battery, max(0.0, -balance), "discharge")

    net = balance + discharge - charge
    plan = FlowPlan(battery=bat, charge=charge, discharge=discharge)
    if net < -1e-12:
        if action in _BUY_ORDER_ACTIONS:
            plan.order_side, plan.order_qty = Side.BUY, -net
        else:
            plan.fallback_import = -net
    elif net > 1e-12:
        if action in _SELL_ORDER_ACTIONS:
            plan.order_side, plan.order_qty = Side.SELL, net
        else:
            plan.fallback_export = net
    return plan


# --- forecast providers -----------------------------------------------------

@dataclass
class Forecast:
    mu_load: np.ndarray
    var_load: np.ndarray
    mu_pv: np.ndarray
    var_pv: np.ndarray


class OracleForecastProvider:
    """True future values plus configurable Gaussian noise.

    Ablation stand-in for the trained forecaster: the reported variance is
    the actual noise variance, so confidence scores are well calibrated.
    The noise is a pure function of (seed, agent, step), so repeated
    queries within a step see the same forecast.
    """

    def __init__(self, profiles: dict[str, EnergyProfile], horizon: int = 3,
                 noise_sigma: float = 0.0, seed: int = 0):
        self.profiles = profiles
        self.horizon = horizon
        self.noise_sigma = noise_sigma
        self.seed = seed

    def forecast(self, agent_id: str, t: int) -> Forecast:
        p = self.profiles[agent_id]
        h = self.horizon
        end = min(t + 1 + h, len(p))
        mu_l = np.array(p.load[t + 1:end], dtype=float)
        mu_p = np.array(p.generation[t + 1:end], dtype=float)
        if len(mu_l) < h:  # pad at the series end
            pad = h - len(mu_l)
            mu_l = np.concatenate([mu_l, np.repeat(mu_l[-1] if len(mu_l) else 0.0, pad)])
            mu_p = np.concatenate([mu_p, np.zeros(pad)])
        if self.noise_sigma > 0:
            rng = np.random.default_rng(np.random.SeedSequence(
                [self.seed, t, zlib.crc32(agent_id.encode())]))
            mu_l = np.maximum(mu_l + rng.normal(0, self.noise_sigma, h), 0.0)
            mu_p = np.maximum(mu_p + rng.normal(0, self.noise_sigma, h), 0.0)
        var = np.full(h, max(self.noise_sigma, 1e-3) ** 2)
        return Forecast(mu_l, var, mu_p, var)


class ModelForecastProvider:
    """Queries the trained transformer with the trailing feature window."""

    def __init__(self, model: TransformerForecaster,
                 profiles: dict[str, EnergyProfile],
                 specs: dict[str, ProsumerSpec],
                 latitude: float = HELSINKI_LATITUDE):
        self.model = model
        self.window = model.cfg.window
        self.horizon = model.cfg.horizon
        self.features: dict[str, np.ndarray] = {}
        self.exo_flag: dict[str, np.ndarray] = {}
        self.exo_norm: dict[str, np.ndarray] = {}
        mean = getattr(model, "norm_mean", None)
        std = getattr(model, "norm_std", None)
        for aid, profile in profiles.items():
            feats = feature_matrix(profile, specs[aid], latitude)
            self.exo_flag[aid] = feats[:, DAYLIGHT_FLAG_COLUMN].copy()
            self.exo_norm[aid] = feats[:, NORM_DAYLIGHT_COLUMN].copy()
            if mean is not None and std is not None:
                feats = (feats - mean) / std
            self.features[aid] = feats

    def forecast(self, agent_id: str, t: int) -> Forecast:
        # feature row i corresponds to profile step i+1
        feats = self.features[agent_id]
        end = t  # rows [t - window .. t - 1] describe steps up to t
        startrow = end - self.window
        if startrow < 0:
            raise ValueError(f"insufficient history at step {t} for window {self.window}")
        x = feats[startrow:end][None]
        hflag = np.zeros((1, self.horizon))
        hnorm = np.zeros((1, self.horizon))
        n = len(feats)
        for k in range(self.horizon):
            row = min(end + k, n - 1)
            hflag[0, k] = self.exo_flag[agent_id][row]
            hnorm[0, k] = self.exo_norm[agent_id][row]
        dist = predict(self.model, x, hflag, hnorm)
        return Forecast(dist.mu_load[0].astype(float), dist.var_load[0].astype(float),
                        dist.mu_pv[0].astype(float), dist.var_pv[0].astype(float))


class NullForecastProvider:
    """Forecast-free variant: zeroed forecast blocks, neutral confidence."""

    def __init__(self, horizon: int = 3):
        self.horizon = horizon

    def forecast(self, agent_id: str, t: int) -> Forecast:
        z = np.zeros(self.horizon)
        return Forecast(z, z.copy(), z.copy(), z.copy())


# --- simulation -------------------------------------------------------------

DEFAULT_BATTERIES = {
    "DairyFarm": (30.0, 10.0, 10.0),     # capacity kWh, charge kW, discharge kW
    "Household": (10.0, 5.0, 5.0),
    "HouseholdWithEV": (10.0, 5.0, 5.0),
}


def default_battery(spec: ProsumerSpec, efficiency: float = 0.9) -> BatteryState:
    cap, ch, dis = DEFAULT_BATTERIES[spec.kind.value]
    if spec.battery_capacity > 0:
        scale = spec.battery_capacity / cap
        cap, ch, dis = spec.battery_capacity, ch * scale, dis * scale
    return BatteryState(soc=0.5 * cap, capacity=cap, max_charge=ch,
                        max_discharge=dis, efficiency=efficiency)


@dataclass
class StepRecord:
    step: int
    agent: str
    action: int
    load: float
    generation: float
    soc: float
    p2p_buy: float
    p2p_sell: float
    grid_import: float
    grid_export: float
    reward: float
    isp: float
    ibp: float


@dataclass
class StepResult:
    rewards: dict[str, float]
    settlement: Settlement
    prices: PriceSignal
    grid_imports: dict[str, float]
    grid_exports: dict[str, float]
    p2p_buys: dict[str, float]
    p2p_sells: dict[str, float]
    cash_flows: dict[str, float]
    records: list[StepRecord]


class Simulation:
    """Step-synchronous world: all agents act, one clearing, one advance."""

    def __init__(self, profiles: dict[str, EnergyProfile],
                 specs: dict[str, ProsumerSpec],
                 calendar: TariffCalendar,
                 provider,
                 p2p_enabled: bool = True,
                 start_step: int = 0,
                 battery_efficiency: float = 0.9,
                 load_scale: float = 5.0):
        if set(profiles) != set(specs):
            raise ValueError("profiles and specs must cover the same agents")
        self.profiles = profiles
        self.specs = specs
        self.calendar = calendar
        self.provider = provider
        self.p2p_enabled = p2p_enabled
        self.start_step = start_step
        self.battery_efficiency = battery_efficiency
        self.load_scale = load_scale
        self.agent_ids = sorted(profiles)
        self.n_steps = min(len(p) for p in profiles.values())
        self.reset()

    def reset(self, start_step: int | None = None) -> None:
        self.t = self.start_step if start_step is None else start_step
        self.batteries = {aid: default_battery(self.specs[aid], self.battery_efficiency)
                          for aid in self.agent_ids}
        self.operator_spread = 0.0

    @property
    def hour(self) -> int:
        aid = self.agent_ids[0]
        return self.profiles[aid].timestamps[self.t].hour

    def observe(self, agent_id: str) -> tuple[Observation, np.ndarray]:
        """(reward observation, DQN state vector) for the current step."""
        p = self.profiles[agent_id]
        load, gen = float(p.load[self.t]), float(p.generation[self.t])
        bat = self.batteries[agent_id]
        fc = self.provider.forecast(agent_id, self.t)
        if isinstance(self.provider, NullForecastProvider):
            conf, deficit = 0.5, 0.0
        else:
            conf = aggregate_confidence(fc.mu_load, fc.var_load, fc.mu_pv, fc.var_pv)
            deficit = peak_deficit(fc.mu_load, fc.mu_pv, self.hour, self.calendar)
        obs = Observation(load=load, generation=gen, soc_pct=bat.soc_pct,
                          tariff=self.calendar.period(self.hour),
                          confidence=conf, peak_deficit=deficit)
        state = build_state(load, gen, bat.soc / bat.capacity if bat.capacity else 0.0,
                            fc.mu_load, fc.mu_pv,
                            np.sqrt(fc.var_load), np.sqrt(fc.var_pv),
                            load_scale=self.load_scale)
        return obs, state

    def step(self, actions: dict[str, Action]) -> StepResult:
        if set(actions) != set(self.agent_ids):
            raise ValueError("need exactly one action per agent")
        hour = self.hour
        lambda_buy = self.calendar.lambda_buy(hour)
        lambda_sell = self.calendar.lambda_sell

        observations = {aid: self.observe(aid)[0] for aid in self.agent_ids}

        plans: dict[str, FlowPlan] = {}
        for aid in self.agent_ids:
            obs = observations[aid]
            balance = energy_balance(obs.generation, obs.load)
            plans[aid] = translate_action(actions[aid], balance, self.batteries[aid])

        supply = sum(p.order_qty for p in plans.values() if p.order_side == Side.SELL)
        demand = sum(p.order_qty for p in plans.values() if p.order_side == Side.BUY)
        sdr = market.compute_sdr(supply, demand)
        prices = market.internal_prices(min(sdr, 2.0) if np.isfinite(sdr) else 2.0,
                                        lambda_buy, lambda_sell)

        buy_book, sell_book = [], []
        for aid, plan in plans.items():
            if plan.order_side == Side.BUY:
                buy_book.append(Order(aid, Side.BUY, plan.order_qty, prices.ibp))
            elif plan.order_side == Side.SELL:
                sell_book.append(Order(aid, Side.SELL, plan.order_qty, prices.isp))

        if self.p2p_enabled:
            trades, res_buys, res_sells = market.clear_double_auction(
                buy_book, sell_book, prices)
        else:
            trades, res_buys, res_sells = [], buy_book, sell_book
        settlement = market.settle(trades, res_buys, res_sells, prices)
        self.operator_spread += settlement.operator_spread

        p2p_buys = {aid: 0.0 for aid in self.agent_ids}
        p2p_sells = {aid: 0.0 for aid in self.agent_ids}
        for tr in trades:
            p2p_buys[tr.buyer_id] += tr.quantity
            p2p_sells[tr.seller_id] += tr.quantity

        grid_imports, grid_exports, cash = {}, {}, {}
        for aid, plan in plans.items():
            imp = settlement.grid_purchases.get(aid, 0.0) + plan.fallback_import
            exp = settlement.grid_sales.get(aid, 0.0) + plan.fallback_export
            grid_imports[aid] = imp
            grid_exports[aid] = exp
            cash[aid] = (settlement.cash_flows.get(aid, 0.0)
                         - plan.fallback_import * lambda_buy
                         + plan.fallback_export * lambda_sell)
            self.batteries[aid] = plan.battery

        rewards = {aid: reward(actions[aid], observations[aid])
                   for aid in self.agent_ids}

        records = [StepRecord(self.t, aid, int(actions[aid]),
                              observations[aid].load, observations[aid].generation,
                              self.batteries[aid].soc,
                              p2p_buys[aid], p2p_sells[aid],
                              grid_imports[aid], grid_exports[aid],
                              rewards[aid], prices.isp, prices.ibp)
                   for aid in self.agent_ids]
        self.t += 1
        return StepResult(rewards=rewards, settlement=settlement, prices=prices,
                          grid_imports=grid_imports, grid_exports=grid_exports,
                          p2p_buys=p2p_buys, p2p_sells=p2p_sells,
                          cash_flows=cash, records=records)

    def done(self) -> bool:
        return self.t >= self.n_steps - 1


# --- policies ---------------------------------------------------------------

class DQNPolicy:
    def __init__(self, learner: DQNLearner, greedy: bool = True):
        self.learner = learner
        self.greedy = greedy

    def select(self, obs: Observation, state: np.ndarray) -> Action:
        return self.learner.act(state, greedy=self.greedy)


class RuleBasedPolicy:
    def select(self, obs: Observation, state: np.ndarray) -> Action:
        return rule_based_policy(obs.generation - obs.load, obs.soc_pct, obs.tariff)


class RandomPolicy:
    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def select(self, obs: Observation, state: np.ndarray) -> Action:
        return Action(int(self.rng.integers(0, len(Action))))


# --- episodes and KPIs ------------------------------------------------------

@dataclass
class EpisodeLog:
    records: list[StepRecord] = field(default_factory=list)
    total_rewards: dict[str, float] = field(default_factory=dict)
    cost_bought: float = 0.0
    revenue_sold: float = 0.0
    peak_hour_grid_demand: float = 0.0
    per_agent_cost: dict[str, float] = field(default_factory=dict)
    per_agent_revenue: dict[str, float] = field(default_factory=dict)


def run_episode(sim: Simulation, policies: dict, n_hours: int,
                start_step: int | None = None) -> EpisodeLog:
    """Simulate n_hours with fixed policies; accumulates rewards and KPIs."""
    sim.reset(start_step)
    if sim.t + n_hours >= sim.n_steps:
        raise ValueError(
            f"episode of {n_hours} h from step {sim.t} exceeds profile length")
    log = EpisodeLog(total_rewards={aid: 0.0 for aid in sim.agent_ids})
    for aid in sim.agent_ids:
        log.per_agent_cost[aid] = 0.0
        log.per_agent_revenue[aid] = 0.0
    for _ in range(n_hours):
        hour = sim.hour
        period = sim.calendar.period(hour)
        lambda_buy = sim.calendar.lambda_buy(hour)
        actions = {}
        for aid in sim.agent_ids:
            obs, state = sim.observe(aid)
            actions[aid] = policies[aid].select(obs, state)
        result = sim.step(actions)
        log.records.extend(result.records)
        for aid in sim.agent_ids:
            log.total_rewards[aid] += result.rewards[aid]
            cost = (result.grid_imports[aid] * lambda_buy
                    + result.p2p_buys[aid] * result.prices.ibp)
            rev = (result.grid_exports[aid] * sim.calendar.lambda_sell
                   + result.p2p_sells[aid] * result.prices.isp)
            log.per_agent_cost[aid] += cost
            log.per_agent_revenue[aid] += rev
            log.cost_bought += cost
            log.revenue_sold += rev
            if period == TariffPeriod.P:
                log.peak_hour_grid_demand += result.grid_imports[aid]
    return log


@dataclass
class KpiReport:
    scenario: str
    episodes: int
    cost_bought_mean: float
    cost_bought_std: float
    revenue_sold_mean: float
    revenue_sold_std: float
    peak_demand_mean: float
    peak_demand_std: float
    per_agent_cost: dict[str, float] = field(default_factory=dict)
    per_agent_revenue: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


def kpi_report(logs: list[EpisodeLog], scenario: str) -> KpiReport:
    """Mean +- std of the three headline KPIs over evaluation episodes."""
    costs = np.array([log.cost_bought for log in logs])
    revs = np.array([log.revenue_sold for log in logs])
    peaks = np.array([log.peak_hour_grid_demand for log in logs])
    agents = logs[0].per_agent_cost.keys()
    return KpiReport(
        scenario=scenario, episodes=len(logs),
        cost_bought_mean=float(costs.mean()), cost_bought_std=float(costs.std()),
        revenue_sold_mean=float(revs.mean()), revenue_sold_std=float(revs.std()),
        peak_demand_mean=float(peaks.mean()), peak_demand_std=float(peaks.std()),
        per_agent_cost={a: float(np.mean([log.per_agent_cost[a] for log in logs]))
                        for a in agents},
        per_agent_revenue={a: float(np.mean([log.per_agent_revenue[a] for log in logs]))
                           for a in agents})


def write_episode_csv(path, log: EpisodeLog) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["step", "agent", "action", "load", "generation", "soc",
                    "p2p_buy", "p2p_sell", "grid_import", "grid_export",
                    "reward", "isp", "ibp"])
        for r in log.records:
            w.writerow([r.step, r.agent, r.action, repr(r.load), repr(r.generation),
                        repr(r.soc), repr(r.p2p_buy), repr(r.p2p_sell),
                        repr(r.grid_import), repr(r.grid_export), repr(r.reward),
                        repr(r.isp), repr(r.ibp)])


# --- DQN training loop ------------------------------------------------------

def train_dqn_agents(sim: Simulation, learners: dict[str, DQNLearner],
                     total_steps: int, episode_hours: int,
                     curve_interval: int = 100,
                     ) -> dict[str, list[tuple[int, float]]]:
    """Train independent learners on the shared environment.

    Episodes of episode_hours each, restarted from the simulation's start
    offset; returns per-agent (step, mean recent reward) curves.
    """
    curves = {aid: [] for aid in learners}
    recent = {aid: [] for aid in learners}
    steps = 0
    while steps < total_steps:
        sim.reset()
        for k in range(episode_hours):
            if steps >= total_steps:
                break
            states, obs_map, actions = {}, {}, {}
            for aid in sim.agent_ids:
                obs, state = sim.observe(aid)
                obs_map[aid], states[aid] = obs, state
                actions[aid] = learners[aid].act(state)
            result = sim.step(actions)
            terminal = (k == episode_hours - 1) or sim.done()
            for aid in sim.agent_ids:
                _, next_state = sim.observe(aid)
                learners[aid].observe(states[aid], actions[aid],
                                      result.rewards[aid], next_state, terminal)
                recent[aid].append(result.rewards[aid])
                if len(recent[aid]) >= curve_interval:
                    curves[aid].append((steps + 1, float(np.mean(recent[aid]))))
                    recent[aid] = []
            steps += 1
            if terminal:
                break
    return curves
