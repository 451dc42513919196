"""Tariff calendar and uncertainty-conditioned reward tables.

Eight discrete energy-management actions, each with a piecewise reward over
(state of charge, tariff period, energy balance, forecast confidence, and
predicted peak deficit).  Guards evaluate top to bottom, first match wins;
combinations not covered by any case score 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum

CONFIDENCE_EPS = 1e-6


class TariffPeriod(Enum):
    N = "N"    # night
    NP = "NP"  # pre-peak shoulder
    P = "P"    # evening peak
    D = "D"    # standard day


class Action(IntEnum):
    CHARGE_AND_BUY = 0
    BUY = 1
    SELL = 2
    DISCHARGE_AND_SELL = 3
    DISCHARGE_AND_BUY = 4
    SELF_CONSUMPTION = 5
    SELF_AND_CHARGE = 6
    SELF_AND_DISCHARGE = 7


@dataclass(frozen=True)
class TariffCalendar:
    """Hour-of-day -> period map plus per-period retail prices.

    Default schedule: N 00-06, D 07-14, NP 15-16, P 17-21, D 22-23.
    """
    period_of_hour: tuple[TariffPeriod, ...] = (
        (TariffPeriod.N,) * 7 + (TariffPeriod.D,) * 8 + (TariffPeriod.NP,) * 2
        + (TariffPeriod.P,) * 5 + (TariffPeriod.D,) * 2)
    lambda_buy_of_period: dict = field(default_factory=lambda: {
        TariffPeriod.N: 0.08, TariffPeriod.NP: 0.12,
        TariffPeriod.D: 0.15, TariffPeriod.P: 0.28})
    lambda_sell: float = 0.05

    def __post_init__(self):
        validate_calendar(self)

    def period(self, hour: int) -> TariffPeriod:
        return self.period_of_hour[hour % 24]

    def lambda_buy(self, hour: int) -> float:
        return self.lambda_buy_of_period[self.period(hour)]


def validate_calendar(cal: TariffCalendar) -> None:
    if len(cal.period_of_hour) != 24:
        raise ValueError("period_of_hour must cover all 24 hours")
    peak_hours = [h for h in range(24) if cal.period_of_hour[h] == TariffPeriod.P]
    if not peak_hours:
        raise ValueError("calendar must contain at least one peak hour")
    if peak_hours != list(range(min(peak_hours), max(peak_hours) + 1)):
        raise ValueError("peak hours must be contiguous")
    np_hours = [h for h in range(24) if cal.period_of_hour[h] == TariffPeriod.NP]
    if np_hours and max(np_hours) + 1 != min(peak_hours):
        raise ValueError("pre-peak (NP) hours must immediately precede peak hours")
    prices = cal.lambda_buy_of_period
    if not (prices[TariffPeriod.P] > prices[TariffPeriod.D]
            >= prices[TariffPeriod.NP] >= prices[TariffPeriod.N]
            > cal.lambda_sell):
        raise ValueError("price ordering violated: need P > D >= NP >= N > feed-in")


def confidence_score(mu: float, sigma2: float) -> float:
    """Map (mean, variance) to a [0, 1] confidence: 1/(1 + sigma/(|mu|+eps))."""
    if sigma2 < 0:
        raise ValueError(f"variance must be nonnegative, got {sigma2}")
    sigma = math.sqrt(sigma2)
    return 1.0 / (1.0 + sigma / (abs(mu) + CONFIDENCE_EPS))


def aggregate_confidence(mu_load, var_load, mu_pv, var_pv) -> float:
    """Per-agent confidence: mean over both targets and all horizon steps."""
    scores = [confidence_score(m, v) for m, v in zip(mu_load, var_load)]
    scores += [confidence_score(m, v) for m, v in zip(mu_pv, var_pv)]
    return sum(scores) / len(scores)


def peak_deficit(mu_load, mu_pv, current_hour: int, calendar: TariffCalendar) -> float:
    """Forecast load-minus-PV summed over horizon steps falling in peak hours."""
    total = 0.0
    for k, (ml, mp) in enumerate(zip(mu_load, mu_pv), start=1):
        if calendar.period(current_hour + k) == TariffPeriod.P:
            total += ml - mp
    return total


@dataclass(frozen=True)
class Observation:
    """What a reward evaluation sees of one agent at one hour."""
    load: float            # kWh this hour
    generation: float      # kWh this hour
    soc_pct: float         # battery state of charge, percent
    tariff: TariffPeriod
    confidence: float      # [0, 1]
    peak_deficit: float    # kWh, signed

    def __post_init__(self):
        if not 0.0 <= self.soc_pct <= 100.0:
            raise ValueError(f"soc_pct out of range: {self.soc_pct}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of range: {self.confidence}")


def reward(action: Action, obs: Observation) -> float:
    """Piecewise reward for one (action, observation) pair."""
    g, load = obs.generation, obs.load
    soc = obs.soc_pct
    t = obs.tariff
    a = obs.confidence

    if action == Action.CHARGE_AND_BUY:
        # Charging into the peak is never rewarded, whatever else holds.
        if t == TariffPeriod.P:
            return 0.0
        if soc <= 90 and t == TariffPeriod.NP and obs.peak_deficit > 0:
            return 0.5 + 1.5 * a + 1.0
        if soc <= 90 and t == TariffPeriod.N:
            return 0.5 + a
        if soc <= 90 and g < load:
            return 0.5
        return 0.0

    if action == Action.BUY:
        phi1 = g < load and soc < 10
        if phi1 and t == TariffPeriod.P:
            return 0.25
        if phi1:
            return 0.5
        return 0.0

    if action == Action.SELL:
        phi1 = g > load and soc >= 90
        if phi1 and t == TariffPeriod.P:
            return 0.75
        if phi1:
            return 0.5
        return 0.0

    if action == Action.DISCHARGE_AND_SELL:
        if g > load and soc >= 20 and t == TariffPeriod.P:
            return (0.5 + 0.5 * a) * 1.5
        if g > load and soc >= 90:
            return 0.5
        return 0.0

    if action == Action.DISCHARGE_AND_BUY:
        phi1 = g < load and soc >= 10
        if phi1 and t == TariffPeriod.P:
            return (0.5 + 0.5 * a) * 1.5
        if phi1:
            return 0.5
        return 0.0

    if action == Action.SELF_CONSUMPTION:
        imbalance = abs(g - load)
        phi1 = imbalance <= 0.1
        if phi1 and t == TariffPeriod.P:
            return 1.2
        if phi1:
            return 1.0
        if 0.1 < imbalance <= 0.2:
            return 0.5
        return 0.0

    if action == Action.SELF_AND_CHARGE:
        if t == TariffPeriod.P:
            return 0.0
        if g > load and soc <= 90 and t == TariffPeriod.NP:
            return 0.5 + 2.0 * a + 1.0
        if g > load and soc <= 90:
            return 0.5 + 0.5 * a
        return 0.0

    if action == Action.SELF_AND_DISCHARGE:
        phi1 = g < load and soc >= 20
        if phi1 and t == TariffPeriod.P:
            return (0.5 + 0.5 * a) * 1.5
        if phi1:
            return 0.5
        return 0.0

    raise ValueError(f"unknown action: {action}")
