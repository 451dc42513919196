import math

import pytest
from hypothesis import given, settings, strategies as st

from p2psim.rewards import (Action, Observation, TariffCalendar, TariffPeriod,
                            aggregate_confidence, confidence_score, peak_deficit,
                            reward, validate_calendar)


def obs(load=5.0, gen=0.0, soc=50.0, tariff=TariffPeriod.D, conf=0.5, deficit=0.0):
    return Observation(load=load, generation=gen, soc_pct=soc, tariff=tariff,
                       confidence=conf, peak_deficit=deficit)


class TestCalendar:
    def test_default_schedule(self, calendar):
        assert calendar.period(18) == TariffPeriod.P
        assert calendar.period(3) == TariffPeriod.N
        assert calendar.period(10) == TariffPeriod.D
        assert calendar.period(15) == TariffPeriod.NP
        assert calendar.period(23) == TariffPeriod.D

    def test_total_over_day(self, calendar):
        for h in range(24):
            assert calendar.period(h) in TariffPeriod

    def test_wraps_hours(self, calendar):
        assert calendar.period(27) == calendar.period(3)

    def test_noncontiguous_peak_rejected(self):
        hours = list(TariffCalendar().period_of_hour)
        hours[19] = TariffPeriod.D  # punch a hole in the peak block
        with pytest.raises(ValueError, match="contiguous"):
            TariffCalendar(period_of_hour=tuple(hours))

    def test_np_must_precede_peak(self):
        hours = [TariffPeriod.D] * 24
        hours[17:22] = [TariffPeriod.P] * 5
        hours[10] = TariffPeriod.NP  # detached shoulder
        with pytest.raises(ValueError, match="precede"):
            TariffCalendar(period_of_hour=tuple(hours))

    def test_price_ordering_enforced(self):
        with pytest.raises(ValueError, match="ordering"):
            TariffCalendar(lambda_buy_of_period={
                TariffPeriod.N: 0.08, TariffPeriod.NP: 0.12,
                TariffPeriod.D: 0.15, TariffPeriod.P: 0.14})

    def test_feed_in_below_night_enforced(self):
        with pytest.raises(ValueError, match="ordering"):
            TariffCalendar(lambda_sell=0.09)

    def test_validator_accepts_default(self, calendar):
        validate_calendar(calendar)  # no raise


class TestConfidence:
    def test_zero_sigma(self):
        assert confidence_score(4.2, 0.0) == 1.0

    def test_unit_coefficient_of_variation(self):
        assert confidence_score(3.0, 9.0) == pytest.approx(0.5, abs=1e-6)

    def test_zero_mean_large_sigma(self):
        assert confidence_score(0.0, 1e6) < 1e-3

    def test_negative_variance_rejected(self):
        with pytest.raises(ValueError):
            confidence_score(1.0, -0.1)

    def test_aggregate_is_mean(self):
        a = aggregate_confidence([3.0], [0.0], [3.0], [9.0])
        assert a == pytest.approx((1.0 + 0.5) / 2, abs=1e-6)

    @given(st.floats(-10, 10), st.floats(0, 100))
    def test_in_unit_interval(self, mu, s2):
        assert 0.0 <= confidence_score(mu, s2) <= 1.0


class TestPeakDeficit:
    def test_outside_peak_is_zero(self, calendar):
        assert peak_deficit([5, 5, 5], [1, 1, 1], 2, calendar) == 0.0

    def test_one_peak_step(self, calendar):
        # hour 16: steps land on 17, 18, 19 — all peak
        assert peak_deficit([5.0], [2.0], 16, calendar) == pytest.approx(3.0)

    def test_surplus_goes_negative(self, calendar):
        assert peak_deficit([1.0], [4.0], 16, calendar) == pytest.approx(-3.0)

    def test_partial_overlap(self, calendar):
        # hour 15: steps 16 (NP), 17 (P), 18 (P)
        d = peak_deficit([10, 5, 4], [0, 2, 1], 15, calendar)
        assert d == pytest.approx((5 - 2) + (4 - 1))


class TestGoldenRewards:
    # the six hand-checked cases
    def test_charge_and_buy_prepeak_deficit(self):
        r = reward(Action.CHARGE_AND_BUY,
                   obs(soc=50, tariff=TariffPeriod.NP, conf=0.8, deficit=3.0))
        assert r == pytest.approx(2.7)

    def test_charge_and_buy_peak_is_zero(self):
        assert reward(Action.CHARGE_AND_BUY, obs(soc=50, tariff=TariffPeriod.P)) == 0.0

    def test_self_consumption_balanced_peak(self):
        r = reward(Action.SELF_CONSUMPTION,
                   obs(load=5.0, gen=4.95, tariff=TariffPeriod.P))
        assert r == pytest.approx(1.2)

    def test_discharge_and_sell_peak(self):
        r = reward(Action.DISCHARGE_AND_SELL,
                   obs(load=2.0, gen=5.0, soc=30, tariff=TariffPeriod.P, conf=0.6))
        assert r == pytest.approx(1.2)

    def test_sell_day(self):
        r = reward(Action.SELL, obs(load=2.0, gen=5.0, soc=95, tariff=TariffPeriod.D))
        assert r == pytest.approx(0.5)

    def test_buy_peak(self):
        r = reward(Action.BUY, obs(load=5.0, gen=1.0, soc=5, tariff=TariffPeriod.P))
        assert r == pytest.approx(0.25)

    # remaining branches, every action
    def test_charge_and_buy_night(self):
        r = reward(Action.CHARGE_AND_BUY,
                   obs(soc=40, tariff=TariffPeriod.N, conf=0.3))
        assert r == pytest.approx(0.8)

    def test_charge_and_buy_deficit_day(self):
        r = reward(Action.CHARGE_AND_BUY,
                   obs(load=5.0, gen=1.0, soc=40, tariff=TariffPeriod.D))
        assert r == pytest.approx(0.5)

    def test_charge_and_buy_full_battery_default(self):
        r = reward(Action.CHARGE_AND_BUY,
                   obs(load=5.0, gen=1.0, soc=95, tariff=TariffPeriod.N))
        assert r == 0.0

    def test_buy_day(self):
        r = reward(Action.BUY, obs(load=5.0, gen=1.0, soc=5, tariff=TariffPeriod.D))
        assert r == pytest.approx(0.5)

    def test_buy_with_charged_battery_default(self):
        assert reward(Action.BUY, obs(load=5.0, gen=1.0, soc=50)) == 0.0

    def test_sell_peak(self):
        r = reward(Action.SELL, obs(load=2.0, gen=5.0, soc=95, tariff=TariffPeriod.P))
        assert r == pytest.approx(0.75)

    def test_sell_without_surplus_default(self):
        assert reward(Action.SELL, obs(load=5.0, gen=2.0, soc=95)) == 0.0

    def test_discharge_and_sell_offpeak_full(self):
        r = reward(Action.DISCHARGE_AND_SELL,
                   obs(load=2.0, gen=5.0, soc=95, tariff=TariffPeriod.D))
        assert r == pytest.approx(0.5)

    def test_discharge_and_sell_offpeak_midsoc_default(self):
        r = reward(Action.DISCHARGE_AND_SELL,
                   obs(load=2.0, gen=5.0, soc=50, tariff=TariffPeriod.D))
        assert r == 0.0

    def test_discharge_and_buy_peak(self):
        r = reward(Action.DISCHARGE_AND_BUY,
                   obs(load=5.0, gen=1.0, soc=50, tariff=TariffPeriod.P, conf=1.0))
        assert r == pytest.approx(1.5)

    def test_discharge_and_buy_offpeak(self):
        r = reward(Action.DISCHARGE_AND_BUY,
                   obs(load=5.0, gen=1.0, soc=50, tariff=TariffPeriod.N))
        assert r == pytest.approx(0.5)

    def test_discharge_and_buy_empty_battery_default(self):
        r = reward(Action.DISCHARGE_AND_BUY,
                   obs(load=5.0, gen=1.0, soc=5, tariff=TariffPeriod.P))
        assert r == 0.0

    def test_self_consumption_balanced_offpeak(self):
        r = reward(Action.SELF_CONSUMPTION, obs(load=5.0, gen=5.0))
        assert r == pytest.approx(1.0)

    def test_self_consumption_near_balanced(self):
        r = reward(Action.SELF_CONSUMPTION, obs(load=5.0, gen=4.85))
        assert r == pytest.approx(0.5)

    def test_self_consumption_imbalanced_default(self):
        assert reward(Action.SELF_CONSUMPTION, obs(load=5.0, gen=1.0)) == 0.0

    def test_self_and_charge_prepeak(self):
        r = reward(Action.SELF_AND_CHARGE,
                   obs(load=2.0, gen=5.0, soc=40, tariff=TariffPeriod.NP, conf=0.9))
        assert r == pytest.approx(0.5 + 2.0 * 0.9 + 1.0)

    def test_self_and_charge_day(self):
        r = reward(Action.SELF_AND_CHARGE,
                   obs(load=2.0, gen=5.0, soc=40, tariff=TariffPeriod.D, conf=0.4))
        assert r == pytest.approx(0.7)

    def test_self_and_charge_peak_is_zero(self):
        r = reward(Action.SELF_AND_CHARGE,
                   obs(load=2.0, gen=5.0, soc=40, tariff=TariffPeriod.P, conf=1.0))
        assert r == 0.0

    def test_self_and_discharge_peak(self):
        r = reward(Action.SELF_AND_DISCHARGE,
                   obs(load=5.0, gen=1.0, soc=60, tariff=TariffPeriod.P, conf=0.2))
        assert r == pytest.approx((0.5 + 0.1) * 1.5)

    def test_self_and_discharge_offpeak(self):
        r = reward(Action.SELF_AND_DISCHARGE,
                   obs(load=5.0, gen=1.0, soc=60, tariff=TariffPeriod.D))
        assert r == pytest.approx(0.5)

    def test_self_and_discharge_low_soc_default(self):
        r = reward(Action.SELF_AND_DISCHARGE,
                   obs(load=5.0, gen=1.0, soc=10, tariff=TariffPeriod.P))
        assert r == 0.0


class TestRewardProperties:
    def test_guard_ordering_first_match_wins(self):
        # NP with a forecast deficit also satisfies the deficit-day guard;
        # the richer pre-peak branch must win.
        o = obs(load=5.0, gen=1.0, soc=50, tariff=TariffPeriod.NP,
                conf=0.8, deficit=2.0)
        assert reward(Action.CHARGE_AND_BUY, o) == pytest.approx(2.7)

    def test_peak_suppression_exhaustive(self):
        for soc in (0.0, 15.0, 50.0, 89.0, 95.0, 100.0):
            for gen, load in ((5.0, 1.0), (1.0, 5.0), (3.0, 3.0)):
                for conf in (0.0, 0.5, 1.0):
                    for deficit in (-2.0, 0.0, 4.0):
                        o = obs(load=load, gen=gen, soc=soc,
                                tariff=TariffPeriod.P, conf=conf, deficit=deficit)
                        assert reward(Action.CHARGE_AND_BUY, o) == 0.0
                        assert reward(Action.SELF_AND_CHARGE, o) == 0.0

    @settings(max_examples=2000, deadline=None)
    @given(st.sampled_from(list(Action)),
           st.floats(0, 50), st.floats(0, 50), st.floats(0, 100),
           st.sampled_from(list(TariffPeriod)),
           st.floats(0, 1), st.floats(-20, 20))
    def test_total_and_finite(self, action, load, gen, soc, tariff, conf, deficit):
        r = reward(action, obs(load=load, gen=gen, soc=soc, tariff=tariff,
                               conf=conf, deficit=deficit))
        assert math.isfinite(r) and not math.isnan(r)

    def test_total_and_finite_bulk(self, rng):
        actions = list(Action)
        periods = list(TariffPeriod)
        for _ in range(100_000 // 8):
            o = obs(load=float(rng.uniform(0, 50)), gen=float(rng.uniform(0, 50)),
                    soc=float(rng.uniform(0, 100)),
                    tariff=periods[rng.integers(0, 4)],
                    conf=float(rng.uniform(0, 1)),
                    deficit=float(rng.uniform(-20, 20)))
            for a in actions:
                r = reward(a, o)
                assert math.isfinite(r)

    @settings(max_examples=300, deadline=None)
    @given(st.sampled_from(list(Action)),
           st.floats(0, 50), st.floats(0, 50), st.floats(0, 100),
           st.sampled_from(list(TariffPeriod)), st.floats(-20, 20),
           st.floats(0, 1), st.floats(0, 1))
    def test_monotone_in_confidence(self, action, load, gen, soc, tariff,
                                    deficit, c1, c2):
        lo, hi = sorted((c1, c2))
        r_lo = reward(action, obs(load=load, gen=gen, soc=soc, tariff=tariff,
                                  conf=lo, deficit=deficit))
        r_hi = reward(action, obs(load=load, gen=gen, soc=soc, tariff=tariff,
                                  conf=hi, deficit=deficit))
        assert r_hi >= r_lo - 1e-12


class TestObservationValidation:
    def test_soc_out_of_range(self):
        with pytest.raises(ValueError):
            obs(soc=101.0)

    def test_confidence_out_of_range(self):
        with pytest.raises(ValueError):
            obs(conf=1.5)
