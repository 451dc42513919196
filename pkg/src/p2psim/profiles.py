"""Prosumer load/PV profile generation, ingestion, and feature engineering.

Synthetic hourly profiles for a small Finnish-style energy community
(dairy farms, households, households with EVs), a closed-form daylight
model for high-latitude PV shaping, cyclical/one-hot feature encodings,
and sliding-window supervised datasets for the forecaster.
"""

from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum

import numpy as np

HOURS_PER_YEAR = 8760
HELSINKI_LATITUDE = 60.17

# Annual PV energy target as a fraction of annual load.
PV_LOAD_FRACTION = 0.40

# Site yield used to convert an annual energy target into panel capacity.
DEFAULT_ANNUAL_YIELD_KWH_PER_KWP = 900.0


class ProsumerKind(Enum):
    DAIRY_FARM = "DairyFarm"
    HOUSEHOLD = "Household"
    HOUSEHOLD_WITH_EV = "HouseholdWithEV"


# Ordinal size encoding: households smallest, farms largest.
_SIZE_CATEGORY = {
    ProsumerKind.HOUSEHOLD: 0,
    ProsumerKind.HOUSEHOLD_WITH_EV: 1,
    ProsumerKind.DAIRY_FARM: 2,
}


@dataclass(frozen=True)
class ProsumerSpec:
    id: str
    kind: ProsumerKind
    annual_load: float          # kWh/year
    pv_capacity: float = 0.0    # kWp; 0 means "size from annual load"
    battery_capacity: float = 0.0  # kWh

    def __post_init__(self):
        if self.annual_load <= 0:
            raise ValueError(f"annual_load must be positive, got {self.annual_load}")
        if self.pv_capacity < 0 or self.battery_capacity < 0:
            raise ValueError("pv_capacity and battery_capacity must be nonnegative")


def default_community() -> list[ProsumerSpec]:
    """4 dairy farms + 4 households + 2 EV households."""
    specs = []
    for i in range(4):
        specs.append(ProsumerSpec(f"farm{i + 1}", ProsumerKind.DAIRY_FARM,
                                  annual_load=60000.0, battery_capacity=30.0))
    for i in range(4):
        specs.append(ProsumerSpec(f"house{i + 1}", ProsumerKind.HOUSEHOLD,
                                  annual_load=8000.0, battery_capacity=10.0))
    for i in range(2):
        specs.append(ProsumerSpec(f"evhouse{i + 1}", ProsumerKind.HOUSEHOLD_WITH_EV,
                                  annual_load=12000.0, battery_capacity=10.0))
    return specs


@dataclass
class EnergyProfile:
    prosumer_id: str
    timestamps: list[datetime]
    load: np.ndarray        # kWh per hour
    generation: np.ndarray  # kWh per hour

    def __post_init__(self):
        self.load = np.asarray(self.load, dtype=float)
        self.generation = np.asarray(self.generation, dtype=float)
        n = len(self.timestamps)
        if len(self.load) != n or len(self.generation) != n:
            raise ValueError("timestamps, load, and generation must be aligned")
        if np.any(self.load < 0) or np.any(self.generation < 0):
            raise ValueError("load and generation must be nonnegative")

    def __len__(self) -> int:
        return len(self.timestamps)


def size_pv_capacity(annual_load: float,
                     annual_yield: float = DEFAULT_ANNUAL_YIELD_KWH_PER_KWP) -> float:
    """Panel capacity (kWp) whose annual energy is 40% of the annual load."""
    if annual_load <= 0:
        raise ValueError(f"annual_load must be positive, got {annual_load}")
    return PV_LOAD_FRACTION * annual_load / annual_yield


def solar_declination(day_of_year: int) -> float:
    """Solar declination in degrees for a given day of year."""
    return 23.44 * math.sin(2.0 * math.pi * (day_of_year - 81) / 365.0)


def compute_daylight(latitude: float, day_of_year: int) -> tuple[float, float, float]:
    """(sunrise, sunset, daylight_hours) in local solar time.

    Uses the hour-angle relation cos(w0) = -tan(lat) tan(decl).  Not valid
    inside the polar circles (no polar day/night handling).
    """
    if abs(latitude) >= 66.5:
        raise ValueError(f"latitude {latitude} is in the polar region")
    if not 1 <= day_of_year <= 366:
        raise ValueError(f"day_of_year out of range: {day_of_year}")
    decl = math.radians(solar_declination(day_of_year))
    lat = math.radians(latitude)
    cos_w0 = -math.tan(lat) * math.tan(decl)
    cos_w0 = min(1.0, max(-1.0, cos_w0))
    w0 = math.degrees(math.acos(cos_w0))
    daylight_hours = 2.0 * w0 / 15.0
    sunrise = 12.0 - daylight_hours / 2.0
    sunset = 12.0 + daylight_hours / 2.0
    return sunrise, sunset, daylight_hours


def daylight_flag(latitude: float, day_of_year: int, hour: float) -> int:
    """1 iff the local hour falls in [sunrise, sunset)."""
    sunrise, sunset, _ = compute_daylight(latitude, day_of_year)
    return 1 if sunrise <= hour < sunset else 0


def max_yearly_daylight(latitude: float) -> float:
    return max(compute_daylight(latitude, d)[2] for d in range(1, 366))


def norm_daylight(latitude: float, day_of_year: int) -> float:
    """Day length normalized by the yearly maximum, in (0, 1]."""
    return compute_daylight(latitude, day_of_year)[2] / max_yearly_daylight(latitude)


def _seasonal_load_multiplier(day_of_year: np.ndarray) -> np.ndarray:
    # Winter-peaking consumption (heating climate); +-25% over the year.
    return 1.0 + 0.25 * np.cos(2.0 * np.pi * (day_of_year - 15) / 365.0)


def _diurnal_base(kind: ProsumerKind, hour: np.ndarray) -> np.ndarray:
    h = hour
    if kind == ProsumerKind.DAIRY_FARM:
        # Milking peaks early morning and early evening on a high base load.
        base = (0.6
                + 0.8 * np.exp(-0.5 * ((h - 6.0) / 1.5) ** 2)
                + 0.7 * np.exp(-0.5 * ((h - 17.0) / 1.5) ** 2))
    else:
        # Household: small morning bump, larger evening peak, low night.
        base = (0.3
                + 0.4 * np.exp(-0.5 * ((h - 7.5) / 1.5) ** 2)
                + 0.8 * np.exp(-0.5 * ((h - 19.0) / 2.0) ** 2))
    return base


def generate_synthetic_profiles(specs: list[ProsumerSpec], seed: int,
                                latitude: float = HELSINKI_LATITUDE,
                                start: datetime | None = None,
                                annual_yield: float = DEFAULT_ANNUAL_YIELD_KWH_PER_KWP,
                                ) -> list[EnergyProfile]:
    """One year of hourly load and PV per prosumer, deterministic per seed.

    Load = diurnal base curve x seasonal multiplier (+ EV evening charging
    block for EV households), normalized to the annual load, with uniform
    +-10% multiplicative noise.  PV = clear-sky bell over daylight hours x
    seasonal amplitude x multiplicative weather noise, normalized so annual
    energy equals pv_capacity x annual yield.
    """
    if not specs:
        raise ValueError("specs must be non-empty")
    if start is None:
        start = datetime(2023, 1, 1)

    timestamps = [start + timedelta(hours=h) for h in range(HOURS_PER_YEAR)]
    hour = np.array([t.hour for t in timestamps], dtype=float)
    doy = np.array([t.timetuple().tm_yday for t in timestamps])
    weekday = np.array([t.weekday() for t in timestamps])

    daylight = np.zeros((366 + 1, 3))
    for d in range(1, 367):
        try:
            daylight[d] = compute_daylight(latitude, d)
        except ValueError:
            raise
    sunrise = daylight[doy, 0]
    sunset = daylight[doy, 1]
    day_len = daylight[doy, 2]
    is_day = (hour >= sunrise) & (hour < sunset)

    profiles = []
    for spec in specs:
        rng = np.random.default_rng(
            np.random.SeedSequence([seed, zlib.crc32(spec.id.encode())]))

        shape = _diurnal_base(spec.kind, hour) * _seasonal_load_multiplier(doy)
        if spec.kind == ProsumerKind.HOUSEHOLD_WITH_EV:
            ev = np.where((hour >= 18) & (hour <= 21) & (weekday < 5), 3.0, 0.0)
            # Scale the non-EV part so the EV block keeps its physical size.
            non_ev_target = spec.annual_load - ev.sum()
            if non_ev_target <= 0:
                raise ValueError(f"annual_load too small for EV block: {spec.id}")
            load = shape * (non_ev_target / shape.sum()) + ev
        else:
            load = shape * (spec.annual_load / shape.sum())
        load = load * rng.uniform(0.9, 1.1, size=HOURS_PER_YEAR)

        pv_capacity = spec.pv_capacity or size_pv_capacity(spec.annual_load, annual_yield)
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(day_len > 0, (hour - sunrise) / np.maximum(day_len, 1e-9), 0.0)
        bell = np.where(is_day, np.sin(np.pi * np.clip(frac, 0.0, 1.0)) ** 1.5, 0.0)
        seasonal_amp = day_len / day_len.max()
        gen = bell * seasonal_amp * rng.uniform(0.5, 1.5, size=HOURS_PER_YEAR)
        gen = np.where(is_day, gen, 0.0)
        annual_target = pv_capacity * annual_yield
        if gen.sum() > 0:
            gen = gen * (annual_target / gen.sum())

        profiles.append(EnergyProfile(spec.id, timestamps, load, gen))
    return profiles


# --- feature encoding -------------------------------------------------------

SEASONS = ("winter", "spring", "summer", "autumn")


def season_of_month(month: int) -> int:
    """Meteorological season index: 0 winter (Dec-Feb) .. 3 autumn."""
    return {12: 0, 1: 0, 2: 0, 3: 1, 4: 1, 5: 1,
            6: 2, 7: 2, 8: 2, 9: 3, 10: 3, 11: 3}[month]


@dataclass(frozen=True)
class FeatureVector:
    hour_sin: float
    hour_cos: float
    day_sin: float
    day_cos: float
    season_onehot: tuple[int, int, int, int]
    size_category: int
    daylight_flag: int
    norm_daylight: float
    lagged_load: float
    lagged_generation: float

    def as_array(self) -> np.ndarray:
        return np.array([self.hour_sin, self.hour_cos, self.day_sin, self.day_cos,
                         *self.season_onehot, self.size_category,
                         self.daylight_flag, self.norm_daylight,
                         self.lagged_load, self.lagged_generation])


FEATURE_DIM = 13
# Column indices within as_array().
DAYLIGHT_FLAG_COLUMN = 9
NORM_DAYLIGHT_COLUMN = 10
# Lagged (normalizable) feature columns.
LAGGED_COLUMNS = (11, 12)


def encode_features(timestamp: datetime, lagged_load: float, lagged_generation: float,
                    spec: ProsumerSpec, latitude: float = HELSINKI_LATITUDE,
                    max_daylight: float | None = None) -> FeatureVector:
    """Deterministic feature encoding for one timestamp.

    Lagged values are passed through as given; z-scoring against train-split
    statistics happens in build_windows.
    """
    if lagged_load is None or lagged_generation is None:
        raise ValueError("insufficient history: lagged values unavailable")
    hour = timestamp.hour
    doy = timestamp.timetuple().tm_yday
    season = season_of_month(timestamp.month)
    onehot = tuple(1 if i == season else 0 for i in range(4))
    if max_daylight is None:
        max_daylight = max_yearly_daylight(latitude)
    sunrise, sunset, hours_of_day = compute_daylight(latitude, doy)
    flag = 1 if sunrise <= hour < sunset else 0
    return FeatureVector(
        hour_sin=math.sin(2.0 * math.pi * hour / 24.0),
        hour_cos=math.cos(2.0 * math.pi * hour / 24.0),
        day_sin=math.sin(2.0 * math.pi * doy / 365.0),
        day_cos=math.cos(2.0 * math.pi * doy / 365.0),
        season_onehot=onehot,
        size_category=_SIZE_CATEGORY[spec.kind],
        daylight_flag=flag,
        norm_daylight=hours_of_day / max_daylight,
        lagged_load=lagged_load,
        lagged_generation=lagged_generation,
    )


def feature_matrix(profile: EnergyProfile, spec: ProsumerSpec,
                   latitude: float = HELSINKI_LATITUDE) -> np.ndarray:
    """(T-1) x FEATURE_DIM matrix; row t describes timestamp t+1 with lag t.

    The first timestamp has no lag history and is dropped.
    """
    max_dl = max_yearly_daylight(latitude)
    rows = []
    for t in range(1, len(profile)):
        fv = encode_features(profile.timestamps[t], profile.load[t - 1],
                             profile.generation[t - 1], spec, latitude, max_dl)
        rows.append(fv.as_array())
    return np.array(rows)


# --- sliding windows --------------------------------------------------------

@dataclass
class WindowedDataset:
    inputs: np.ndarray       # (n, window, feature_dim)
    targets: np.ndarray      # (n, horizon, 2) -> (load, pv) in kWh
    exo_daylight: np.ndarray  # (n, horizon) binary flags for target steps
    exo_norm_daylight: np.ndarray  # (n, horizon)
    horizon: int
    window: int
    train_slice: slice = field(default=None)
    val_slice: slice = field(default=None)
    test_slice: slice = field(default=None)
    norm_mean: np.ndarray = field(default=None)
    norm_std: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return len(self.inputs)

    def split(self, which: str) -> "WindowedDataset":
        sl = {"train": self.train_slice, "val": self.val_slice,
              "test": self.test_slice}[which]
        return WindowedDataset(self.inputs[sl], self.targets[sl],
                               self.exo_daylight[sl], self.exo_norm_daylight[sl],
                               self.horizon, self.window,
                               norm_mean=self.norm_mean, norm_std=self.norm_std)


def window_count(length: int, window: int, horizon: int) -> int:
    return length - window - horizon + 1


def build_windows(features: np.ndarray, load: np.ndarray, generation: np.ndarray,
                  exo_flag: np.ndarray, exo_norm: np.ndarray,
                  window: int, horizon: int,
                  split_fracs: tuple[float, float] = (0.70, 0.15),
                  normalize: bool = True) -> WindowedDataset:
    """Sliding-window dataset with chronological 70/15/15 split.

    Lagged-feature columns are z-scored with statistics taken from the train
    split only; targets stay in physical kWh.
    """
    if window < 1 or horizon < 1:
        raise ValueError("window and horizon must be >= 1")
    n_steps = len(features)
    if not (len(load) == len(generation) == len(exo_flag) == len(exo_norm) == n_steps):
        raise ValueError("feature and target series must be aligned")
    n = window_count(n_steps, window, horizon)
    if n < 1:
        raise ValueError(
            f"series of length {n_steps} too short for window {window} + horizon {horizon}")

    inputs = np.stack([features[i:i + window] for i in range(n)])
    targets = np.stack([
        np.column_stack([load[i + window:i + window + horizon],
                         generation[i + window:i + window + horizon]])
        for i in range(n)])
    flags = np.stack([exo_flag[i + window:i + window + horizon] for i in range(n)])
    norms = np.stack([exo_norm[i + window:i + window + horizon] for i in range(n)])

    n_train = int(n * split_fracs[0])
    n_val = int(n * split_fracs[1])
    ds = WindowedDataset(inputs, targets, flags, norms, horizon, window,
                         train_slice=slice(0, n_train),
                         val_slice=slice(n_train, n_train + n_val),
                         test_slice=slice(n_train + n_val, n))

    if normalize and n_train > 0:
        cols = list(LAGGED_COLUMNS)
        train_flat = inputs[:n_train].reshape(-1, inputs.shape[-1])
        mean = np.zeros(inputs.shape[-1])
        std = np.ones(inputs.shape[-1])
        mean[cols] = train_flat[:, cols].mean(axis=0)
        std[cols] = train_flat[:, cols].std(axis=0)
        std[std < 1e-9] = 1.0
        ds.inputs = (inputs - mean) / std
        ds.norm_mean, ds.norm_std = mean, std
    return ds


def build_profile_dataset(profile: EnergyProfile, spec: ProsumerSpec,
                          window: int = 24, horizon: int = 3,
                          latitude: float = HELSINKI_LATITUDE,
                          normalize: bool = True) -> WindowedDataset:
    """Feature encoding + windowing for one profile."""
    feats = feature_matrix(profile, spec, latitude)
    load = profile.load[1:]
    gen = profile.generation[1:]
    flags = feats[:, DAYLIGHT_FLAG_COLUMN]
    norms = feats[:, NORM_DAYLIGHT_COLUMN]
    return build_windows(feats, load, gen, flags, norms, window, horizon,
                         normalize=normalize)


def build_community_dataset(profiles: list[EnergyProfile],
                            specs: dict[str, ProsumerSpec],
                            window: int = 24, horizon: int = 3,
                            latitude: float = HELSINKI_LATITUDE) -> WindowedDataset:
    """One shared dataset over all prosumers (size category disambiguates).

    Chronological split happens per prosumer before concatenation, so no
    train window leaks into another prosumer's validation or test span.
    Lagged features are z-scored with combined train-split statistics.
    """
    per = [build_profile_dataset(p, specs[p.prosumer_id], window, horizon,
                                 latitude, normalize=False) for p in profiles]
    parts = {w: [ds.split(w) for ds in per] for w in ("train", "val", "test")}

    def cat(attr, which):
        return np.concatenate([getattr(d, attr) for d in parts[which]])

    inputs = np.concatenate([cat("inputs", w) for w in ("train", "val", "test")])
    targets = np.concatenate([cat("targets", w) for w in ("train", "val", "test")])
    flags = np.concatenate([cat("exo_daylight", w) for w in ("train", "val", "test")])
    norms = np.concatenate([cat("exo_norm_daylight", w)
                            for w in ("train", "val", "test")])
    n_train = sum(len(d) for d in parts["train"])
    n_val = sum(len(d) for d in parts["val"])
    ds = WindowedDataset(inputs, targets, flags, norms, horizon, window,
                         train_slice=slice(0, n_train),
                         val_slice=slice(n_train, n_train + n_val),
                         test_slice=slice(n_train + n_val, len(inputs)))
    cols = list(LAGGED_COLUMNS)
    train_flat = inputs[:n_train].reshape(-1, inputs.shape[-1])
    mean = np.zeros(inputs.shape[-1])
    std = np.ones(inputs.shape[-1])
    mean[cols] = train_flat[:, cols].mean(axis=0)
    std[cols] = train_flat[:, cols].std(axis=0)
    std[std < 1e-9] = 1.0
    ds.inputs = (inputs - mean) / std
    ds.norm_mean, ds.norm_std = mean, std
    return ds


# --- CSV I/O ----------------------------------------------------------------

CSV_COLUMNS = ("prosumer_id", "timestamp", "load_kwh", "generation_kwh")


def write_profiles_csv(path, profiles: list[EnergyProfile]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for p in profiles:
            for t, load, gen in zip(p.timestamps, p.load, p.generation):
                w.writerow([p.prosumer_id, t.isoformat(), repr(float(load)),
                            repr(float(gen))])


def load_profiles_csv(path) -> list[EnergyProfile]:
    """Parse and validate a profile CSV; rejects gaps and negative energies."""
    raw: dict[str, list[tuple[datetime, float, float]]] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise ValueError(f"bad header, expected {CSV_COLUMNS}, got {header}")
        for i, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise ValueError(f"row {i}: expected 4 columns, got {len(row)}")
            pid, ts_str, load_str, gen_str = row
            try:
                ts = datetime.fromisoformat(ts_str)
                load = float(load_str)
                gen = float(gen_str)
            except ValueError as e:
                raise ValueError(f"row {i}: {e}") from None
            if load < 0 or gen < 0:
                raise ValueError(f"row {i}: negative energy (load={load}, gen={gen})")
            raw.setdefault(pid, []).append((ts, load, gen))

    profiles = []
    for pid, rows in raw.items():
        timestamps = [r[0] for r in rows]
        for k in range(1, len(timestamps)):
            delta = timestamps[k] - timestamps[k - 1]
            if delta != timedelta(hours=1):
                raise ValueError(
                    f"prosumer {pid}: non-hourly cadence at {timestamps[k].isoformat()}"
                    f" (gap of {delta})")
        profiles.append(EnergyProfile(pid, timestamps,
                                      np.array([r[1] for r in rows]),
                                      np.array([r[2] for r in rows])))
    return profiles
