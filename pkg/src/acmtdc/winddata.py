"""Wind series: seeded synthetic generator and CSV import/export.

CSV schema: ``timestamp, wind_speed_mps, wind_power_mw`` at a fixed cadence,
timestamps in ISO 8601.  The synthetic series is a diurnal sinusoid plus
AR(1) noise plus sparse gusts that decay geometrically, mapped to power with
the cubic power curve of a reference farm.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import InsufficientData, ParseError
from .forecast import speed_to_power

BUNDLED_CONFIG = Path(__file__).with_name("data") / "wind_synthetic.json"


@dataclass(frozen=True)
class SyntheticWindConfig:
    n_steps: int = 4000
    step_minutes: float = 30.0
    start: str = "2024-01-01T00:00:00"
    mean_speed_mps: float = 9.0
    diurnal_amplitude_mps: float = 2.0
    diurnal_peak_hour: float = 15.0
    ar_coefficient: float = 0.95
    ar_sigma_mps: float = 0.6
    gust_probability: float = 0.02
    gust_magnitude_mps: float = 3.0
    gust_decay: float = 0.6
    rated_mw: float = 250.0
    cut_in_mps: float = 3.0
    rated_mps: float = 12.0
    cut_out_mps: float = 25.0
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticWindConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParseError(f"unknown synthetic wind settings: {sorted(unknown)}")
        return cls(**d)


@dataclass
class WindSeries:
    timestamps: np.ndarray  # datetime64[s]
    speed_mps: np.ndarray
    power_mw: np.ndarray

    def __len__(self) -> int:
        return self.speed_mps.size

    @property
    def hour_of_day(self) -> np.ndarray:
        secs = (self.timestamps - self.timestamps.astype("datetime64[D]")).astype("timedelta64[s]")
        return secs.astype(float) / 3600.0

    @property
    def step_minutes(self) -> float:
        if len(self) < 2:
            return float("nan")
        return float((self.timestamps[1] - self.timestamps[0]) / np.timedelta64(1, "m"))

    def slice(self, start: int, stop: int | None = None) -> "WindSeries":
        s = np.s_[start:stop]
        return WindSeries(self.timestamps[s], self.speed_mps[s], self.power_mw[s])


def load_config(path=None) -> SyntheticWindConfig:
    path = Path(path) if path is not None else BUNDLED_CONFIG
    return SyntheticWindConfig.from_dict(json.loads(path.read_text()))


def generate_wind(config: SyntheticWindConfig = SyntheticWindConfig(), seed: int | None = None) -> WindSeries:
    rng = np.random.default_rng(config.seed if seed is None else seed)
    n = config.n_steps
    step = np.timedelta64(int(round(config.step_minutes * 60)), "s")
    ts = np.datetime64(config.start, "s") + step * np.arange(n)
    hours = ((ts - ts.astype("datetime64[D]")).astype("timedelta64[s]").astype(float)) / 3600.0
    diurnal = config.diurnal_amplitude_mps * np.cos(2 * np.pi * (hours - config.diurnal_peak_hour) / 24.0)
    eps = rng.normal(0.0, config.ar_sigma_mps, n)
    gust_on = rng.random(n) < config.gust_probability
    gust_size = rng.exponential(config.gust_magnitude_mps, n)
    ar = np.zeros(n)
    gust = np.zeros(n)
    for t in range(1, n):
        ar[t] = config.ar_coefficient * ar[t - 1] + eps[t]
        gust[t] = config.gust_decay * gust[t - 1] + (gust_size[t] if gust_on[t] else 0.0)
    speed = np.maximum(config.mean_speed_mps + diurnal + ar + gust, 0.0)
    power = speed_to_power(speed, config.rated_mw, config.cut_in_mps, config.rated_mps, config.cut_out_mps)
    return WindSeries(ts, speed, np.asarray(power, dtype=float))


def write_wind_csv(series: WindSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "wind_speed_mps", "wind_power_mw"])
        for t, s, p in zip(series.timestamps, series.speed_mps, series.power_mw):
            w.writerow([str(t), repr(float(s)), repr(float(p))])


def read_wind_csv(path) -> WindSeries:
    """Read a wind CSV; the cadence must be constant."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"timestamp", "wind_speed_mps", "wind_power_mw"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ParseError(f"{path}: expected columns {sorted(need)}, got {reader.fieldnames}")
        ts, sp, pw = [], [], []
        for i, row in enumerate(reader, start=2):
            try:
                ts.append(np.datetime64(row["timestamp"].strip(), "s"))
                sp.append(float(row["wind_speed_mps"]))
                pw.append(float(row["wind_power_mw"]))
            except (ValueError, TypeError) as exc:
                raise ParseError(f"{path}:{i}: {exc}") from None
    if not ts:
        raise InsufficientData(f"{path}: no rows")
    ts = np.array(ts, dtype="datetime64[s]")
    if ts.size > 1:
        d = np.diff(ts)
        if np.any(d != d[0]) or d[0] <= np.timedelta64(0, "s"):
            raise ParseError(f"{path}: timestamps are not at a fixed, increasing cadence")
    speed = np.array(sp)
    if np.any(speed < 0):
        raise ParseError(f"{path}: negative wind speed")
    return WindSeries(ts, speed, np.array(pw))


def config_to_dict(config: SyntheticWindConfig) -> dict:
    return asdict(config)
