import numpy as np
import pytest

from acmtdc.errors import InsufficientData, ParseError
from acmtdc.forecast import speed_to_power
from acmtdc.winddata import (SyntheticWindConfig, generate_wind, load_config, read_wind_csv,
                             write_wind_csv)


def test_bundled_config_loads():
    cfg = load_config()
    assert cfg.n_steps >= 48 + 24
    assert cfg.step_minutes == 30.0


def test_generator_deterministic():
    a = generate_wind(SyntheticWindConfig(n_steps=500), seed=3)
    b = generate_wind(SyntheticWindConfig(n_steps=500), seed=3)
    np.testing.assert_array_equal(a.speed_mps, b.speed_mps)
    c = generate_wind(SyntheticWindConfig(n_steps=500), seed=4)
    assert not np.array_equal(a.speed_mps, c.speed_mps)


def test_series_properties():
    cfg = SyntheticWindConfig(n_steps=2000)
    s = generate_wind(cfg)
    assert len(s) == 2000
    assert np.all(s.speed_mps >= 0)
    assert s.step_minutes == 30.0
    np.testing.assert_array_equal(s.power_mw, speed_to_power(s.speed_mps, cfg.rated_mw))
    assert s.hour_of_day[1] == 0.5
    # diurnal term: afternoon hours are windier on average
    h = s.hour_of_day
    assert s.speed_mps[(h >= 12) & (h < 18)].mean() > s.speed_mps[(h >= 0) & (h < 6)].mean()


def test_csv_round_trip(tmp_path):
    s = generate_wind(SyntheticWindConfig(n_steps=100))
    p = tmp_path / "w.csv"
    write_wind_csv(s, p)
    assert p.read_text().splitlines()[0] == "timestamp,wind_speed_mps,wind_power_mw"
    again = read_wind_csv(p)
    np.testing.assert_array_equal(again.speed_mps, s.speed_mps)
    np.testing.assert_array_equal(again.power_mw, s.power_mw)
    np.testing.assert_array_equal(again.timestamps, s.timestamps)


@pytest.mark.parametrize("text, err", [
    ("a,b,c\n1,2,3\n", ParseError),
    ("timestamp,wind_speed_mps,wind_power_mw\n", InsufficientData),
    ("timestamp,wind_speed_mps,wind_power_mw\n2024-01-01T00:00:00,x,1\n", ParseError),
    ("timestamp,wind_speed_mps,wind_power_mw\n2024-01-01T00:00:00,-1,1\n", ParseError),
    ("timestamp,wind_speed_mps,wind_power_mw\n2024-01-01T00:00:00,1,1\n"
     "2024-01-01T00:30:00,1,1\n2024-01-01T02:00:00,1,1\n", ParseError),
])
def test_bad_csv(tmp_path, text, err):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(err):
        read_wind_csv(p)


def test_unknown_config_key():
    with pytest.raises(ParseError):
        SyntheticWindConfig.from_dict({"n_steps": 10, "bogus": 1})
