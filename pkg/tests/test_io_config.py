import hashlib
import json
import math

import numpy as np
import pytest

from clusterlab.config import ConfigError, from_dict, load_config, parse_text
from clusterlab.experiments import REGISTRY
from clusterlab.io import format_value, load_array, read_rows, rle_decode, rle_encode, save_array, write_rows
from clusterlab.rng import stream


@pytest.mark.parametrize("seed", range(6))
def test_rle_round_trip(seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((7, 13)) < [0.0, 0.3, 0.5, 0.9, 1.0, 0.05][seed]
    enc = rle_encode(mask)
    assert sum(enc["runs"]) == mask.size
    assert np.array_equal(rle_decode(enc), mask)


def test_rle_known_runs():
    assert rle_encode(np.array([True, True, False, True]))["runs"] == [0, 2, 1, 1]
    assert rle_encode(np.array([False, False]))["runs"] == [2]


def test_array_sidecar(tmp_path):
    a = np.arange(6.0).reshape(2, 3)
    p = save_array(tmp_path / "x", a, lam=64.0, p=math.inf)
    b, meta = load_array(p)
    assert np.array_equal(a, b)
    assert meta == {"shape": [2, 3], "dtype": "float64", "lam": 64.0, "p": "inf"}


def test_csv_is_sorted_and_stable(tmp_path):
    rows = [dict(a=2, b=0.1, c=True), dict(a=1, b=math.inf, c=False), dict(a=10, b=1 / 3, c=None)]
    p1 = write_rows(tmp_path / "1.csv", rows, ["a", "b", "c"], key=["a"])
    p2 = write_rows(tmp_path / "2.csv", rows[::-1], ["a", "b", "c"], key=["a"])
    assert p1.read_bytes() == p2.read_bytes()
    assert p1.read_text().splitlines() == ["a,b,c", "1,inf,false", "2,0.1,true", f"10,{1 / 3!r},"]
    back = read_rows(p1)
    assert float(back[2]["b"]) == 1 / 3  # repr round-trips exactly


def test_format_value():
    assert format_value(np.float64(0.1)) == "0.1"
    assert format_value(np.int64(3)) == "3"
    assert format_value(-math.inf) == "-inf"
    assert format_value(np.bool_(True)) == "true"


def test_streams_are_keyed_not_sequential():
    a = stream(5, "x", 1).standard_normal(4)
    stream(5, "y").standard_normal(100)
    assert np.array_equal(a, stream(5, "x", 1).standard_normal(4))
    assert not np.array_equal(a, stream(5, "x", 2).standard_normal(4))
    assert not np.array_equal(a, stream(6, "x", 1).standard_normal(4))
    assert np.array_equal(stream(None).random(3), stream(None).random(3))


# ------------------------------------------------------------------ config


def test_defaults_filled():
    cfg = from_dict({"experiment": "cluster_sweep"}, REGISTRY)
    assert cfg.lambda_list == [8, 12, 16, 24, 32]
    assert cfg.p_list == [2.0, 6.0, math.inf]
    assert cfg.to_dict()["p_list"] == [2.0, 6.0, "inf"]


def test_toml_and_json_agree(tmp_path):
    (tmp_path / "c.toml").write_text('experiment = "tube_overlap"\nlambda_list = [64, 216]\nseed = 3\n')
    (tmp_path / "c.json").write_text(json.dumps({"experiment": "tube_overlap", "lambda_list": [64, 216], "seed": 3}))
    a = load_config(tmp_path / "c.toml", REGISTRY).to_dict()
    b = load_config(tmp_path / "c.json", REGISTRY).to_dict()
    assert a == b


@pytest.mark.parametrize("raw, field", [
    ({"experiment": "nope"}, "experiment"),
    ({}, "experiment"),
    ({"experiment": "flat_oracle", "bogus": 1}, "bogus"),
    ({"experiment": "flat_oracle", "metric": "sphere"}, "metric"),
    ({"experiment": "flat_oracle", "n_x": 1000}, "n_x"),
    ({"experiment": "flat_oracle", "n_x": True}, "n_x"),
    ({"experiment": "flat_oracle", "dt": 0.01}, "dt"),
    ({"experiment": "flat_oracle", "lambda_list": []}, "lambda_list"),
    ({"experiment": "bilinear_sweep", "theta_list": [1]}, "theta_list"),
    ({"experiment": "cluster_sweep", "p_list": [1]}, "p_list"),
    ({"experiment": "cluster_sweep", "p_list": ["x"]}, "p_list"),
    ({"experiment": "cluster_sweep", "lambda_list": [8, 12, 16]}, "lambda_list"),
    ({"experiment": "cluster_sweep", "lambda_list": [8, 16, 40]}, "lambda_list"),
    ({"experiment": "cluster_sweep", "n_grid": 256}, "n_grid"),
    ({"experiment": "almost_orthogonality", "m": 0}, "m"),
    ({"experiment": "flat_oracle", "seed": -1}, "seed"),
])
def test_invalid_fields_are_named(raw, field):
    with pytest.raises(ConfigError) as err:
        from_dict(raw, REGISTRY)
    assert any(line.startswith(field) for line in err.value.problems)


def test_all_problems_reported_together():
    with pytest.raises(ConfigError) as err:
        from_dict({"experiment": "flat_oracle", "n_x": 1000, "metric": "sphere", "seed": -2}, REGISTRY)
    assert {line.split(":")[0] for line in err.value.problems} == {"n_x", "metric", "seed"}


def test_parse_errors():
    with pytest.raises(ConfigError):
        parse_text("experiment = ", ".toml")
    with pytest.raises(ConfigError) as err:
        parse_text('{"experiment": \n,}', ".json")
    assert err.value.problems[0].startswith("line 2")


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml", REGISTRY)
