from __future__ import annotations

import itertools
import json

import pytest

from crashground.config import FallbackMode, RunConfig, Workers, load_config_file, resolve_config
from crashground.types import ConfigError


def test_defaults():
    c = RunConfig()
    assert (c.window_delta, c.tau, c.margin, c.crop_factor) == (3.0, 0.3, 10.0, 2.5)
    assert (c.sigma_t, c.sigma_x, c.sigma_y) == (1.0, 0.127, 0.119)
    assert c.workers == Workers(5, 5, 10) and c.max_retries == 3
    assert c.use_pass2_time and c.use_pass2_space and c.use_specialist_type
    assert c.fallback_mode is FallbackMode.NAIVE_FILL


@pytest.mark.parametrize("kw", [
    dict(window_delta=0), dict(tau=0), dict(margin=-1), dict(crop_factor=1.0), dict(sigma_t=0),
    dict(sigma_x=-1), dict(sigma_y=0), dict(workers=Workers(0, 5, 10)), dict(max_retries=-1),
])
def test_invariants_enforced(kw):
    with pytest.raises(ConfigError):
        RunConfig(**kw)


NON_CONFLICTING = [{"tau": 0.5}, {"margin": 20}, {"workers": {"typing": 3}}, {"use_specialist_type": False}]


@pytest.mark.parametrize("order", list(itertools.permutations(range(len(NON_CONFLICTING)))))
def test_order_independent_for_disjoint_layers(order):
    c = resolve_config(*[NON_CONFLICTING[i] for i in order])
    assert (c.tau, c.margin, c.workers, c.use_specialist_type) == (0.5, 20.0, Workers(5, 5, 3), False)


@pytest.mark.parametrize("defaults_tau,file_tau,flag_tau,expected", [
    (None, None, None, 0.3),
    (None, 0.5, None, 0.5),
    (None, None, 0.2, 0.2),
    (None, 0.5, 0.2, 0.2),
    (0.4, 0.5, None, 0.5),
    (0.4, None, None, 0.4),
])
def test_last_writer_wins(defaults_tau, file_tau, flag_tau, expected):
    layers = [{"tau": v} if v is not None else {} for v in (defaults_tau, file_tau, flag_tau)]
    assert resolve_config(*layers).tau == expected


def test_workers_forms():
    assert resolve_config({"workers": [1, 2, 3]}).workers == Workers(1, 2, 3)
    assert resolve_config({"workers.pass2": 7}).workers == Workers(5, 7, 10)
    assert resolve_config({"workers": {"pass1": 2}}, {"workers": {"typing": 4}}).workers == Workers(2, 5, 4)


@pytest.mark.parametrize("layer", [{"nope": 1}, {"workers": {"gpu": 1}}, {"workers.gpu": 1},
                                   {"use_pass2_time": "yes"}, {"fallback_mode": "physics"}, {"tau": "fast"}])
def test_bad_layers(layer):
    with pytest.raises(ConfigError):
        resolve_config(layer)


def test_json_round_trip(tmp_path):
    c = resolve_config({"tau": 0.2, "fallback_mode": "plugin", "fallback_cmd": "x", "workers": [2, 2, 2]})
    path = tmp_path / "c.json"
    path.write_text(c.to_json())
    assert resolve_config(load_config_file(path)) == c
    assert json.loads(c.to_json())["fallback_mode"] == "plugin"


def test_load_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "bad.json")
    (tmp_path / "list.json").write_text("[]")
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "list.json")
