import json

import pytest

from pegp.config import config_from_dict, load_config
from pegp.errors import ValidationError


def test_defaults_validate():
    cfg = config_from_dict({})
    assert cfg.sampling.seeds == [0, 1, 2, 3, 4]
    assert cfg.sweep.methods == ["asm", "rotated_gp", "pegp_lwr", "pegp_arz"]


@pytest.mark.parametrize("doc", [
    {"bogus": 1},
    {"scenario": {"colour": "red"}},
    {"model": {"not_a_field": 1}},
    {"sweep": {"overrides": {"pegp_lwr": {"Mx": 3}}}},
    {"baselines": {"asm": {"sigma_q": 1}}},
])
def test_unknown_keys_rejected(doc):
    with pytest.raises(ValidationError, match="unknown"):
        config_from_dict(doc)


@pytest.mark.parametrize("doc", [
    {"model": {"M": "many"}},
    {"model": {"M": True}},
    {"sampling": {"seeds": 3}},
    {"diagnostics": {"n": 1.5}},
    {"scenario": "default"},
])
def test_wrong_types_rejected(doc):
    with pytest.raises(ValidationError):
        config_from_dict(doc)


@pytest.mark.parametrize("doc", [
    {"sampling": {"penetration": 0.0}},
    {"sampling": {"mode": "drones"}},
    {"sampling": {"seeds": []}},
    {"sweep": {"methods": ["kriging"]}},
    {"scenario": {"grid": {"x_min": 0}}},
    {"metrics": {"speed_unit": "mph"}},
])
def test_invalid_values_rejected(doc):
    with pytest.raises(ValidationError):
        config_from_dict(doc)


def test_digest_tracks_content(tmp_path):
    a = config_from_dict({"model": {"M": 32}})
    b = config_from_dict({"model": {"M": 32}})
    c = config_from_dict({"model": {"M": 33}})
    assert a.digest() == b.digest() != c.digest()
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"model": {"M": 32}}))
    assert load_config(p).digest() == a.digest()


def test_load_errors(tmp_path):
    with pytest.raises(ValidationError, match="not found"):
        load_config(tmp_path / "missing.json")
    p = tmp_path / "bad.json"
    p.write_text("{nope")
    with pytest.raises(ValidationError, match="not valid JSON"):
        load_config(p)
