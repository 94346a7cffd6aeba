import json

import pytest

from stosign.config import ConfigError, parse_config, validate_config

MINIMAL = {
    "seed": 0,
    "algorithm": "sto",
    "M": 3,
    "model": {"kind": "scalar-quadratic", "dims": [1]},
    "dataset": {"kind": "quadratic", "targets": [-3.0, 1.0, 1.0]},
    "rounds": 10,
    "lr": {"eta0": 0.001},
    "b": {"value": 4.0},
}


def with_(**changes):
    cfg = json.loads(json.dumps(MINIMAL))
    for k, v in changes.items():
        if v is None:
            cfg.pop(k, None)
        else:
            cfg[k] = v
    return cfg


def errors_for(cfg):
    with pytest.raises(ConfigError) as info:
        validate_config(cfg)
    return info.value.errors


def test_minimal_config_parses():
    cfg = validate_config(MINIMAL)
    assert cfg.total_voters == 3 and cfg.aggregator == "majority"


def test_dp_requires_epsilon():
    errs = errors_for(with_(algorithm="dp", b=None, dp={"delta": 1e-5, "clip": 4.0}))
    assert any(e.startswith("dp.epsilon") for e in errs)


def test_m_zero_message():
    assert "M: M must be ≥ 1" in errors_for(with_(M=0))


def test_unknown_field_rejected():
    errs = errors_for(with_(momentum=0.9))
    assert any("momentum" in e for e in errs)


def test_missing_field_named():
    errs = errors_for(with_(rounds=None))
    assert any(e.startswith("rounds") for e in errs)


def test_sto_needs_b_and_sign_forbids_it():
    assert errors_for(with_(b=None))
    assert errors_for(with_(algorithm="sign"))


def test_ef_needs_odd_voters():
    errs = errors_for(with_(algorithm="ef-sto", byzantine={"count": 1}))
    assert any("odd" in e for e in errs)


def test_topk_fraction_only_for_topk():
    dp = {"epsilon": 0.5, "delta": 1e-5, "clip": 1.0, "topk_fraction": 0.1}
    assert errors_for(with_(algorithm="dp", b=None, dp=dp))
    validate_config(with_(algorithm="dp-topk", b=None, dp=dp))


def test_laplace_needs_zero_delta():
    dp = {"epsilon": 2.0, "delta": 1e-5, "clip": 1.0, "mechanism": "laplace"}
    assert errors_for(with_(algorithm="dp", b=None, dp=dp))
    dp["delta"] = 0.0
    validate_config(with_(algorithm="dp", b=None, dp=dp))


def test_model_dataset_mismatch():
    assert errors_for(with_(model={"kind": "logistic-regression", "dims": [1, 2]}))


def test_parse_config_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(MINIMAL))
    assert parse_config(p).M == 3
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        parse_config(p)
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.json")
