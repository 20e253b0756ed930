import json

import pytest

from artikin.config import CONFIG_ENV, ConfigError, PipelineConfig, config_from_dict, load_config
from artikin.geometry import RobustLoss


def test_defaults():
    cfg = PipelineConfig()
    assert cfg.filter.tau_c == 0.5 and cfg.filter.tau_v == 2.0
    assert cfg.joint.theta_th_deg == 10.0 and cfg.joint.rho_th == 0.05
    assert cfg.refine.iters == 500 and cfg.refine.lr == 1e-3
    assert cfg.refine.loss == RobustLoss.tukey(0.01)
    assert cfg.refine.refine_reference_poses is False


def test_sections_and_seed():
    cfg = config_from_dict({"seed": 9, "filter": {"tau_v": 3.0}, "refine": {"iters": 5, "loss": {"kind": "huber", "param": 0.02}}})
    assert cfg.filter.tau_v == 3.0
    assert cfg.refine.iters == 5 and cfg.refine.loss.kind == "huber"
    assert cfg.solver.seed == 9 and cfg.joint.seed == 9
    assert config_from_dict({"seed": 9, "joint": {"seed": 2}}).joint.seed == 2


@pytest.mark.parametrize("doc, where", [
    ({"bogus": 1}, "config"),
    ({"filter": {"tau": 1}}, "config.filter"),
    ({"refine": {"iters": 0}}, "config.refine"),
    ({"refine": {"loss": {"kind": "cauchy"}}}, "config.refine.loss"),
    ({"solver": {"window_size": [8]}}, "config.solver.window_size"),
    ({"seed": "x"}, "config.seed"),
    ([], "config"),
])
def test_rejects_bad_config(doc, where):
    with pytest.raises(ConfigError, match=where.replace(".", r"\.")):
        config_from_dict(doc)


def test_round_trip_through_dict():
    cfg = PipelineConfig()
    d = cfg.to_dict()
    d["refine"]["loss"] = {"kind": cfg.refine.loss.kind, "param": cfg.refine.loss.param}
    assert config_from_dict(json.loads(json.dumps(d))) == cfg


def test_load_from_env(tmp_path, monkeypatch):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"filter": {"tau_c": 0.7}}))
    monkeypatch.setenv(CONFIG_ENV, str(p))
    assert load_config().filter.tau_c == 0.7
    monkeypatch.delenv(CONFIG_ENV)
    assert load_config() == PipelineConfig()
    p.write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
