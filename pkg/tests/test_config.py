import pytest

from pbl.config import (ConfigError, config_from_dict, default_config, dump_config, load_config)
from pbl.core import DeckSpec
from pbl.trainer import TrainerConfig


def test_defaults_per_experiment():
    assert default_config("bridge").trainer.gamma == 1.0
    assert default_config("guide").trainer.gamma == 0.95
    assert default_config("matrix").task.hidden == (32, 32)
    paper = default_config("bridge", paper_scale=True)
    assert paper.trainer == TrainerConfig()
    assert paper.data.n_train == 1_500_000


def test_roundtrip(tmp_path):
    cfg = config_from_dict({"experiment": "bridge", "seed": 7, "trainer": {"alpha0": 2, "pbl_iters": 3},
                            "task": {"recall": 1}}, env={})
    assert cfg.trainer.alpha0 == 2.0 and isinstance(cfg.trainer.alpha0, float)
    dump_config(cfg, tmp_path / "c.toml")
    assert load_config(tmp_path / "c.toml", env={}) == cfg


@pytest.mark.parametrize("d, match", [
    ({"experiment": "poker"}, "experiment"),
    ({"trainr": {}}, "top-level"),
    ({"trainer": {"alpha": 1.0}}, "alpha"),
    ({"trainer": {"belief": {"lrr": 1.0}}}, "lrr"),
    ({"trainer": {"deterministic": 1}}, "true or false"),
    ({"trainer": {"baseline": "IP", "mode": "distributed"}}, "IP"),
    ({"deck": {"preset": "huge"}}, "preset"),
    ({"deck": {"colour": "red"}}, "colour"),
])
def test_invalid_configs(d, match):
    with pytest.raises(ConfigError, match=match):
        config_from_dict(d, env={})


def test_deck_preset():
    cfg = config_from_dict({"deck": {"preset": "standard"}}, env={})
    assert cfg.deck == DeckSpec.standard()


def test_seed_override_from_environment():
    assert config_from_dict({"seed": 1}, env={"PBL_SEED": "42"}).seed == 42
    assert config_from_dict({"seed": 1}, env={}).seed == 1
    with pytest.raises(ConfigError):
        config_from_dict({}, env={"PBL_SEED": "abc"})


def test_bad_toml(tmp_path):
    (tmp_path / "bad.toml").write_text("experiment = \n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.toml")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
