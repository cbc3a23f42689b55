import pytest

from goldisim.config import RunConfig
from goldisim.errors import ConfigError, ParameterError


def test_defaults():
    cfg = RunConfig()
    assert cfg.seed == 0 and cfg.get("data", "canvas") == 256
    assert cfg.optimizer("gdr").epochs == 40 and cfg.optimizer("udr").epochs == 120
    assert cfg.curriculum("gdr").bo_iter == 35 and cfg.curriculum("bayrn").bo_iter == 40


def test_load_and_relative_paths(tmp_path):
    (tmp_path / "cfg").mkdir()
    ini = tmp_path / "cfg" / "a.ini"
    ini.write_text("[data]\nnormals_dir = imgs\n[curriculum]\nT = 4\npacing_schedule = 0.8, 0.6\n"
                   "replay_previous = yes\n")
    cfg = RunConfig.load(ini)
    assert cfg.get("data", "normals_dir") == (tmp_path / "cfg" / "imgs").resolve()
    assert cfg.get("curriculum", "T") == 4
    assert cfg.get("curriculum", "pacing_schedule") == (0.8, 0.6)
    assert cfg.get("curriculum", "replay_previous") is True


def test_roundtrip_through_ini(tmp_path):
    cfg = RunConfig()
    cfg.override("optimizer.learning_rate", "0.5")
    cfg.override("curriculum.pacing_schedule", "0.9,0.5")
    (tmp_path / "b.ini").write_text(cfg.to_ini())
    assert RunConfig.load(tmp_path / "b.ini").to_dict() == cfg.to_dict()


@pytest.mark.parametrize("text", ["[nosuch]\na = 1\n", "[run]\nnope = 1\n", "[run]\nseed = x\n",
                                  "[curriculum]\nreplay_previous = maybe\n", "garbage"])
def test_bad_configs(tmp_path, text):
    (tmp_path / "c.ini").write_text(text)
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "c.ini")


def test_missing_file_and_bad_override(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "none.ini")
    with pytest.raises(ConfigError):
        RunConfig().override("seed", "1")


def test_builders_validate():
    cfg = RunConfig()
    cfg.set("simulator", "beta", 3.0)
    with pytest.raises(ParameterError):
        cfg.sim_params()
    cfg = RunConfig()
    cfg.set("optimizer", "kind", "lbfgs")
    with pytest.raises(ParameterError):
        cfg.optimizer()
