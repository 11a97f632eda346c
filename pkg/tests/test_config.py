import pytest

from nbsp.config import PRESETS, ExperimentConfig, preset
from nbsp.errors import ConfigError


def test_defaults_validate():
    cfg = ExperimentConfig().validate()
    assert cfg.segments == ["pointmass/goal-east", "pointmass/goal-west"] * 2
    assert cfg.budget == 60_000
    assert cfg.prior_capacity == 40_000
    assert (cfg.nbsp.proportion, cfg.nbsp.alpha_mask, cfg.nbsp.replay_interval) == (0.2, 0.2, 10)
    assert cfg.experiment.eval_episodes == 20


def test_gridworld_budget_default():
    cfg = preset("nbsp-gridworld-2task")
    assert cfg.budget == 30_000


def test_unknown_key_suggests_closest():
    with pytest.raises(ConfigError, match="did you mean 'replay_interval'"):
        ExperimentConfig.from_toml("[nbsp]\nreplayinterval = 5\n")


def test_unknown_section_and_bad_values():
    with pytest.raises(ConfigError, match="section"):
        ExperimentConfig.from_toml("[nbps]\nproportion = 0.2\n")
    with pytest.raises(ConfigError, match="proportion"):
        ExperimentConfig.from_toml("[nbsp]\nproportion = 0.0\n")
    with pytest.raises(ConfigError, match="method"):
        ExperimentConfig.from_toml('[experiment]\nmethod = "ewc"\n')
    with pytest.raises(ConfigError, match="integer"):
        ExperimentConfig.from_toml("[nbsp]\nreplay_interval = 2.5\n")
    with pytest.raises(ConfigError, match="valid TOML"):
        ExperimentConfig.from_toml("[nbsp\n")
    with pytest.raises(ConfigError, match="family"):
        ExperimentConfig.from_toml('[experiment]\ntasks = ["pointmass/goal-east", "gridworld/goal-east"]\n')


def test_toml_round_trip():
    cfg = preset("smoke").with_overrides(method="mask_only", sac__hidden=[32, 16], nbsp__alpha_mask=0.35)
    again = ExperimentConfig.from_toml(cfg.to_toml())
    assert again.as_dict() == cfg.as_dict()
    assert again.hash() == cfg.hash()
    assert again.sac.hidden == (32, 16)


def test_hash_tracks_content():
    a = preset("nbsp-pointmass-2task")
    assert a.hash() == preset("nbsp-pointmass-2task").hash()
    assert a.hash() != a.with_overrides(nbsp__replay_interval=5).hash()


def test_overrides():
    cfg = ExperimentConfig().with_overrides(method="base", proportion=0.3, experiment__seeds=[4], store_size=None)
    assert cfg.experiment.method == "base" and cfg.nbsp.proportion == 0.3 and cfg.experiment.seeds == [4]
    with pytest.raises(ConfigError, match="replay_interval"):
        ExperimentConfig().with_overrides(replay_intervl=3)


def test_presets():
    assert set(PRESETS) >= {"nbsp-pointmass-2task", "nbsp-gridworld-2task", "nbsp-pointmass-4task", "smoke"}
    assert preset("nbsp-pointmass-2task").experiment.tasks == ["pointmass/goal-east", "pointmass/goal-west"]
    with pytest.raises(ConfigError, match="smoke"):
        preset("smok")
