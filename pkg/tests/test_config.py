import dataclasses

import pytest

from vapors.config import Config, ConfigError, LossWeights, ModelConfig, PlateConfig, config_from_dict, load_config


def test_defaults_validate():
    assert Config().validate() is not None
    assert load_config(None) == Config()


def test_sections_override_fields(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[plate]\nacquire_prob = 1.0\n[policy]\nhorizon = 3\n")
    cfg = load_config(path)
    assert cfg.plate.acquire_prob == 1.0 and cfg.policy.horizon == 3
    assert cfg.model == ModelConfig()


@pytest.mark.parametrize(
    "data",
    [
        {"plate": {"wobble": 1}},
        {"soup": {}},
        {"plate": {"acquire_prob": 1.5}},
        {"plate": {"min_separation_frac": -1.0}},
        {"loss": {"reward_prior_share": 1.5}},
        {"loss": {"kl": -1.0}},
        {"model": {"patch1": 3}},
        {"policy": {"horizon": 9}},
    ],
)
def test_invalid_configs_are_rejected(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_separation_scales_with_footprint():
    cfg = PlateConfig(footprint_radius=0.02, min_separation_frac=1.5)
    assert cfg.min_separation == pytest.approx(0.03)


def test_loss_weights_are_frozen():
    with pytest.raises(dataclasses.FrozenInstanceError):
        LossWeights().kl = 2.0
