import pytest

from src.config import (
    DEFAULT_LAMBDAS,
    DEFAULT_SPARSITIES,
    ModelConfig,
    RunConfig,
    TrainConfig,
    load_config,
    run_config_from_json,
)
from src.errors import ConfigError


class TestDefaults:
    def test_toy_profile(self):
        config = RunConfig().validate()
        assert config.model.hidden_dim == config.model.num_heads * config.model.head_dim
        assert config.sweep.sparsities == DEFAULT_SPARSITIES
        assert config.sweep.lambdas == DEFAULT_LAMBDAS
        assert config.score.lam == 0.5

    def test_rewind_step_defaults_to_a_tenth(self):
        assert TrainConfig(pretrain_steps=500).resolved_rewind_step == 50
        assert TrainConfig(pretrain_steps=500, rewind_step=7).resolved_rewind_step == 7

    def test_rewind_step_must_precede_end(self):
        with pytest.raises(ConfigError):
            TrainConfig(pretrain_steps=10, rewind_step=10).validate()


class TestLoading:
    def test_yaml_file(self, tmp_path):
        path = tmp_path / "config.yml"
        path.write_text("model:\n  num_heads: 2\n  head_dim: 32\ntrain:\n  steps: 7\n")
        config = load_config(str(path))
        assert config.model.num_heads == 2
        assert config.train.steps == 7
        assert config.train.batch_size == 32

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "absent.yml"))

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="section"):
            RunConfig.from_dict({"optimizer": {}})

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key"):
            RunConfig.from_dict({"model": {"layers": 3}})

    def test_type_errors(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"train": {"steps": "many"}})
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"sweep": {"rewind": "yes"}})

    def test_exponent_without_dot(self):
        config = RunConfig.from_dict({"train": {"learning_rate": "1e-3"}})
        assert config.train.learning_rate == 0.001

    def test_validation_runs_on_load(self, tmp_path):
        path = tmp_path / "config.yml"
        path.write_text("model:\n  head_dim: 9\n")
        with pytest.raises(ConfigError):
            load_config(str(path))


class TestOverrides:
    def test_set_values(self):
        config = RunConfig().with_overrides(["train.learning_rate=1e-3", "sweep.lambdas=[0.5]",
                                             "data.labeled=null"])
        assert config.train.learning_rate == 0.001
        assert config.sweep.lambdas == (0.5,)
        assert config.data.labeled is None

    def test_bad_override(self):
        with pytest.raises(ConfigError):
            RunConfig().with_overrides(["steps=5"])
        with pytest.raises(ConfigError):
            RunConfig().with_overrides(["train.nope=5"])

    def test_with_seed(self):
        config = RunConfig().with_seed(3)
        assert config.model.seed == 3
        assert config.train.seed == 3
        assert config.paths.workdir.endswith("seed_3")


class TestHashAndJson:
    def test_hash_tracks_model_fields(self):
        assert ModelConfig().config_hash() == ModelConfig().config_hash()
        assert ModelConfig().config_hash() != ModelConfig(ffn_dim=128).config_hash()

    def test_json_round_trip(self):
        config = RunConfig(model=ModelConfig(layer_heads=(2, 4), layer_ffn_dims=(256, 100)))
        assert run_config_from_json(config.to_json()) == config

    def test_bad_json(self):
        with pytest.raises(ConfigError):
            run_config_from_json("{not json")
