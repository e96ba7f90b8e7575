import pytest
from pydantic import ValidationError

from app.database.config_loader import get_run_config, read_config_file, render_config, write_resolved_config
from app.schemas.config import DATASET_PRESETS, ModelConfig, TrainConfig
from app.utils.exceptions import ConfigError


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text(
        "# small run\n"
        "dataset_path=data/u.data\n"
        "embedding_dim=16\n"
        "encoder_hidden=32,32\n"
        "noise_levels=0.2,0.4\n"
        "show_progress=true\n",
        encoding="utf-8",
    )
    return path


class TestGetRunConfig:
    def test_file_values(self, config_file):
        config = get_run_config(config_file)
        assert config.dataset_path == "data/u.data"
        assert config.embedding_dim == 16
        assert config.encoder_hidden == (32, 32)
        assert config.noise_levels == (0.2, 0.4)
        assert config.show_progress is True

    def test_overrides_win_over_the_file(self, config_file):
        config = get_run_config(config_file, {"embedding_dim": "8", "seed": 3, "variant": None})
        assert (config.embedding_dim, config.seed, config.variant) == (8, 3, "dave")

    def test_dashed_keys(self, config_file):
        assert get_run_config(config_file, {"max-epochs": "5"}).max_epochs == 5

    def test_ml100k_preset(self):
        config = get_run_config(overrides={"preset": "ml-100k", "dataset_path": "u.data"})
        assert (config.batch_size, config.negative_ratio, config.embedding_dim) == (256, 4, 64)
        assert config.learning_rate == 1e-4
        assert config.split_policy == "latest"
        assert config.resolved_dataset_name == "ml-100k"

    def test_explicit_key_beats_the_preset(self, config_file):
        config = get_run_config(config_file, {"preset": "yelp"})
        assert config.embedding_dim == 16
        assert config.batch_size == DATASET_PRESETS["yelp"]["batch_size"]
        assert config.min_user_interactions == 10

    def test_unknown_key(self, config_file):
        with pytest.raises(ConfigError, match="bogus"):
            get_run_config(config_file, {"bogus": "1"})

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="Unknown preset"):
            get_run_config(overrides={"preset": "netflix", "dataset_path": "x"})

    def test_dataset_path_is_required(self):
        with pytest.raises(ConfigError, match="dataset_path"):
            get_run_config(overrides={"seed": 1})

    @pytest.mark.parametrize("key,value", [
        ("batch_size", "0"),
        ("learning_rate", "fast"),
        ("variant", "dave-gan"),
        ("noise_levels", "0.5,1.5"),
        ("encoder_hidden", "16,-1"),
    ])
    def test_invalid_values(self, key, value):
        with pytest.raises(ConfigError, match="Invalid configuration"):
            get_run_config(overrides={"dataset_path": "x", key: value})

    def test_line_without_a_value(self, tmp_path):
        path = tmp_path / "broken.conf"
        path.write_text("dataset_path=x\nembedding_dim\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="embedding_dim"):
            get_run_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            read_config_file(tmp_path / "absent.conf")

    def test_exit_code(self):
        with pytest.raises(ConfigError) as info:
            get_run_config(overrides={"seed": 1})
        assert info.value.exit_code == 2

    def test_resolved_config_reproduces_the_run(self, config_file, tmp_path):
        config = get_run_config(config_file, {"preset": "ml-1m", "learning_rate": "0.003", "seed": "7"})
        path = write_resolved_config(config, tmp_path / "out", "train")
        assert path.name == "resolved.train.conf"
        assert get_run_config(path) == config

    def test_rendered_lines(self, config_file):
        rendered = render_config(get_run_config(config_file)).splitlines()
        assert "encoder_hidden=32,32" in rendered
        assert "show_progress=true" in rendered
        assert not any(line.startswith("decoder_hidden=") for line in rendered)


class TestSchemas:
    def test_model_config_defaults(self):
        config = ModelConfig(num_users=943, num_items=1682)
        assert config.embedding_dim == 64
        assert config.encoder_hidden == config.decoder_hidden == (128,)
        assert config.discriminator_hidden == (50, 100)
        assert config.predictor_hidden == (32, 32, 32)
        assert config.uses_discriminators

    def test_input_widths(self):
        config = ModelConfig(num_users=3, num_items=5)
        assert (config.input_width("user"), config.input_width("item")) == (5, 3)

    def test_closed_form_variant_has_no_discriminators(self):
        assert not ModelConfig(num_users=1, num_items=1, variant="dave-adv").uses_discriminators

    def test_train_config_rejects_bad_values(self):
        with pytest.raises(ValidationError):
            TrainConfig(negative_ratio=0)
        with pytest.raises(ValidationError):
            TrainConfig(adam_beta1=1.0)

    def test_discriminator_rate_defaults_to_the_main_rate(self):
        assert TrainConfig(learning_rate=0.02).discriminator_learning_rate == 0.02
        assert TrainConfig(learning_rate=0.02, disc_learning_rate=0.001).discriminator_learning_rate == 0.001

    def test_train_config_view(self, config_file):
        run = get_run_config(config_file)
        train = run.train_config()
        assert type(train) is TrainConfig
        assert train.embedding_dim == run.embedding_dim
        assert train.to_model_config(10, 20).encoder_hidden == (32, 32)
