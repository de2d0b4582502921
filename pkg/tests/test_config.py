"""Config file parsing and mapping-to-dataclass application."""

import pytest

from convgrader.config import (TrainConfig, _parse_scalar, describe,
                               load_synth_config, load_train_config,
                               parse_config_file, train_config_from_mapping)
from convgrader.errors import ConfigError


def write(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text, encoding="utf-8")
    return path


class TestScalarParsing:
    @pytest.mark.parametrize("text,expected", [
        ("true", True), ("False", False),
        ("none", None), ("NULL", None),
        ("42", 42), ("-3", -3),
        ("3e-3", 3e-3), ("0.85", 0.85),
        ('"quoted value"', "quoted value"),
        ("'x'", "x"),
        ("plain_word", "plain_word"),
        ('"', '"'),
    ])
    def test_fixtures(self, text, expected):
        assert _parse_scalar(text) == expected

    def test_int_stays_int(self):
        assert isinstance(_parse_scalar("7"), int)

    def test_float_detected(self):
        assert isinstance(_parse_scalar("7.0"), float)


class TestParseConfigFile:
    def test_basic_file(self, tmp_path):
        path = write(tmp_path, """
            # training run
            batch_size = 32
            lr_decay = 0.9   # per-epoch factor
            seeds = 0, 1, 2
            word_vec_path = none
            fuse_mode = "mean"
        """)
        raw = parse_config_file(path)
        assert raw == {"batch_size": 32, "lr_decay": 0.9, "seeds": (0, 1, 2),
                       "word_vec_path": None, "fuse_mode": "mean"}

    def test_trailing_comma_dropped(self, tmp_path):
        raw = parse_config_file(write(tmp_path, "seeds = 0, 1,\n"))
        assert raw["seeds"] == (0, 1)

    def test_line_without_equals_rejected(self, tmp_path):
        path = write(tmp_path, "batch_size = 4\njust words\n")
        with pytest.raises(ConfigError, match=r":2: expected key = value"):
            parse_config_file(path)

    def test_empty_key_rejected(self, tmp_path):
        path = write(tmp_path, "= 4\n")
        with pytest.raises(ConfigError, match="empty key"):
            parse_config_file(path)

    def test_comment_only_file_is_empty(self, tmp_path):
        assert parse_config_file(write(tmp_path, "# nothing\n\n")) == {}


class TestTrainConfigMapping:
    def test_top_level_fields(self):
        cfg = train_config_from_mapping({"batch_size": 16, "max_epochs": 5})
        assert cfg.batch_size == 16
        assert cfg.max_epochs == 5

    def test_model_fields_fall_through(self):
        cfg = train_config_from_mapping({"d_h": 32, "n_heads": 2,
                                         "use_actions": False})
        assert cfg.model.d_h == 32
        assert cfg.model.n_heads == 2
        assert not cfg.model.use_actions

    def test_scalar_wrapped_for_tuple_fields(self):
        cfg = train_config_from_mapping({"seeds": 3, "initial_lrs": 1e-3})
        assert cfg.seeds == (3,)
        assert cfg.initial_lrs == (1e-3,)

    def test_int_coerced_for_float_fields(self):
        cfg = train_config_from_mapping({"lr_decay": 1})
        assert cfg.lr_decay == 1.0
        assert isinstance(cfg.lr_decay, float)

    def test_bool_fields_reject_non_bool(self):
        with pytest.raises(ConfigError, match="expects true/false"):
            train_config_from_mapping({"use_seq": 1})

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key 'learning_rate'"):
            train_config_from_mapping({"learning_rate": 1e-3})

    def test_cefr_map_entries(self):
        cfg = train_config_from_mapping({"cefr_map.9": "C2"})
        assert cfg.cefr_map[9] == "C2"
        assert cfg.cefr_map[8] == "B2"

    def test_validation_runs(self):
        with pytest.raises(ConfigError, match="equal length"):
            train_config_from_mapping({"seeds": (0, 1)})

    def test_base_config_updated_in_place(self):
        base = TrainConfig(batch_size=8)
        cfg = train_config_from_mapping({"patience": 2}, base=base)
        assert cfg is base
        assert cfg.batch_size == 8
        assert cfg.patience == 2


class TestTrainConfigValidate:
    @pytest.mark.parametrize("overrides,message", [
        ({"batch_size": 0}, "must be positive"),
        ({"grad_accum_steps": 0}, "must be positive"),
        ({"patience": 0}, "must be positive"),
        ({"max_epochs": 0}, "must be positive"),
        ({"seeds": (), "initial_lrs": ()}, "at least one"),
        ({"seeds": (0, 1)}, "equal length"),
        ({"lr_decay": 0.0}, r"lr_decay"),
        ({"lr_decay": 1.5}, r"lr_decay"),
        ({"cefr_map": {1: "A1"}}, "cover scores"),
    ])
    def test_rejects_bad_values(self, overrides, message):
        cfg = TrainConfig(**overrides)
        with pytest.raises(ConfigError, match=message):
            cfg.validate()

    def test_defaults_validate(self):
        TrainConfig().validate()

    def test_lr_ladder_default(self):
        cfg = TrainConfig()
        assert cfg.initial_lrs == (3e-3, 1e-3, 3e-4, 1e-4, 3e-5)
        assert cfg.seeds == (0, 1, 2, 3, 4)


class TestLoaders:
    def test_load_train_config(self, tmp_path):
        path = write(tmp_path, """
            batch_size = 8
            d_h = 16
            n_heads = 2
            seeds = 0, 1
            initial_lrs = 1e-3, 1e-3
        """)
        cfg = load_train_config(path)
        assert cfg.batch_size == 8
        assert cfg.model.d_h == 16

    def test_load_train_config_error_names_file(self, tmp_path):
        path = write(tmp_path, "nonsense_key = 1\n")
        with pytest.raises(ConfigError, match="run.cfg"):
            load_train_config(path)

    def test_load_synth_config(self, tmp_path):
        path = write(tmp_path, """
            n_conversations = 10
            responses_per_conv = 2, 4
            noise_sigma = 0.25
            rng_seed = 9
        """)
        cfg = load_synth_config(path)
        assert cfg.n_conversations == 10
        assert cfg.responses_per_conv == (2, 4)
        assert cfg.noise_sigma == 0.25

    def test_load_synth_config_unknown_key(self, tmp_path):
        path = write(tmp_path, "batch_size = 4\n")
        with pytest.raises(ConfigError, match="unknown key"):
            load_synth_config(path)


class TestDescribe:
    def test_json_friendly_keys(self):
        out = describe(TrainConfig())
        assert out["cefr_map"]["9"] == "C1"
        assert out["model"]["d_h"] == 64
        assert out["batch_size"] == 64
