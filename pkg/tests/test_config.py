"""Config parsing, overrides, snapshot round trips."""

import pytest

from cogfatigue.config import RunConfig, apply_overrides, format_config, load_config
from cogfatigue.errors import ConfigError


def write(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadConfig:
    def test_missing_path_is_defaults(self):
        cfg = load_config(None)
        assert cfg == RunConfig.default()

    def test_empty_file_gives_defaults(self, tmp_path):
        cfg = load_config(write(tmp_path, ""))
        assert cfg.pretrain.lr0 == 0.03
        assert cfg.pretrain.epochs == 200
        assert cfg.finetune.lr == 1e-3
        assert cfg.encoder.conv_channels == (64, 128, 256)
        assert cfg.run.split_ratios == (0.70, 0.15, 0.15)

    def test_single_override(self, tmp_path):
        cfg = load_config(write(tmp_path, "[pretrain]\ntemperature = 0.2\n"))
        assert cfg.pretrain.temperature == 0.2
        assert cfg.pretrain.momentum == 0.999  # untouched

    def test_comments_ignored(self, tmp_path):
        cfg = load_config(write(tmp_path, "# top\n[pretrain]\n# note\nlr0 = 0.1  # inline\n"))
        assert cfg.pretrain.lr0 == 0.1

    def test_misspelled_key_named(self, tmp_path):
        with pytest.raises(ConfigError, match="temprature"):
            load_config(write(tmp_path, "[pretrain]\ntemprature = 0.2\n"))

    def test_unknown_section_named(self, tmp_path):
        with pytest.raises(ConfigError, match="pretraining"):
            load_config(write(tmp_path, "[pretraining]\nlr0 = 0.1\n"))

    def test_type_mismatch(self, tmp_path):
        with pytest.raises(ConfigError, match=r"\[pretrain\] epochs"):
            load_config(write(tmp_path, "[pretrain]\nepochs = soon\n"))

    def test_bool_values(self, tmp_path):
        cfg = load_config(write(tmp_path, "[finetune]\nfreeze_encoder = yes\n"))
        assert cfg.finetune.freeze_encoder is True
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, "[finetune]\nfreeze_encoder = maybe\n"))

    def test_tuple_values(self, tmp_path):
        text = (
            "[encoder]\nconv_channels = 8, 8, 16\ninput_hw = 16, 16\n"
            "[synth]\nshape = (10, 4, 8, 8)\nroi_center = 2, 4, 4\nroi_radius_vox = 1.5\n"
            "[pretrain]\nlr_drop_epochs = 5, 9, 12\n"
        )
        cfg = load_config(write(tmp_path, text))
        assert cfg.encoder.conv_channels == (8, 8, 16)
        assert cfg.synth.shape == (10, 4, 8, 8)
        assert cfg.synth.roi_center == (2, 4, 4)
        assert cfg.pretrain.lr_drop_epochs == (5, 9, 12)

    def test_optional_none(self, tmp_path):
        cfg = load_config(write(tmp_path, "[synth]\nroi_center = none\n[finetune]\nstop_at_train_acc = 0.9\n"))
        assert cfg.synth.roi_center is None
        assert cfg.finetune.stop_at_train_acc == 0.9

    def test_wrong_tuple_arity(self, tmp_path):
        with pytest.raises(ConfigError, match="3"):
            load_config(write(tmp_path, "[encoder]\nconv_channels = 8, 8\n"))

    def test_invalid_value_wrapped(self, tmp_path):
        with pytest.raises(ConfigError, match=r"\[preprocess\]"):
            load_config(write(tmp_path, "[preprocess]\nsmooth_fwhm_mm = -2\n"))

    def test_file_not_found(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.ini")


class TestOverrides:
    def test_flag_beats_file_beats_default(self, tmp_path):
        cfg_file = load_config(write(tmp_path, "[pretrain]\ntemperature = 0.2\nlr0 = 0.5\n"))
        final = apply_overrides(cfg_file, ["pretrain.temperature=0.9"])
        assert final.pretrain.temperature == 0.9  # flag wins
        assert final.pretrain.lr0 == 0.5  # file wins over default
        assert final.pretrain.momentum == 0.999  # default

    @pytest.mark.parametrize(
        "key,value,getter",
        [
            ("run.seed", "77", lambda c: c.run.seed == 77),
            ("preprocess.znorm", "false", lambda c: c.preprocess.znorm is False),
            ("augment.crop_len", "9", lambda c: c.augment.crop_len == 9),
            ("encoder.embed_dim", "32", lambda c: c.encoder.embed_dim == 32),
            ("finetune.epochs", "7", lambda c: c.finetune.epochs == 7),
            ("synth.noise_sigma", "0.5", lambda c: c.synth.noise_sigma == 0.5),
        ],
    )
    def test_override_per_key(self, key, value, getter):
        assert getter(apply_overrides(RunConfig.default(), [f"{key}={value}"]))

    def test_bad_override_shape(self):
        with pytest.raises(ConfigError):
            apply_overrides(RunConfig.default(), ["pretrain=0.9"])
        with pytest.raises(ConfigError):
            apply_overrides(RunConfig.default(), ["pretrain.nope=0.9"])


class TestSnapshot:
    def test_round_trip_defaults(self, tmp_path):
        cfg = RunConfig.default()
        path = write(tmp_path, format_config(cfg))
        assert load_config(path) == cfg

    def test_round_trip_after_overrides(self, tmp_path):
        cfg = apply_overrides(
            RunConfig.default(),
            [
                "pretrain.temperature=0.11",
                "encoder.conv_channels=8,8,16",
                "synth.roi_center=8,12,12",
                "synth.roi_radius_vox=1.5",
                "finetune.freeze_encoder=true",
                "run.split_ratios=0.6,0.2,0.2",
            ],
        )
        path = write(tmp_path, format_config(cfg))
        assert load_config(path) == cfg


def test_duplicate_section_rejected(tmp_path):
    path = tmp_path / "dup.ini"
    path.write_text("[pretrain]\nlr0 = 0.1\n[pretrain]\nlr0 = 0.2\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)
