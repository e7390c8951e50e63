import pytest

from avae.config import load_config, parse_override, write_config
from avae.errors import UsageError
from avae.models import RunConfig


class TestParseOverride:
    def test_split(self):
        assert parse_override("train.lr=1e-4") == ("train", "lr", "1e-4")

    @pytest.mark.parametrize("text", ["train.lr", "lr=1", "train.=1", "optim.lr=1"])
    def test_rejects(self, text):
        with pytest.raises(UsageError):
            parse_override(text)


class TestLoadConfig:
    def test_defaults(self):
        assert load_config() == RunConfig()

    def test_file_values(self, tiny_ini):
        config = load_config(tiny_ini)
        assert config.model.widths == (2, 3, 3)
        assert config.train.batch == 4
        assert config.train.alpha == 0.3

    def test_overrides_win(self, tiny_ini):
        config = load_config(tiny_ini, ["train.batch=8", "train.controller_mode=integral"])
        assert config.train.batch == 8
        assert config.train.controller_mode == "integral"
        assert config.model.image_size == 8

    def test_unknown_section(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[optimizer]\nlr = 1\n", encoding="utf-8")
        with pytest.raises(UsageError, match="optimizer"):
            load_config(path)

    def test_unknown_key(self):
        with pytest.raises(UsageError):
            load_config(overrides=["train.momentum=0.5"])

    def test_invalid_value(self):
        with pytest.raises(UsageError, match="train.eta"):
            load_config(overrides=["train.eta=2"])

    def test_missing_file(self, tmp_path):
        with pytest.raises(UsageError):
            load_config(tmp_path / "absent.ini")

    def test_write_then_load(self, tiny_ini, tmp_path):
        config = load_config(tiny_ini, ["train.lr=3.3e-05", "train.adaptive_eta=true", f"data.root={tmp_path}"])
        path = write_config(config, tmp_path / "run")
        assert load_config(path) == config
