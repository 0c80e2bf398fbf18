import pytest

from dtgan.config import DATA_DIR_ENV, KEYS, ConfigError, RunConfig, parse_config_text


def test_parse_comments_and_types():
    text = """
    # data
    data_dir = synthetic   # trailing comment
    pretrain_epochs = 3
    adv_lr = 2e-5
    g_grad_clip = -0.5, 0.5
    seeds = 1,2,3
    """
    values = parse_config_text(text)
    assert values == dict(data_dir="synthetic", pretrain_epochs=3, adv_lr=2e-5, g_grad_clip=(-0.5, 0.5),
                          seeds=(1, 2, 3))


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key 'learning_rate'"):
        parse_config_text("learning_rate = 1\n")


def test_bad_value_reports_line():
    with pytest.raises(ConfigError, match=":2: bad value for 'batch_size'"):
        parse_config_text("seed = 1\nbatch_size = many\n")


def test_missing_line_separator():
    with pytest.raises(ConfigError, match="expected 'key = value'"):
        parse_config_text("seed 1\n")


def test_flags_override_file(tmp_path, monkeypatch):
    monkeypatch.delenv(DATA_DIR_ENV, raising=False)
    path = tmp_path / "c.txt"
    path.write_text("seed = 1\nvariant = dtgan-u\nadv_epochs = 7\n")
    cfg = RunConfig.load(path, dict(seed=9, variant=None))
    assert cfg.get("seed") == 9 and cfg.get("variant") == "dtgan-u" and cfg.get("adv_epochs") == 7


def test_required_key_named(monkeypatch):
    monkeypatch.delenv(DATA_DIR_ENV, raising=False)
    with pytest.raises(ConfigError, match="'data_dir'"):
        RunConfig.load(None).get("data_dir")


def test_data_dir_from_environment(monkeypatch):
    monkeypatch.setenv(DATA_DIR_ENV, "/somewhere")
    assert RunConfig.load(None).get("data_dir") == "/somewhere"


def test_defaults_build_valid_configs():
    cfg = RunConfig.load(None, dict(variant="dtgan-u"))
    assert cfg.build("generator").output_head == "uniform"
    tc = cfg.build("train")
    assert (tc.batch_size, tc.pretrain_lr, tc.adv_lr) == (32, 1e-3, 1e-5)
    assert tc.g_grad_clip == (-1.0, 1.0) and tc.d_weight_clip == (-0.1, 0.1)


def test_invalid_value_becomes_config_error():
    with pytest.raises(ConfigError):
        RunConfig.load(None, dict(variant="dtgan-q")).build("loss")


def test_nonexistent_data_dir(tmp_path):
    cfg = RunConfig.load(None, dict(data_dir=str(tmp_path / "missing")))
    with pytest.raises(ConfigError):
        cfg.validate_paths()


def test_every_key_has_parser():
    assert all(callable(parser) for parser, _ in KEYS.values())
