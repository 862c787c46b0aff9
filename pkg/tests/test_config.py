"""Configuration file parsing, defaults, and rejection of bad entries."""

import pytest

from taskmetric.config import ConfigError, load_config


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_empty_file_yields_documented_defaults(tmp_path):
    cfg = load_config(write(tmp_path, ""))
    t = cfg.train
    assert t.k_ways == 5 and t.m_shots == 5
    assert t.tasks_per_batch == 2 and t.queries_per_task == 32
    assert t.total_episodes == 10000
    assert t.learning_rate == 0.1 and t.momentum == 0.9
    assert not t.aux_enabled
    assert cfg.head.kind == "squared-euclidean" and cfg.head.alpha == 1.0
    assert not cfg.use_ten and cfg.ten_l2 == 0.01
    assert cfg.data.source == "synth"
    assert cfg.extractor.kind == "linear"
    assert cfg.extractor.input_shape == (cfg.data.synth.d_x,)


def test_shot_count_sets_batch_defaults(tmp_path):
    cfg = load_config(write(tmp_path, "[train]\nshots = 1\n"))
    assert cfg.train.tasks_per_batch == 5
    assert cfg.train.queries_per_task == 12
    cfg = load_config(write(tmp_path, "[train]\nshots = 10\n"))
    assert cfg.train.tasks_per_batch == 1
    assert cfg.train.queries_per_task == 64
    # explicit values win over shot-derived defaults
    cfg = load_config(write(tmp_path,
                            "[train]\nshots = 1\ntasks_per_batch = 3\n"))
    assert cfg.train.tasks_per_batch == 3


def test_explicit_values_round_trip(tmp_path):
    text = ("[train]\nways = 3\nshots = 2\nepisodes = 50\n"
            "learning_rate = 0.05\naux = true\n"
            "[model]\ndistance = cosine-distance\nalpha = 4.0\n"
            "use_ten = yes\nhidden = 8, 4\nextractor = mlp\n"
            "[data]\nclasses = 12\nsuperclasses = 4\ndim = 6\n")
    cfg = load_config(write(tmp_path, text))
    assert cfg.train.k_ways == 3 and cfg.train.total_episodes == 50
    assert cfg.train.aux_enabled
    assert cfg.head.kind == "cosine-distance" and cfg.head.alpha == 4.0
    assert cfg.use_ten
    assert cfg.extractor.hidden == (8, 4)
    assert cfg.data.synth.n_classes == 12 and cfg.data.synth.d_x == 6
    echoed = cfg.echo()
    assert "alpha = 4.0" in echoed and "distance = cosine-distance" in echoed


def test_negative_alpha_rejected_naming_key(tmp_path):
    with pytest.raises(ConfigError, match="'alpha'"):
        load_config(write(tmp_path, "[model]\nalpha = -2\n"))


def test_unknown_key_and_section_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown key 'walpha'"):
        load_config(write(tmp_path, "[model]\nwalpha = 1\n"))
    with pytest.raises(ConfigError, match=r"unknown section \[modle\]"):
        load_config(write(tmp_path, "[modle]\nalpha = 1\n"))


def test_wrong_value_type_rejected(tmp_path):
    with pytest.raises(ConfigError, match="'episodes'"):
        load_config(write(tmp_path, "[train]\nepisodes = many\n"))
    with pytest.raises(ConfigError, match="boolean"):
        load_config(write(tmp_path, "[train]\naux = maybe\n"))


def test_parse_error_reports_line_number(tmp_path):
    text = "[train]\nways = 5\nthis line has no equals sign\n"
    with pytest.raises(ConfigError, match="line 3"):
        load_config(write(tmp_path, text))


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(str(tmp_path / "absent.cfg"))


def test_unknown_distance_and_source_rejected(tmp_path):
    with pytest.raises(ConfigError, match="'distance'"):
        load_config(write(tmp_path, "[model]\ndistance = manhattan\n"))
    with pytest.raises(ConfigError, match="'source'"):
        load_config(write(tmp_path, "[data]\nsource = imagenet\n"))


def test_cifar_source_defaults_to_conv_extractor(tmp_path):
    cfg = load_config(write(tmp_path, "[data]\nsource = cifar100\n"
                                      "downsample = 8\npath = /tmp/x\n"))
    assert cfg.extractor.kind == "mini-resnet"
    assert cfg.extractor.input_shape == (3, 8, 8)
    assert cfg.data.synth is None


def test_out_of_range_train_values_rejected(tmp_path):
    with pytest.raises(ConfigError, match=r"\[train\]"):
        load_config(write(tmp_path, "[train]\nways = 1\n"))
    with pytest.raises(ConfigError, match=r"\[data\]"):
        load_config(write(tmp_path, "[data]\nclasses = 0\n"))
