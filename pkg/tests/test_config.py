from __future__ import annotations

import dataclasses

import pytest

from pgser import config as configlib
from pgser.config import PRESETS, ConfigError, ExperimentConfig, load, loads


def test_defaults_validate():
    cfg = ExperimentConfig().validate()
    assert cfg.env.variant == "four_rooms" and cfg.variant == "mem"
    assert cfg.dataset_seed == cfg.seed


@pytest.mark.parametrize("name", PRESETS)
def test_presets_load_and_round_trip(name):
    cfg = load(name)
    assert cfg.name == name
    assert loads(cfg.to_toml()) == cfg
    assert cfg.config_hash() == loads(cfg.to_toml()).config_hash()


def test_toml_round_trip_with_walls_and_dataset_seed():
    cfg = ExperimentConfig(name="walled")
    cfg.env = dataclasses.replace(cfg.env, variant="open", width=4, height=3, walls=[[1, 1], [2, 1]])
    cfg.dataset = dataclasses.replace(cfg.dataset, seed=11)
    back = loads(cfg.validate().to_toml())
    assert back == cfg
    assert back.dataset_seed == 11
    assert back.env.grid_spec().walls == frozenset({(1, 1), (2, 1)})


def test_flat_dotted_keys_equal_tables():
    a = loads('env.variant = "open"\nenv.width = 5\nenv.height = 5\n')
    b = loads('[env]\nvariant = "open"\nwidth = 5\nheight = 5\n')
    assert a == b


def test_file_load(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('name = "x"\nseed = 4\n')
    cfg = load(p)
    assert cfg.name == "x" and cfg.seed == 4
    with pytest.raises(ConfigError) as e:
        load(tmp_path / "nope.toml")
    assert e.value.field == "--config"


@pytest.mark.parametrize(
    "text, fld",
    [
        ("dataset.noise = 1.5", "dataset.noise"),
        ('dataset.noise = "high"', "dataset.noise"),
        ("dataset.n_expert = -1", "dataset.n_expert"),
        ("dataset.n_expert = 0\ndataset.n_random = 0", "dataset.n_random"),
        ("train.learning_rate = 0", "train.learning_rate"),
        ("pretrain.rho = 2.0", "pretrain.rho"),
        ('train.learner = "deep"', "train.learner"),
        ("train.warm_start = 1", "train.warm_start"),
        ("buffer.alpha = 0", "buffer.alpha"),
        ("eval.seeds = []", "eval.seeds"),
        ("eval.seeds = [1, 1]", "eval.seeds"),
        ("eval.seeds = 3", "eval.seeds"),
        ("analysis.bins = 1", "analysis.bins"),
        ('analysis.negatives = "other"', "analysis.negatives"),
        ('variant = "fancy"', "variant"),
        ("env.h_max = 0", "env.h_max"),
        ('env.variant = "maze"', "env.variant"),
        ("env.width = 7", "env.walls"),
        ("env.bogus = 1", "env.bogus"),
        ("mystery = 1", "mystery"),
        ("env = 3", "env"),
        ("seed = true", "seed"),
        ("seed = -2", "seed"),
        ("seed = = 1", "<file>"),
    ],
)
def test_validation_names_the_field(text, fld):
    with pytest.raises(ConfigError) as e:
        loads(text)
    assert e.value.field == fld
    assert str(e.value).startswith(fld)


def test_disconnected_walls_rejected():
    text = 'env.variant = "open"\nenv.width = 3\nenv.height = 3\nenv.walls = [[1, 0], [1, 1], [1, 2]]\n'
    with pytest.raises(ConfigError) as e:
        loads(text)
    assert e.value.field == "env"


def test_integers_accepted_for_float_fields():
    cfg = loads("dataset.noise = 0\ntrain.learning_rate = 1")
    assert isinstance(cfg.dataset.noise, float) and cfg.train.learning_rate == 1.0


def test_subtree_hash_tracks_only_named_sections():
    a = ExperimentConfig()
    b = dataclasses.replace(a, train=dataclasses.replace(a.train, updates=7))
    assert a.subtree_hash("dataset", "env") == b.subtree_hash("dataset", "env")
    assert a.subtree_hash("train") != b.subtree_hash("train")
    assert a.config_hash() != b.config_hash()


def test_preset_lookup():
    assert configlib.preset("desk_open").env.variant == "open"
    with pytest.raises(KeyError):
        configlib.preset("desk_mars")
