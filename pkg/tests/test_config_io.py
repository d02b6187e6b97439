import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tddm.config import DEFAULT_EVAL_SEEDS, RunConfig, dumps_config, load_config, parse_config
from tddm.errors import ConfigError
from tddm.fileio import csv_text, format_value, read_csv, read_pgm, write_atomic, write_csv, write_pgm


def test_empty_config_gives_defaults():
    cfg = parse_config("")
    assert cfg == RunConfig()
    assert cfg.eval_seeds == DEFAULT_EVAL_SEEDS
    assert cfg.train.gamma == 0.99
    assert cfg.train.net_spec.input_height == 24


def test_values_parsed():
    cfg = parse_config("""
# comment
[env]
game = dodge
[net]
conv_layers = 4x3x2, 8x3x2, 8x3x1
lstm_units = 16
[train]
masking_enabled = on
total_steps = 3000   # inline comment
[optimizer]
lr = 1e-3
[run]
eval_seeds = 3, 1, 4
""")
    assert cfg.train.env.game == "dodge" and cfg.train.env.frame_size == 32
    assert cfg.train.conv_layers == ((4, 3, 2), (8, 3, 2), (8, 3, 1))
    assert cfg.train.masking_enabled is True
    assert cfg.train.total_steps == 3000
    assert cfg.train.optimizer.lr == 1e-3
    assert cfg.eval_seeds == (3, 1, 4)


def test_gamma_out_of_range_names_gamma():
    with pytest.raises(ConfigError) as exc:
        parse_config("[train]\ngamma = 1.5\n")
    assert any("gamma" in e and "line 2" in e for e in exc.value.errors)


def test_duplicate_key_names_both_lines():
    with pytest.raises(ConfigError) as exc:
        parse_config("[train]\nseed = 1\nbatch_size = 4\nseed = 2\n")
    msg = " ".join(exc.value.errors)
    assert "line 2" in msg and "line 4" in msg and "seed" in msg


def test_all_errors_collected():
    text = "[train]\nbogus = 1\nbatch_size = many\n[nowhere]\nx = 1\n[optimizer]\nlr = -1\nnot a line\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    errs = exc.value.errors
    assert len(errs) >= 5
    for n in (2, 3, 4, 7, 8):
        assert any(f"line {n}" in e for e in errs), n


def test_key_outside_section():
    with pytest.raises(ConfigError):
        parse_config("gamma = 0.5\n")


def test_empty_seed_vector_rejected():
    with pytest.raises(ConfigError):
        parse_config("[run]\neval_seeds = ,\n")
    with pytest.raises(ConfigError):
        RunConfig(eval_seeds=())


def test_dumps_round_trip():
    cfg = parse_config("[train]\nseed = 11\nwarmup_steps = 10\ntotal_steps = 20\n[mask]\nmethod = mean_plus_k_sigma\n")
    assert parse_config(dumps_config(cfg)) == cfg


def test_load_config_prefixes_path(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("[train]\ngamma = 2\n")
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    assert str(p) in exc.value.errors[0]


def test_format_value():
    assert format_value(0.1) == "0.1"
    assert format_value(np.float64(1 / 3)) == repr(1 / 3)
    assert format_value(np.int64(7)) == "7"
    assert format_value(True) == "1"
    assert format_value("x") == "x"


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(allow_nan=False, allow_infinity=False), st.integers(-10**9, 10**9)),
                max_size=20))
def test_csv_round_trip(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("csv") / "t.csv"
    write_csv(path, ("f", "i"), rows)
    header, back = read_csv(path)
    assert header == ["f", "i"]
    for (f, i), r in zip(rows, back):
        assert float(r["f"]) == f and r["i"] == i
    assert path.read_text() == csv_text(("f", "i"), rows)


def test_write_atomic_leaves_no_temp(tmp_path):
    target = tmp_path / "out.txt"
    write_atomic(target, "hello")
    assert target.read_text() == "hello"
    assert os.listdir(tmp_path) == ["out.txt"]


def test_pgm_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (7, 5)) / 255.0
    write_pgm(tmp_path / "a.pgm", img)
    data = (tmp_path / "a.pgm").read_bytes()
    assert data.startswith(b"P5\n5 7\n255\n")
    np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), img)


def test_pgm_with_comment(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
    np.testing.assert_array_equal(read_pgm(tmp_path / "c.pgm"), [[0.0, 1.0]])
