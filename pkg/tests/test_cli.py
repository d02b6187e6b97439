import os
from dataclasses import replace

import numpy as np
import pytest

from tddm import agent, harness
from tddm.cli import main
from tddm.config import parse_config
from tddm.env import Env
from tddm.fileio import read_csv, read_pgm, write_pgm
from tddm.metrics import COLUMNS
from tddm.pomdp import tiger

SMOKE = """
[env]
frame_size = 16
[net]
conv_layers = 4x3x2, 4x3x2, 4x3x1
lstm_units = 8
unroll = 3
[train]
total_steps = 120
warmup_steps = 30
epsilon_decay_start = 30
epsilon_decay_end = 100
batch_size = 4
replay_capacity = 400
target_sync_interval = 40
train_interval = 4
seed = 5
[run]
train_trials = 1
eval_seeds = 11, 12
eval_steps = 25
"""


@pytest.fixture
def smoke_cfg(tmp_path):
    path = tmp_path / "smoke.cfg"
    path.write_text(SMOKE)
    return path


def test_compare_smoke_emits_all_files(tmp_path, smoke_cfg, capsys):
    out = tmp_path / "cmp"
    assert main(["compare", "--config", str(smoke_cfg), "--out", str(out)]) == 0
    expected = ["config.txt", "manifest.csv", "training.csv", "training_summary.csv", "evaluation.csv"]
    for v in harness.VARIANTS:
        for name in ("checkpoint.bin", "train_report.csv", "episodes.csv", "steps.csv", "eval_trials.csv"):
            expected.append(os.path.join(v, "seed5", name))
    for rel in expected:
        assert (out / rel).is_file(), rel
    header, rows = read_csv(out / "evaluation.csv")
    assert all(c in header for c in COLUMNS)
    assert [r["env"] for r in rows] == ["catch-16", "catch-16", "#TDDM", "#Benchmark"]
    tddm_row = rows[0]
    assert tddm_row["variant"] == "tddm"
    for c in COLUMNS:
        assert rows[2][c] + rows[3][c] >= 1
    _, manifest = read_csv(out / "manifest.csv")
    assert {r["status"] for r in manifest} == {"done"}
    _, summary = read_csv(out / "training_summary.csv")
    assert summary[0]["train_masking_amount"] > 0.0 and summary[1]["train_masking_amount"] == 0.0
    recomputed = harness.evaluation_from_trials(out / "tddm" / "seed5" / "eval_trials.csv")
    assert recomputed["A.R."] == pytest.approx(tddm_row["A.R."], abs=1e-12)
    assert parse_config((out / "config.txt").read_text()) == replace(parse_config(SMOKE), out_dir=str(out))
    assert "A.R." in capsys.readouterr().out


def test_variants_share_initial_observation(monkeypatch):
    firsts = []
    real = Env.reset

    def recording(self, seed):
        obs = real(self, seed)
        firsts.append(obs.copy())
        return obs

    monkeypatch.setattr(Env, "reset", recording)
    cfg = replace(parse_config(SMOKE).train, total_steps=30)
    agent.train(replace(cfg, masking_enabled=True))
    agent.train(replace(cfg, masking_enabled=False))
    assert len(firsts) == 2
    assert firsts[0].tobytes() == firsts[1].tobytes()


def test_best_flags_directions():
    rows = [{c: 1.0 for c in COLUMNS}, {c: 2.0 for c in COLUMNS}]
    flags = harness.best_flags(rows)
    assert "ST.D.R" in flags[0] and "ST.D.R" not in flags[1]
    assert "A.R." in flags[1] and "A.R." not in flags[0]


def test_train_and_evaluate_commands(tmp_path, smoke_cfg):
    out = tmp_path / "tr"
    assert main(["train", "--config", str(smoke_cfg), "--out", str(out), "--masking", "on"]) == 0
    _, steps = read_csv(out / "steps.csv")
    assert len(steps) == 120 and steps[0]["masking_amount"] != ""
    ev = tmp_path / "ev"
    assert main(["evaluate", str(out / "checkpoint.bin"), "--config", str(smoke_cfg), "--out", str(ev)]) == 0
    header, rows = read_csv(ev / "eval_summary.csv")
    assert header == list(COLUMNS) and len(rows) == 1


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[train]\ngamma = 1.5\n")
    assert main(["train", "--config", str(bad)]) == 2
    assert "gamma" in capsys.readouterr().err


def test_missing_file_exit_code(tmp_path):
    assert main(["evaluate", str(tmp_path / "nope.bin")]) == 6


def test_pomdp_solve(tmp_path, capsys):
    assert main(["pomdp-solve", "tiger", "--grid", "closure", "--depth", "2", "--iters", "2",
                 "--belief", "0.5,0.5"]) == 0
    assert "greedy action listen" in capsys.readouterr().out
    model = tmp_path / "m.json"
    model.write_text(tiger().dumps())
    assert main(["pomdp-solve", str(model), "--resolution", "4", "--iters", "3"]) == 0
    assert main(["pomdp-solve", str(model), "--belief", "1"]) == 2


def test_flow_debug(tmp_path, rng):
    a = rng.random((16, 16)) * 0.5
    b = np.roll(a, 1, axis=1)
    write_pgm(tmp_path / "a.pgm", a)
    write_pgm(tmp_path / "b.pgm", b)
    out = tmp_path / "fd"
    assert main(["flow-debug", str(tmp_path / "a.pgm"), str(tmp_path / "b.pgm"), "--out", str(out)]) == 0
    for name in ("flow.txt", "magnitude.pgm", "O.pgm", "BM.pgm", "OxBM.pgm"):
        assert (out / name).is_file()
    bm = read_pgm(out / "BM.pgm")
    assert set(np.unique(bm)) <= {0.0, 1.0}
    lines = (out / "flow.txt").read_text().splitlines()
    assert lines[0] == "# dx 16 16" and len(lines) == 34


def test_env_dump_and_report(tmp_path, capsys):
    out = tmp_path / "dump"
    assert main(["env-dump", "--steps", "30", "--out", str(out), "--seed", "2"]) == 0
    assert len(list(out.glob("frame_*.pgm"))) == 31
    _, rows = read_csv(out / "transitions.csv")
    assert [r["reward"] for r in rows if r["terminal"]] == [1.0]
    assert main(["report", str(out / "transitions.csv")]) == 0
    assert "30 rows" in capsys.readouterr().out
