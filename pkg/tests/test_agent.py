from dataclasses import replace

import numpy as np
import pytest

from tddm import agent, flow, mask
from tddm.agent import TrainConfig, epsilon_at, evaluate, td_target, train
from tddm.env import EnvSpec
from tddm.errors import ConfigError, DivergenceError
from tddm.flow import FlowParams
from tddm.net import (NetworkParams, NetworkSpec, RMSPropHyper, conv_features, forward_batch,
                      forward_features, init_params)

TINY = TrainConfig(env=EnvSpec(frame_size=16), conv_layers=((4, 3, 2), (4, 3, 2), (4, 3, 1)),
                   lstm_units=8, unroll=3, total_steps=240, warmup_steps=40, epsilon_decay_start=40,
                   epsilon_decay_end=200, batch_size=4, replay_capacity=500, target_sync_interval=50,
                   train_interval=2, seed=3)


def test_epsilon_examples():
    cfg = TrainConfig()
    assert epsilon_at(0, cfg) == 1.0
    assert epsilon_at(cfg.epsilon_decay_end, cfg) == 0.01
    assert epsilon_at(10**7, cfg) == 0.01
    mid = (cfg.epsilon_decay_start + cfg.epsilon_decay_end) // 2
    assert epsilon_at(mid, cfg) == pytest.approx(0.505, abs=1e-15)


def test_td_target_examples():
    assert td_target([-1.0], [True], [[3.0, 4.0]], 0.99)[0] == -1.0
    assert td_target([2.0], [False], [[3.0, 4.0]], 0.0)[0] == 2.0
    assert td_target([1.0], [False], [[0.2, 0.5]], 0.99)[0] == pytest.approx(1.495, abs=1e-15)


def test_config_invariants():
    for kw in ({"gamma": 1.0}, {"epsilon_start": 0.001}, {"epsilon_end": -0.1},
               {"total_steps": 10, "warmup_steps": 20}, {"batch_size": 0},
               {"epsilon_decay_start": 5, "epsilon_decay_end": 4}, {"target_sync_interval": -1}):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)


def test_train_deterministic_and_consistent():
    p1, r1 = train(TINY)
    p2, r2 = train(TINY)
    assert p1.flat.tobytes() == p2.flat.tobytes()
    assert r1.step_log == r2.step_log
    assert r1.cumulative_return == r2.cumulative_return
    assert sum(r1.cumulative_return) == pytest.approx(r1.total_return, abs=1e-12)
    assert sum(r1.episodes) == len(r1.episode_returns)
    assert r1.interval_steps == list(range(0, 240, 24))
    assert r1.optimizer_steps == (240 - 40) // 2


def test_no_updates_when_warmup_covers_run():
    cfg = replace(TINY, total_steps=40, warmup_steps=40)
    params, report = train(cfg)
    assert report.optimizer_steps == 0
    fresh = init_params(cfg.net_spec, agent.seed_streams(cfg.seed)[0])
    assert params.flat.tobytes() == fresh.flat.tobytes()


def test_masking_off_bypasses_flow(monkeypatch):
    base = train(TINY)

    def boom(*a, **k):
        raise AssertionError("flow evaluated with masking off")

    monkeypatch.setattr(flow, "expand_pyramid", boom)
    monkeypatch.setattr(flow, "estimate_flow", boom)
    other = train(replace(TINY, flow=FlowParams(window_radius=2, pyramid_levels=1)))
    assert base[0].flat.tobytes() == other[0].flat.tobytes()
    assert base[1].step_log == other[1].step_log


def test_masking_on_stores_masked_frames(monkeypatch):
    calls = []
    real = mask.apply_mask

    def counting(frame, m):
        calls.append(float(np.mean(m)))
        return real(frame, m)

    monkeypatch.setattr(mask, "apply_mask", counting)
    cfg = replace(TINY, masking_enabled=True, total_steps=60)
    _, report = train(cfg)
    # one masked successor per step; episode-start frames pass through untouched
    assert len(calls) == 60
    assert len(report.mask_amounts) == 60
    assert all(0.0 <= a <= 1.0 for a in report.mask_amounts)


def test_target_equals_online_after_sync():
    seen = []

    def check(step, online, target):
        seen.append(step)
        assert online.flat.tobytes() == target.flat.tobytes()
        assert online.flat is not target.flat

    train(TINY, on_sync=check)
    assert seen == [49, 99, 149, 199]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_carries_step():
    cfg = replace(TINY, optimizer=RMSPropHyper(lr=1e300, clip=1e300, momentum=0.0))
    with pytest.raises(DivergenceError) as exc:
        train(cfg)
    assert exc.value.step is not None and exc.value.step >= TINY.warmup_steps


def test_evaluate_zero_network():
    spec = TINY.net_spec
    rec = evaluate(NetworkParams(spec), TINY.env, [1, 2], 30, epsilon=0.0)
    assert rec.aggregate["ST.D.A"] == 0.0
    assert rec.aggregate["H.S.A.E."] == 0.0
    assert rec.aggregate["S.A.E."] == 0.0


def test_evaluate_no_masking_on_network_path(monkeypatch):
    calls = []
    monkeypatch.setattr(mask, "apply_mask", lambda *a: calls.append(1))
    params = init_params(TINY.net_spec, np.random.default_rng(0))
    rec = evaluate(params, TINY.env, [5, 6], 40)
    assert calls == []
    assert all(0.0 < t["M.A."] <= 1.0 for t in rec.trials)
    assert rec.aggregate["ST.D.M"] >= 0.0


def test_evaluate_deterministic_and_spec_checked():
    params = init_params(TINY.net_spec, np.random.default_rng(1))
    a = evaluate(params, TINY.env, [7, 8], 30)
    b = evaluate(params, TINY.env, [7, 8], 30)
    assert a.trials == b.trials and a.aggregate == b.aggregate
    with pytest.raises(ConfigError):
        evaluate(params, EnvSpec(frame_size=24), [7], 5)


def test_run_trial_records_unfiltered_features():
    params = init_params(TINY.net_spec, np.random.default_rng(2))
    tr = agent.run_trial(params, TINY.env, 9, 20)
    assert tr.hidden.shape == (20, 8)
    assert tr.inputs.shape == (20, NetworkSpec(16, 16, TINY.conv_layers, 8, 3, 3).n_features)
    assert len(tr.actions) == 20


def test_target_feature_cache_matches_direct_forward():
    spec = TINY.net_spec
    rng = np.random.default_rng(4)
    p = init_params(spec, rng)
    frames = rng.random((12, 16, 16))
    cache = agent.TargetFeatureCache(12, spec.n_features)
    slots = np.array([[0, 1, 2], [1, 2, 3], [10, 11, 0]])
    got = cache.lookup(p, frames, slots)
    want = conv_features(p, frames[slots.ravel()])[0].reshape(3, 3, -1)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)
    assert cache.valid.sum() == 6
    # an overwritten slot is recomputed, untouched slots are reused
    frames[2] = 0.0
    cache.invalidate([2])
    again = cache.lookup(p, frames, slots[:1])
    np.testing.assert_allclose(again[0, 2], conv_features(p, frames[2:3])[0][0], rtol=0, atol=1e-12)
    q = forward_features(p, again).q
    np.testing.assert_allclose(q, forward_batch(p, frames[slots[:1]]).q, rtol=0, atol=1e-12)
