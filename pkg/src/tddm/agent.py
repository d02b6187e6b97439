"""Recurrent Q-learning agent with optional displacement-masked perception.

Training stores masked frames in replay when masking is enabled (the first
frame of each episode has no predecessor and passes through unmasked).
Evaluation always feeds unfiltered frames to the network and computes masks
only to report masking statistics.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import mask as masking
from .env import N_ACTIONS, Env, EnvSpec
from .errors import ConfigError, DivergenceError
from .flow import FlowParams
from .mask import ThresholdPolicy
from .metrics import DEFAULT_BINS, BenchmarkRecord, TrialTrace, summarize
from .net import (HiddenState, NetworkParams, NetworkSpec, OptimizerState, RMSPropHyper,
                  act_step, conv_features, forward_batch, forward_features, init_params,
                  loss_and_gradient, rmsprop_step)
from .replay import ReplayMemory, Transition

log = logging.getLogger(__name__)

EVAL_EPSILON = 0.01


@dataclass(frozen=True)
class TrainConfig:
    env: EnvSpec = field(default_factory=EnvSpec)
    conv_layers: tuple = ((8, 5, 2), (16, 3, 2), (16, 3, 1))
    lstm_units: int = 64
    unroll: int = 8
    flow: FlowParams = field(default_factory=FlowParams)
    policy: ThresholdPolicy = field(default_factory=ThresholdPolicy)
    masking_enabled: bool = False
    total_steps: int = 50_000
    warmup_steps: int = 2_000
    epsilon_start: float = 1.0
    epsilon_end: float = 0.01
    epsilon_decay_start: int = 2_000
    epsilon_decay_end: int = 30_000
    gamma: float = 0.99
    batch_size: int = 32
    replay_capacity: int = 20_000
    target_sync_interval: int = 1_000
    train_interval: int = 8
    optimizer: RMSPropHyper = field(default_factory=RMSPropHyper)
    report_intervals: int = 10
    seed: int = 0

    def __post_init__(self):
        errors = []
        if not self.epsilon_start >= self.epsilon_end >= 0.0 or self.epsilon_start > 1.0:
            errors.append("epsilon_start >= epsilon_end >= 0 must hold, with epsilon_start <= 1")
        if not 0.0 <= self.gamma < 1.0:
            errors.append(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.total_steps < self.warmup_steps:
            errors.append("total_steps must be >= warmup_steps")
        if self.epsilon_decay_end < self.epsilon_decay_start:
            errors.append("epsilon_decay_end must be >= epsilon_decay_start")
        for name in ("batch_size", "replay_capacity", "train_interval", "report_intervals", "total_steps"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1")
        if self.target_sync_interval < 0:
            errors.append("target_sync_interval must be >= 0 (0 disables the target network)")
        if errors:
            raise ConfigError(errors)

    @property
    def net_spec(self) -> NetworkSpec:
        n = self.env.frame_size
        return NetworkSpec(n, n, self.conv_layers, self.lstm_units, N_ACTIONS, self.unroll)


def epsilon_at(step: int, cfg: TrainConfig) -> float:
    """Linear decay from ``epsilon_start`` to ``epsilon_end`` over the decay window."""
    if step <= cfg.epsilon_decay_start:
        return cfg.epsilon_start
    if step >= cfg.epsilon_decay_end:
        return cfg.epsilon_end
    frac = (step - cfg.epsilon_decay_start) / (cfg.epsilon_decay_end - cfg.epsilon_decay_start)
    return cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start)


def td_target(rewards, terminals, next_q, gamma: float) -> np.ndarray:
    """Bellman targets ``r + gamma * max_a' Q(next)``, cut to ``r`` at terminals."""
    rewards = np.asarray(rewards, dtype=np.float64)
    boot = np.asarray(next_q, dtype=np.float64).max(axis=-1)
    return np.where(np.asarray(terminals, dtype=bool), rewards, rewards + gamma * boot)


def seed_streams(seed: int):
    """Independent generators for (network init, acting, replay sampling) and the env seed."""
    init, act, rep, env = np.random.SeedSequence(int(seed)).spawn(4)
    return (np.random.default_rng(init), np.random.default_rng(act),
            np.random.default_rng(rep), int(env.generate_state(1)[0]))


@dataclass
class TrainReport:
    interval_steps: list        # first step of each interval
    cumulative_return: list
    average_q: list
    episodes: list
    episode_returns: list       # every completed episode, in order
    step_log: list              # per-step dicts
    optimizer_steps: int = 0
    mask_amounts: list = field(default_factory=list)

    @property
    def total_return(self) -> float:
        return float(sum(self.episode_returns))


STEP_LOG_FIELDS = ("step", "episode", "action", "reward", "terminal", "epsilon", "max_q", "loss", "masking_amount")


class TargetFeatureCache:
    """Target-network conv features per replay slot.

    A slot's entry stays valid until the slot is overwritten or the target
    weights change, so overlapping samples between syncs reuse it.
    """

    def __init__(self, capacity: int, n_features: int):
        self.feats = np.zeros((capacity, n_features))
        self.valid = np.zeros(capacity, dtype=bool)

    def invalidate(self, slots):
        self.valid[slots] = False

    def clear(self):
        self.valid[:] = False

    def lookup(self, target: NetworkParams, frames, slots):
        """Features (B, L, F) for ring ``slots`` (B, L), computing only missing entries."""
        miss = np.unique(slots[~self.valid[slots]])
        if miss.size:
            self.feats[miss] = conv_features(target, frames[miss])[0]
            self.valid[miss] = True
        return self.feats[slots]


class Perception:
    """Turns raw frames into network inputs, masking only when enabled.

    With masking off the flow estimator is never invoked.
    """

    def __init__(self, cfg: TrainConfig):
        self.enabled = cfg.masking_enabled
        self.stream = masking.MaskStream(cfg.flow, cfg.policy) if self.enabled else None

    def first(self, raw):
        if self.enabled:
            self.stream.start(raw)
        return raw, None

    def next(self, raw):
        if not self.enabled:
            return raw, None
        bm, amount = self.stream.next(raw)
        return masking.apply_mask(raw, bm), amount


def train(cfg: TrainConfig, progress=None, on_sync=None):
    """Run the act / store / sample / learn loop for ``cfg.total_steps`` environment steps.

    Args:
        cfg: Complete training configuration.
        progress: Optional ``progress(step)`` callback after every step.
        on_sync: Optional ``on_sync(step, online, target)`` callback right after
            each target-network synchronization.

    Returns:
        ``(params, report)``; fully determined by ``cfg``.
    """
    spec = cfg.net_spec
    init_rng, act_rng, replay_rng, env_seed = seed_streams(cfg.seed)
    online = init_params(spec, init_rng)
    target = online.copy() if cfg.target_sync_interval else online
    opt = OptimizerState.create(online.size, cfg.optimizer)
    mem = ReplayMemory(cfg.replay_capacity, (spec.input_height, spec.input_width))
    tcache = TargetFeatureCache(cfg.replay_capacity, spec.n_features) if cfg.target_sync_interval else None
    perceive = Perception(cfg)
    seq_len = spec.unroll + 1

    env = Env(cfg.env)
    raw = env.reset(env_seed)
    obs, _ = perceive.first(raw)
    state = HiddenState.zeros(spec.lstm_units)
    episode, ep_return = 0, 0.0

    bucket = max(1, cfg.total_steps // cfg.report_intervals)
    n_buckets = -(-cfg.total_steps // bucket)
    cum = [0.0] * n_buckets
    qsum = [0.0] * n_buckets
    qcount = [0] * n_buckets
    eps_done = [0] * n_buckets
    returns, step_log, amounts = [], [], []
    n_updates = 0

    for step in range(cfg.total_steps):
        k = step // bucket
        eps = epsilon_at(step, cfg)
        q, state, _ = act_step(online, obs, state)
        explore = act_rng.random() < eps
        rand_a = int(act_rng.integers(N_ACTIONS))
        action = rand_a if explore else int(np.argmax(q))
        max_q = float(q.max())
        qsum[k] += max_q
        qcount[k] += 1

        res = env.step(action)
        ep_return += res.reward
        pushed_from = mem.next
        mem.push(Transition(obs, action, res.reward, res.terminal, episode))
        next_obs, amount = perceive.next(res.observation)
        if amount is not None:
            amounts.append(amount)
        if res.terminal:
            mem.push(Transition(next_obs, 0, 0.0, True, episode))
            returns.append(ep_return)
            cum[k] += ep_return
            eps_done[k] += 1
            episode += 1
            ep_return = 0.0
            raw = env.reset_episode()
            obs, _ = perceive.first(raw)
            state = HiddenState.zeros(spec.lstm_units)
        else:
            raw, obs = res.observation, next_obs
        if tcache is not None:
            tcache.invalidate(np.arange(pushed_from, mem.next) % mem.capacity)

        loss = None
        if step + 1 > cfg.warmup_steps and (step + 1) % cfg.train_interval == 0:
            starts = mem.sample_starts(cfg.batch_size, seq_len, replay_rng)
            frames, acts, rews, terms = mem.gather(starts, seq_len)
            last = spec.unroll - 1
            if tcache is None:
                next_q = forward_batch(target, frames[:, 1:]).q[:, -1]
            else:
                feats = tcache.lookup(target, mem.frames, mem.window_slots(starts, seq_len)[:, 1:])
                next_q = forward_features(target, feats).q[:, -1]
            y = td_target(rews[:, last], terms[:, last], next_q, cfg.gamma)
            try:
                loss, grads = loss_and_gradient(online, frames[:, :-1], acts[:, last], y)
            except DivergenceError as exc:
                raise DivergenceError(f"training diverged at step {step}: {exc}",
                                      exc.batch_index, step) from exc
            new, opt = rmsprop_step(online, grads, opt, cfg.optimizer)
            online.flat[...] = new.flat  # keep views; target aliases online when disabled
            n_updates += 1
        if cfg.target_sync_interval and (step + 1) % cfg.target_sync_interval == 0:
            target.flat[...] = online.flat
            tcache.clear()
            if on_sync is not None:
                on_sync(step, online, target)

        step_log.append({
            "step": step, "episode": episode if not res.terminal else episode - 1,
            "action": action, "reward": res.reward, "terminal": int(res.terminal),
            "epsilon": eps, "max_q": max_q, "loss": "" if loss is None else loss,
            "masking_amount": "" if amount is None else amount,
        })
        if progress is not None:
            progress(step)

    report = TrainReport(
        interval_steps=[i * bucket for i in range(n_buckets)],
        cumulative_return=cum,
        average_q=[s / c if c else 0.0 for s, c in zip(qsum, qcount)],
        episodes=eps_done,
        episode_returns=returns,
        step_log=step_log,
        optimizer_steps=n_updates,
        mask_amounts=amounts,
    )
    return online, report


def run_trial(params: NetworkParams, env_spec: EnvSpec, seed: int, steps: int,
              flow: FlowParams | None = None, policy: ThresholdPolicy | None = None,
              epsilon: float = EVAL_EPSILON, analytic_masks: bool = True) -> TrialTrace:
    """One act-only trial on unfiltered frames; masks are computed for statistics only."""
    spec = params.spec
    env = Env(env_spec)
    raw = env.reset(seed)
    stream = masking.MaskStream(flow, policy) if analytic_masks else None
    if stream:
        stream.start(raw)
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(2,)))
    state = HiddenState.zeros(spec.lstm_units)
    hidden = np.empty((steps, spec.lstm_units))
    inputs = np.empty((steps, spec.n_features))
    returns, actions, amounts = [], [], []
    ep_return = 0.0
    for t in range(steps):
        q, state, feats = act_step(params, raw, state)
        hidden[t] = state.h
        inputs[t] = feats
        explore = rng.random() < epsilon
        rand_a = int(rng.integers(N_ACTIONS))
        action = rand_a if explore else int(np.argmax(q))
        actions.append(action)
        res = env.step(action)
        ep_return += res.reward
        if res.terminal:
            returns.append(ep_return)
            ep_return = 0.0
            raw = env.reset_episode()
            state = HiddenState.zeros(spec.lstm_units)
            if stream:
                stream.start(raw)
        else:
            raw = res.observation
            if stream:
                amounts.append(stream.next(raw)[1])
    return TrialTrace(returns, actions, hidden, inputs, amounts, ep_return, seed)


def evaluate(params: NetworkParams, env_spec: EnvSpec, seeds, steps_per_trial: int,
             flow: FlowParams | None = None, policy: ThresholdPolicy | None = None,
             epsilon: float = EVAL_EPSILON, bins: int = DEFAULT_BINS) -> BenchmarkRecord:
    """Benchmark a checkpoint over the a-priori seed vector."""
    if (params.spec.input_height, params.spec.input_width) != (env_spec.frame_size, env_spec.frame_size):
        raise ConfigError(
            f"checkpoint expects {params.spec.input_height}x{params.spec.input_width} frames, "
            f"environment renders {env_spec.frame_size}x{env_spec.frame_size}")
    traces = [run_trial(params, env_spec, s, steps_per_trial, flow, policy, epsilon) for s in seeds]
    return summarize(traces, bins)
