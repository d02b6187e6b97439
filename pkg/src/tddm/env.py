"""Seeded toy visual environments rendering grayscale frames in [0, 1].

Games (actions are 0 = left, 1 = stay, 2 = right):

* ``catch``: a 1-pixel ball falls one row per step from a random column; a
  3-pixel paddle on the bottom row must be under it when it reaches the row
  above the paddle. +1 for a catch, -1 for a miss, then the episode ends.
  Every episode lasts exactly ``frame_size - 2`` steps.
* ``flicker_catch``: catch over a static texture that is blanked on every
  ``flicker_period``-th frame.
* ``dodge``: rocks spawn at the top every ``DODGE_SPAWN_INTERVAL`` steps and
  fall one row per step; each rock passing the bottom row without touching
  the player scores +1, a hit scores -1 and ends the episode.

Randomness: every environment owns ``numpy.random.Generator(PCG64)`` streams
derived as ``SeedSequence(seed).spawn(2)``; child 0 drives the dynamics,
child 1 draws the background texture. Seeds are therefore portable to any
PCG64 + SeedSequence implementation.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, ContractError

GAMES = ("catch", "dodge", "flicker_catch")
BACKGROUNDS = ("black", "static_texture")
N_ACTIONS = 3
LEFT, STAY, RIGHT = 0, 1, 2
SPRITE = 1.0
TEXTURE_MAX = 0.4
DODGE_SPAWN_INTERVAL = 4


@dataclass(frozen=True)
class EnvSpec:
    game: str = "catch"
    frame_size: int | None = None
    episode_cap: int = 200
    background: str | None = None
    flicker_period: int = 2

    def __post_init__(self):
        errors = []
        if self.game not in GAMES:
            raise ConfigError(f"unknown game {self.game!r}; expected one of {GAMES}")
        if self.frame_size is None:
            object.__setattr__(self, "frame_size", 32 if self.game == "dodge" else 24)
        if self.background is None:
            object.__setattr__(self, "background",
                               "static_texture" if self.game == "flicker_catch" else "black")
        if self.frame_size < 16:
            errors.append(f"frame_size must be >= 16, got {self.frame_size}")
        if self.episode_cap < 1:
            errors.append(f"episode_cap must be >= 1, got {self.episode_cap}")
        if self.flicker_period < 1:
            errors.append(f"flicker_period must be >= 1, got {self.flicker_period}")
        if self.background not in BACKGROUNDS:
            errors.append(f"unknown background {self.background!r}")
        if self.game == "flicker_catch" and self.background != "static_texture":
            errors.append("flicker_catch requires background = static_texture")
        if errors:
            raise ConfigError(errors)


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    terminal: bool


def env_streams(seed: int):
    """(dynamics, texture) generators for ``seed``."""
    dyn, tex = np.random.SeedSequence(int(seed)).spawn(2)
    return np.random.Generator(np.random.PCG64(dyn)), np.random.Generator(np.random.PCG64(tex))


def make_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    t = gaussian_filter(rng.random((size, size)), 1.0, mode="wrap")
    t -= t.min()
    t *= TEXTURE_MAX / max(t.max(), 1e-12)
    return t


class Env:
    """One environment instance; single owner, never shared between trials."""

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self.rng = None
        self.texture = None
        self.t = 0
        self.done = True

    @property
    def size(self):
        return self.spec.frame_size

    def reset(self, seed: int) -> np.ndarray:
        """Start a fresh episode with all randomness derived from ``seed``."""
        self.rng, tex_rng = env_streams(seed)
        self.texture = make_texture(tex_rng, self.size) if self.spec.background == "static_texture" else None
        self._start_episode()
        return self.render()

    def reset_episode(self) -> np.ndarray:
        """Next episode continuing the same random stream (texture unchanged)."""
        if self.rng is None:
            raise ContractError("reset(seed) must be called before reset_episode()")
        self._start_episode()
        return self.render()

    def _start_episode(self):
        n = self.size
        self.t = 0
        self.done = False
        self.player = n // 2
        if self.spec.game == "dodge":
            self.rocks = [[0, int(self.rng.integers(0, n))]]
        else:
            self.ball = [0, int(self.rng.integers(0, n))]

    def _background(self):
        n = self.size
        if self.texture is None:
            return np.zeros((n, n))
        if self.spec.game == "flicker_catch" and self.t % self.spec.flicker_period == self.spec.flicker_period - 1:
            return np.zeros((n, n))
        return self.texture.copy()

    def render(self) -> np.ndarray:
        n = self.size
        img = self._background()
        img[n - 1, self.player - 1:self.player + 2] = SPRITE
        if self.spec.game == "dodge":
            for r, c in self.rocks:
                img[r, c] = SPRITE
        else:
            img[self.ball[0], self.ball[1]] = SPRITE
        return img

    def step(self, action: int) -> StepResult:
        if self.done:
            raise ContractError("step() called on a terminated episode; reset first")
        if action not in (LEFT, STAY, RIGHT):
            raise ContractError(f"action must be 0, 1 or 2, got {action!r}")
        n = self.size
        self.player = int(np.clip(self.player + action - 1, 1, n - 2))
        self.t += 1
        reward = 0.0
        if self.spec.game == "dodge":
            reward = self._step_dodge()
        else:
            self.ball[0] += 1
            if self.ball[0] == n - 2:
                reward = 1.0 if abs(self.ball[1] - self.player) <= 1 else -1.0
                self.done = True
        if self.t >= self.spec.episode_cap:
            self.done = True
        return StepResult(self.render(), reward, self.done)

    def _step_dodge(self) -> float:
        n = self.size
        reward = 0.0
        kept = []
        for r, c in self.rocks:
            r += 1
            if r == n - 1:
                if abs(c - self.player) <= 1:
                    self.done = True
                    return -1.0
                reward += 1.0
            else:
                kept.append([r, c])
        self.rocks = kept
        if self.t % DODGE_SPAWN_INTERVAL == 0:
            self.rocks.append([0, int(self.rng.integers(0, n))])
        return reward


def reset(spec: EnvSpec, seed: int):
    """Functional entry point: returns ``(env, first_observation)``."""
    env = Env(spec)
    return env, env.reset(seed)


def step(env: Env, action: int) -> StepResult:
    return env.step(action)


def scripted_action(env: Env) -> int:
    """Near-optimal hand policy: chase the ball, or sidestep the next rock."""
    p = env.player
    if env.spec.game != "dodge":
        return int(np.sign(env.ball[1] - p)) + 1
    if not env.rocks:
        return STAY
    r, c = max(env.rocks)
    if abs(c - p) >= 2:
        return STAY
    n = env.size
    targets = [q for q in range(1, n - 1) if abs(q - c) >= 2]
    goal = min(targets, key=lambda q: (abs(q - p), q))
    return int(np.sign(goal - p)) + 1


def optimal_return(spec: EnvSpec, seeds=range(10)) -> float:
    """Expected episode return of :func:`scripted_action`.

    Catch variants enumerate every starting ball column; dodge averages the
    scripted rollout over ``seeds``.
    """
    if spec.game == "dodge":
        returns = []
        for s in seeds:
            env = Env(spec)
            env.reset(s)
            returns.append(_rollout(env))
        return float(np.mean(returns))
    env = Env(replace(spec, background="black") if spec.game == "catch" else spec)
    returns = []
    for col in range(spec.frame_size):
        env.reset(0)
        env.ball[1] = col
        returns.append(_rollout(env))
    return float(np.mean(returns))


def _rollout(env: Env) -> float:
    total = 0.0
    while not env.done:
        total += env.step(scripted_action(env)).reward
    return total
