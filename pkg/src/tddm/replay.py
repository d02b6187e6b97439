"""Sliding-window replay memory sampled as contiguous within-episode sequences."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, InsufficientHistoryError


@dataclass
class Transition:
    observation: np.ndarray
    action: int
    reward: float
    terminal: bool
    episode_id: int


class ReplayMemory:
    """FIFO ring of transitions.

    Observations live in one preallocated array, so overlapping samples never
    copy frames more than once per sample.
    """

    def __init__(self, capacity: int, frame_shape):
        if capacity < 1:
            raise ContractError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.frames = np.zeros((self.capacity,) + tuple(frame_shape))
        self.actions = np.zeros(self.capacity, dtype=np.int64)
        self.rewards = np.zeros(self.capacity)
        self.terminals = np.zeros(self.capacity, dtype=bool)
        self.episodes = np.zeros(self.capacity, dtype=np.int64)
        self.next = 0  # total pushes so far
        self._last_episode = None

    def __len__(self):
        return min(self.next, self.capacity)

    def push(self, t: Transition):
        if not np.isfinite(t.reward):
            raise ContractError("transition reward must be finite")
        if self._last_episode is not None and t.episode_id < self._last_episode:
            raise ContractError("episode ids must not decrease")
        i = self.next % self.capacity
        self.frames[i] = t.observation
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.terminals[i] = t.terminal
        self.episodes[i] = t.episode_id
        self._last_episode = t.episode_id
        self.next += 1

    def _ordered(self, field):
        """Stored entries of ``field`` from oldest to newest."""
        n = len(self)
        start = self.next - n
        idx = np.arange(start, self.next) % self.capacity
        return field[idx], idx

    def valid_starts(self, length: int) -> np.ndarray:
        """Ring indices of every start offset whose ``length`` window stays in one episode."""
        if length < 1:
            raise ContractError("length must be >= 1")
        eps, idx = self._ordered(self.episodes)
        n = len(eps)
        if n < length:
            return np.empty(0, dtype=np.int64)
        same = eps[length - 1:] == eps[:n - length + 1]
        return idx[:n - length + 1][same]

    def transition(self, i: int) -> Transition:
        i %= self.capacity
        return Transition(self.frames[i], int(self.actions[i]), float(self.rewards[i]),
                          bool(self.terminals[i]), int(self.episodes[i]))

    def sample_starts(self, batch: int, length: int, rng: np.random.Generator) -> np.ndarray:
        starts = self.valid_starts(length)
        if starts.size == 0:
            raise InsufficientHistoryError(f"no stored episode segment of length {length}")
        return starts[rng.integers(0, starts.size, size=batch)]

    def window_slots(self, starts, length: int) -> np.ndarray:
        """Ring indices (B, L) of the windows at ``starts``."""
        return (np.asarray(starts)[:, None] + np.arange(length)[None, :]) % self.capacity

    def gather(self, starts, length: int):
        """Arrays for the windows at ``starts``: frames (B, L, H, W), actions, rewards, terminals (B, L)."""
        idx = self.window_slots(starts, length)
        return self.frames[idx], self.actions[idx], self.rewards[idx], self.terminals[idx]

    def sample_sequences(self, batch: int, length: int, rng: np.random.Generator):
        """``batch`` lists of ``length`` contiguous transitions, uniform over valid starts."""
        starts = self.sample_starts(batch, length, rng)
        return [[self.transition(s + k) for k in range(length)] for s in starts]
