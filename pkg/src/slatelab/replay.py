"""Ring replay buffer storing raw observation histories.

Transitions carry no precomputed beliefs.  Each entry keeps the last
(window + 1) observed (slate, clicks) pairs of its episode, right
aligned and ending at the transition's own turn, so the belief can be
recomputed with fresh GRU parameters at sampling time: rows [:-1] give
the pre-action state, rows [1:] the post-action one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class HistoryWindow:
    """Right-aligned sliding window of one episode's observations."""

    def __init__(self, window: int, slate_size: int):
        if window <= 0 or slate_size <= 0:
            raise ValueError("window and slate size must be positive")
        self.window = window
        self.slate_size = slate_size
        self.slates = np.zeros((window + 1, slate_size), dtype=np.int64)
        self.clicks = np.zeros((window + 1, slate_size), dtype=np.float64)
        self.length = 0

    def reset(self) -> None:
        self.slates[...] = 0
        self.clicks[...] = 0.0
        self.length = 0

    def push(self, slate, clicks) -> None:
        """Append the newest (slate, clicks) pair, dropping the oldest."""
        self.slates[:-1] = self.slates[1:]
        self.clicks[:-1] = self.clicks[1:]
        self.slates[-1] = np.asarray(slate, dtype=np.int64)
        self.clicks[-1] = np.asarray(clicks, dtype=np.float64)
        self.length = min(self.length + 1, self.window + 1)


@dataclass
class TransitionBatch:
    prev_slates: np.ndarray   # [B, W, k] history before the turn
    prev_clicks: np.ndarray
    prev_lengths: np.ndarray  # [B] real rows, right aligned
    next_slates: np.ndarray   # [B, W, k] history including the turn
    next_clicks: np.ndarray
    next_lengths: np.ndarray
    actions: np.ndarray       # [B, d]
    rewards: np.ndarray       # [B]
    dones: np.ndarray         # [B] in {0.0, 1.0}


class ReplayBuffer:
    """Fixed-capacity FIFO ring with uniform sampling."""

    def __init__(self, capacity: int, window: int, slate_size: int, action_dim: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.window = int(window)
        self.slate_size = int(slate_size)
        self.action_dim = int(action_dim)
        shape = (self.capacity, self.window + 1, self.slate_size)
        self._slates = np.zeros(shape, dtype=np.int32)
        self._clicks = np.zeros(shape, dtype=np.uint8)
        self._lengths = np.zeros(self.capacity, dtype=np.int32)
        self._actions = np.zeros((self.capacity, self.action_dim))
        self._rewards = np.zeros(self.capacity)
        self._dones = np.zeros(self.capacity, dtype=np.uint8)
        self._size = 0
        self._pos = 0

    def __len__(self) -> int:
        return self._size

    def push(self, history: HistoryWindow, action, reward: float, done: bool) -> None:
        """Store one transition; the window must already contain its turn."""
        if history.length < 1:
            raise ValueError("history window is empty")
        if history.window != self.window or history.slate_size != self.slate_size:
            raise ValueError("history window shape mismatch")
        i = self._pos
        self._slates[i] = history.slates
        self._clicks[i] = history.clicks
        self._lengths[i] = history.length
        self._actions[i] = np.asarray(action, dtype=np.float64)
        self._rewards[i] = float(reward)
        self._dones[i] = 1 if done else 0
        self._pos = (self._pos + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        """Uniform with replacement over the stored transitions."""
        if self._size < 1:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self._size, size=batch_size)
        slates = self._slates[idx].astype(np.int64)
        clicks = self._clicks[idx].astype(np.float64)
        lengths = self._lengths[idx].astype(np.int64)
        return TransitionBatch(
            prev_slates=slates[:, :-1],
            prev_clicks=clicks[:, :-1],
            prev_lengths=lengths - 1,
            next_slates=slates[:, 1:],
            next_clicks=clicks[:, 1:],
            next_lengths=np.minimum(lengths, self.window),
            actions=self._actions[idx].copy(),
            rewards=self._rewards[idx].copy(),
            dones=self._dones[idx].astype(np.float64),
        )
