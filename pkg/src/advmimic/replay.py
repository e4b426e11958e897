"""Uniform experience replay with n-step window assembly.

Sampling is uniform with replacement; there is no prioritisation. Windows
run forward from a sampled start and stop early at an episode boundary, at
a true terminal, or at the newest stored transition.
"""

from __future__ import annotations

import json
from typing import NamedTuple

import numpy as np

from .errors import ContractError, EmptyBufferError


class Transition(NamedTuple):
    """One interaction record, or a batch of them stacked along axis 0."""

    state: np.ndarray
    action: np.ndarray
    syn_reward: float
    next_state: np.ndarray
    terminal: bool


class NStepSample(NamedTuple):
    state: np.ndarray
    action: np.ndarray
    rewards: np.ndarray  # length k
    bootstrap_state: np.ndarray
    k: int
    bootstrap_masked: bool


class NStepBatch(NamedTuple):
    """Batched windows, padded to length n along axis 1.

    ``valid[b, j]`` is true for the first ``k[b]`` steps of window ``b``;
    padded entries hold zeros.
    """

    states: np.ndarray  # (B, n, state_dim)
    actions: np.ndarray  # (B, n, action_dim)
    rewards: np.ndarray  # (B, n), stored synthetic rewards
    next_states: np.ndarray  # (B, n, state_dim)
    terminals: np.ndarray  # (B, n)
    valid: np.ndarray  # (B, n)
    k: np.ndarray  # (B,)
    bootstrap_states: np.ndarray  # (B, state_dim)
    bootstrap_masked: np.ndarray  # (B,)

    def __len__(self):
        return len(self.k)

    def __getitem__(self, b) -> NStepSample:
        k = int(self.k[b])
        return NStepSample(self.states[b, 0], self.actions[b, 0], self.rewards[b, :k].copy(),
                           self.bootstrap_states[b], k, bool(self.bootstrap_masked[b]))

    def first_step(self) -> Transition:
        """The 1-step transition at the start of every window."""
        return Transition(self.states[:, 0], self.actions[:, 0], self.rewards[:, 0],
                          self.next_states[:, 0], self.terminals[:, 0])


class ReplayBuffer:
    def __init__(self, capacity, state_dim, action_dim):
        if capacity < 1:
            raise ContractError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.terminals = np.zeros(capacity, dtype=bool)
        self.episode_ends = np.zeros(capacity, dtype=bool)
        self.ptr = 0  # next physical slot to write
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, transition: Transition):
        s = np.asarray(transition.state, dtype=np.float64)
        a = np.asarray(transition.action, dtype=np.float64)
        s2 = np.asarray(transition.next_state, dtype=np.float64)
        if s.shape != (self.state_dim,) or s2.shape != (self.state_dim,) \
                or a.shape != (self.action_dim,):
            raise ContractError(
                f"transition dims {s.shape}/{a.shape}/{s2.shape} do not match "
                f"buffer ({self.state_dim}, {self.action_dim})")
        i = self.ptr
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = transition.syn_reward
        self.next_states[i] = s2
        self.terminals[i] = bool(transition.terminal)
        self.episode_ends[i] = bool(transition.terminal)
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def mark_episode_end(self):
        """Flag the most recently pushed transition as the last of its episode."""
        if self.size == 0:
            raise EmptyBufferError("no transition to mark")
        self.episode_ends[(self.ptr - 1) % self.capacity] = True

    def set_rewards(self, logical_indices, rewards):
        self.rewards[self._physical(np.asarray(logical_indices))] = rewards

    def _physical(self, logical):
        return (self.ptr - self.size + logical) % self.capacity

    def get(self, logical) -> Transition:
        """Transition at logical position ``logical`` (0 = oldest survivor)."""
        if not 0 <= logical < self.size:
            raise IndexError(logical)
        i = self._physical(logical)
        return Transition(self.states[i].copy(), self.actions[i].copy(), float(self.rewards[i]),
                          self.next_states[i].copy(), bool(self.terminals[i]))

    def sample_uniform(self, batch_size, rng) -> Transition:
        """I.i.d. uniform draws with replacement, returned as stacked arrays."""
        if self.size == 0:
            raise EmptyBufferError("cannot sample from an empty buffer")
        i = self._physical(rng.integers(0, self.size, size=batch_size))
        return Transition(self.states[i], self.actions[i], self.rewards[i],
                          self.next_states[i], self.terminals[i])

    def sample_pairs(self, batch_size, rng):
        t = self.sample_uniform(batch_size, rng)
        return t.state, t.action

    def windows(self, starts, n) -> NStepBatch:
        """Assemble n-step windows beginning at the given logical indices."""
        if n < 1:
            raise ContractError("n must be >= 1")
        starts = np.asarray(starts)
        B = len(starts)
        valid = np.zeros((B, n), dtype=bool)
        valid[:, 0] = True
        phys = np.empty((B, n), dtype=np.int64)
        phys[:, 0] = self._physical(starts)
        for j in range(1, n):
            logical = starts + j
            in_range = logical < self.size
            prev = phys[:, j - 1]
            valid[:, j] = valid[:, j - 1] & in_range & ~self.episode_ends[prev]
            phys[:, j] = self._physical(np.minimum(logical, self.size - 1))
        k = valid.sum(axis=1)
        last = phys[np.arange(B), k - 1]
        v3 = valid[:, :, None]
        return NStepBatch(
            states=np.where(v3, self.states[phys], 0.0),
            actions=np.where(v3, self.actions[phys], 0.0),
            rewards=np.where(valid, self.rewards[phys], 0.0),
            next_states=np.where(v3, self.next_states[phys], 0.0),
            terminals=valid & self.terminals[phys],
            valid=valid,
            k=k,
            bootstrap_states=self.next_states[last],
            bootstrap_masked=self.terminals[last].copy(),
        )

    def sample_nstep(self, batch_size, n, rng) -> NStepBatch:
        if self.size == 0:
            raise EmptyBufferError("no valid window starts")
        starts = rng.integers(0, self.size, size=batch_size)
        return self.windows(starts, n)

    def dump(self, path):
        """Write the stored transitions as JSON lines, oldest first."""
        with open(path, "w") as fh:
            fh.write(json.dumps({"size": self.size, "capacity": self.capacity,
                                 "state_dim": self.state_dim,
                                 "action_dim": self.action_dim}) + "\n")
            for logical in range(self.size):
                i = self._physical(logical)
                fh.write(json.dumps({
                    "state": self.states[i].tolist(), "action": self.actions[i].tolist(),
                    "syn_reward": float(self.rewards[i]),
                    "next_state": self.next_states[i].tolist(),
                    "terminal": bool(self.terminals[i]),
                    "episode_end": bool(self.episode_ends[i])}) + "\n")


class RoundCollector:
    """The transitions gathered in the latest collection phase.

    The reward module's on-policy phase samples only from here.
    """

    def __init__(self):
        self._states = []
        self._actions = []
        self._complete = None

    def begin(self):
        self._states, self._actions = [], []

    def add(self, state, action):
        self._states.append(np.asarray(state, dtype=np.float64))
        self._actions.append(np.asarray(action, dtype=np.float64))

    def end(self):
        if not self._states:
            raise ContractError("a collection round must contain at least one step")
        self._complete = (np.array(self._states), np.array(self._actions))

    def __len__(self):
        return 0 if self._complete is None else len(self._complete[0])

    @property
    def pairs(self):
        if self._complete is None:
            raise ContractError("no completed collection round")
        return self._complete

    def sample(self, batch_size, rng):
        states, actions = self.pairs
        i = rng.integers(0, len(states), size=batch_size)
        return states[i], actions[i]
