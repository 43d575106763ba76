"""Transition storage and hindsight relabeling.

The buffer is a fixed-capacity ring with oldest-first eviction plus a
per-episode index so that "future" goal substitution can look up any later
step of the same episode. Relabeling swaps the goal for the cell set some
future state actually reached and recomputes reward/done through the
environment's reward rule; state, action and next_state are never touched.

Action masks are recomputed from states on demand by default (the dynamics
are deterministic, so this is bit-identical to storing them); pass
store_masks=True to keep the masks captured at collection time instead.
"""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import env
from .env import GoalSpec
from .geometry import Cell


@dataclass(frozen=True)
class Transition:
    state: tuple[Cell, ...]
    action: int
    reward: float
    next_state: tuple[Cell, ...]
    done: bool
    goal: GoalSpec
    episode: int
    step: int
    mask: Optional[np.ndarray] = None
    next_mask: Optional[np.ndarray] = None


def relabel(
    t: Transition, future: Transition, printed_reward_sign: bool = False
) -> Transition:
    """Substitute the goal actually achieved by `future.next_state` and
    recompute (reward, done) exactly as the environment would."""
    if future.episode != t.episode:
        raise ValueError(
            f"future transition from episode {future.episode}, expected {t.episode}"
        )
    if future.step < t.step:
        raise ValueError(f"future step {future.step} precedes step {t.step}")
    new_goal = env.achieved_goal(future.next_state)
    reward, done = env.reward_done(
        t.state, t.action, t.next_state, new_goal, printed_reward_sign
    )
    return replace(t, goal=new_goal, reward=reward, done=done)


class ReplayBuffer:
    """Fixed-capacity FIFO transition store with per-episode future lookup.

    Single-writer, single-reader; callers serialize concurrent access.
    """

    def __init__(
        self,
        capacity: int,
        store_masks: bool = False,
        printed_reward_sign: bool = False,
    ):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.store_masks = store_masks
        self.printed_reward_sign = printed_reward_sign
        self._slots: list[Transition] = []  # grows to capacity, then wraps
        self._pos = 0
        self._size = 0
        self._episodes: dict[int, deque[int]] = defaultdict(deque)

    def __len__(self) -> int:
        return self._size

    def push(self, t: Transition) -> None:
        if not self.store_masks and (t.mask is not None or t.next_mask is not None):
            t = replace(t, mask=None, next_mask=None)
        if self._size < self.capacity:
            self._slots.append(t)
        else:
            # Oldest-first eviction: the evicted transition is the earliest
            # remaining step of its episode.
            evicted = self._slots[self._pos]
            slots = self._episodes[evicted.episode]
            assert slots[0] == self._pos
            slots.popleft()
            if not slots:
                del self._episodes[evicted.episode]
            self._slots[self._pos] = t
        self._episodes[t.episode].append(self._pos)
        self._pos = (self._pos + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _future_of(self, t: Transition, rng: np.random.Generator) -> Transition:
        candidates = [
            self._slots[s]
            for s in self._episodes[t.episode]
            if self._slots[s].step >= t.step
        ]
        return candidates[rng.integers(len(candidates))]

    def sample(
        self, batch_size: int, her_ratio: float, rng: np.random.Generator
    ) -> list[Transition]:
        """Uniform sample (with replacement); each transition is relabeled
        with probability her_ratio using a uniformly random future step of
        its own episode."""
        if self._size == 0:
            raise ValueError("cannot sample from an empty buffer")
        indices = rng.integers(self._size, size=batch_size)
        batch = []
        for idx in indices:
            t = self._slots[idx]
            if her_ratio > 0 and rng.random() < her_ratio:
                t = relabel(t, self._future_of(t, rng), self.printed_reward_sign)
            batch.append(t)
        return batch
