"""Goal-conditioned reconfiguration environment.

An episode starts from a deterministic line (or a randomly sampled shape),
draws a target cell set, and ends when the moving modules occupy exactly
the goal cells or the step budget runs out. Rewards: +10 on completion,
-1 for a no-op before completion, otherwise the decrease in configuration
distance caused by the move, so the per-step shaping telescopes to
D(start, goal) - D(end, goal) over any no-op-free unfinished stretch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import geometry, matching
from .geometry import Cell, InvalidActionError

GOAL_REWARD = 10.0
NOOP_REWARD = -1.0

GoalSpec = tuple[Cell, ...]

_FACE_STEPS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))


def default_max_steps(n: int) -> int:
    if n == 4:
        return 50
    if n == 6:
        return 100
    return 25 * (n - 1)


@dataclass
class EnvConfig:
    n: int
    max_steps: Optional[int] = None
    start_mode: str = "line"
    strict_connectivity: bool = False
    gamma: float = 0.98
    # Ablation switch: use the raw printed form of the shaping term,
    # D(next) - D(current), instead of the decrease-in-distance form.
    printed_reward_sign: bool = False

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("environment needs at least 2 modules")
        if self.max_steps is None:
            self.max_steps = default_max_steps(self.n)
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if self.start_mode not in ("line", "random"):
            raise ValueError(f"unknown start_mode {self.start_mode!r}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("discount factor must lie in (0, 1)")


@dataclass(frozen=True)
class StepResult:
    state: tuple[Cell, ...]
    reward: float
    done: bool
    truncated: bool
    mask: np.ndarray = field(repr=False)


def canonical_goal(cells: Iterable[Cell]) -> GoalSpec:
    """Sort a goal cell set canonically, validating the goal invariants."""
    goal = tuple(sorted(cells))
    if len(set(goal)) != len(goal):
        raise ValueError("goal cells must be distinct")
    if (0, 0, 0) not in goal:
        raise ValueError("goal must contain the origin")
    if not geometry.is_connected(goal):
        raise ValueError("goal cells must be face-connected")
    return goal


def sample_goal(n: int, rng: np.random.Generator) -> GoalSpec:
    """Random face-connected n-cell shape containing the origin, grown by
    repeatedly occupying a uniformly random empty face-neighbor of the set."""
    if n < 1:
        raise ValueError("goal needs at least one cell")
    cells = {(0, 0, 0)}
    frontier = set(_FACE_STEPS)
    while len(cells) < n:
        choices = sorted(frontier)
        pick = choices[rng.integers(len(choices))]
        cells.add(pick)
        frontier.discard(pick)
        x, y, z = pick
        for dx, dy, dz in _FACE_STEPS:
            nb = (x + dx, y + dy, z + dz)
            if nb not in cells:
                frontier.add(nb)
    return tuple(sorted(cells))


def achieved_goal(state: Sequence[Cell]) -> GoalSpec:
    """Goal-space image of a state: its cell set in canonical order."""
    return tuple(sorted(state))


def line_start(n: int) -> tuple[Cell, ...]:
    return tuple((i, 0, 0) for i in range(n))


def reset(
    cfg: EnvConfig, rng: np.random.Generator
) -> tuple[tuple[Cell, ...], GoalSpec, np.ndarray]:
    """Draw an initial configuration and a goal (resampled until it differs
    from the start cell set); returns the initial action mask too."""
    if cfg.start_mode == "line":
        state = line_start(cfg.n)
    else:
        shape = sample_goal(cfg.n, rng)
        state = ((0, 0, 0),) + tuple(c for c in shape if c != (0, 0, 0))
    start_set = frozenset(state)
    goal = sample_goal(cfg.n, rng)
    while frozenset(goal) == start_set:
        goal = sample_goal(cfg.n, rng)
    return state, goal, geometry.action_mask(state, cfg.strict_connectivity)


def reward_done(
    state: Sequence[Cell],
    action_id: int,
    next_state: Sequence[Cell],
    goal: GoalSpec,
    printed_reward_sign: bool = False,
) -> tuple[float, bool]:
    """The reward rule as a pure function; also used for replay relabeling."""
    done = frozenset(next_state) == frozenset(goal)
    if done:
        return GOAL_REWARD, True
    if action_id == 0:
        return NOOP_REWARD, False
    before = matching.config_distance_cached(state, goal)
    after = matching.config_distance_cached(next_state, goal)
    if printed_reward_sign:
        return after - before, False
    return before - after, False


def step(
    state: Sequence[Cell],
    action_id: int,
    goal: GoalSpec,
    step_index: int,
    cfg: EnvConfig,
) -> StepResult:
    """Apply one action. Raises InvalidActionError for masked-invalid actions;
    callers are expected to sample from the masked policy."""
    action = geometry.decode_action(action_id, cfg.n)
    next_state = geometry.apply(state, action, cfg.strict_connectivity)
    reward, done = reward_done(
        state, action_id, next_state, goal, cfg.printed_reward_sign
    )
    truncated = not done and step_index + 1 >= cfg.max_steps
    mask = geometry.action_mask(next_state, cfg.strict_connectivity)
    return StepResult(next_state, reward, done, truncated, mask)


def encode_observation(state: Sequence[Cell], goal: GoalSpec) -> np.ndarray:
    """Network input: state cells in module order then goal cells in canonical
    order, coordinates scaled by 1/max(n-1, 1) so every entry is in [-1, 1]."""
    n = len(state)
    if len(goal) != n:
        raise ValueError(f"state/goal sizes differ: {n} vs {len(goal)}")
    scale = float(max(n - 1, 1))
    flat = np.asarray(tuple(state) + tuple(goal), dtype=float).ravel()
    return flat / scale


class ReconfigEnv:
    """Single-owner stateful wrapper around the pure reset/step operations.

    Multiple instances may run concurrently with independent rngs; all the
    query helpers on this module are pure.
    """

    def __init__(self, cfg: EnvConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.state: tuple[Cell, ...] = ()
        self.goal: GoalSpec = ()
        self.mask: np.ndarray = np.zeros(0, dtype=bool)
        self.step_index = 0

    def reset(self) -> tuple[tuple[Cell, ...], GoalSpec, np.ndarray]:
        self.state, self.goal, self.mask = reset(self.cfg, self.rng)
        self.step_index = 0
        return self.state, self.goal, self.mask

    def step(self, action_id: int) -> StepResult:
        result = step(self.state, action_id, self.goal, self.step_index, self.cfg)
        self.state = result.state
        self.mask = result.mask
        self.step_index += 1
        return result


def trajectory_record(
    step_idx: int,
    action_id: int,
    before: Sequence[Cell],
    after: Sequence[Cell],
    reward: float,
    done: bool,
    goal: GoalSpec,
) -> dict:
    """One JSON-serializable trajectory step (the JSONL export schema)."""
    rotation = geometry.decode_action(action_id, len(before))
    if rotation is None:
        module = edge = angle = None
    else:
        module = rotation.module
        edge = [geometry.AXIS_NAMES[rotation.edge.axis], rotation.edge.s_u, rotation.edge.s_v]
        angle = rotation.angle
    return {
        "step": step_idx,
        "action_id": int(action_id),
        "module": module,
        "edge": edge,
        "angle_deg": angle,
        "cells_before": [list(c) for c in before],
        "cells_after": [list(c) for c in after],
        "reward": float(reward),
        "done": bool(done),
        "goal": [list(c) for c in goal],
    }
