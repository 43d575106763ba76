"""Minimum-cost assignment between current and goal cells.

The configuration distance is the smallest total Euclidean distance over
all ways of pairing the n current cells with the n goal cells. The fast
path solves the assignment exactly with scipy's linear_sum_assignment;
`hungarian` additionally refines ties so the returned permutation is the
lexicographically smallest optimal one, which keeps downstream output
deterministic. The brute-force permutation oracle lives in
pivotcube.oracle and stays independent of this module.
"""

from __future__ import annotations

from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import Cell

_TIE_TOL = 1e-9


class Assignment(NamedTuple):
    permutation: tuple[int, ...]
    total_cost: float


def cost_matrix(current: Sequence[Cell], goal: Sequence[Cell]) -> np.ndarray:
    """Pairwise Euclidean distances, entry (i, j) = |current[i] - goal[j]|."""
    if len(current) != len(goal):
        raise ValueError(f"cell-set sizes differ: {len(current)} vs {len(goal)}")
    s = np.asarray(current, dtype=float)
    g = np.asarray(goal, dtype=float)
    return np.linalg.norm(s[:, None, :] - g[None, :, :], axis=2)


def _validate(cost: np.ndarray) -> np.ndarray:
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix entries must be finite")
    if (cost < 0).any():
        raise ValueError("cost matrix entries must be nonnegative")
    return cost


def _optimal_cost(cost: np.ndarray) -> float:
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def hungarian(cost: np.ndarray) -> Assignment:
    """Minimum-cost permutation; among optima, the lexicographically smallest.

    Ties are resolved by fixing rows in order and keeping, for each row, the
    smallest column whose choice still extends to an optimal completion.
    """
    cost = _validate(cost)
    n = cost.shape[0]
    best = _optimal_cost(cost)
    tol = _TIE_TOL * max(1.0, float(np.abs(cost).max()))

    free = list(range(n))
    perm: list[int] = []
    prefix = 0.0
    for i in range(n):
        for j in free:
            remainder = 0.0
            if i + 1 < n:
                rest = [c for c in free if c != j]
                remainder = _optimal_cost(cost[np.ix_(range(i + 1, n), rest)])
            if prefix + cost[i, j] + remainder <= best + tol:
                perm.append(j)
                free.remove(j)
                prefix += cost[i, j]
                break
        else:  # pragma: no cover - the optimal column always exists
            raise RuntimeError("no optimal completion found; tolerance too tight")
    total = float(sum(cost[i, perm[i]] for i in range(n)))
    return Assignment(tuple(perm), total)


def config_distance(current: Sequence[Cell], goal: Sequence[Cell]) -> float:
    """Minimum total Euclidean distance under an optimal module-to-goal
    matching; 0 exactly when the two cell sets coincide."""
    return _optimal_cost(cost_matrix(current, goal))


@lru_cache(maxsize=1 << 18)
def _distance_by_key(current_key: tuple, goal_key: tuple) -> float:
    return config_distance(current_key, goal_key)


def config_distance_cached(current: Sequence[Cell], goal: Sequence[Cell]) -> float:
    """Memoized config_distance. The distance depends only on the two cell
    sets, so the key is order-normalized; training hits the same
    (state, goal) pairs constantly."""
    return _distance_by_key(tuple(sorted(current)), tuple(sorted(goal)))
