"""Independent brute-force and sampling oracles used by tests and `check`.

Nothing here shares code with the closed-form kinematics or the assignment
solver: connectivity is re-decided by breadth-first search, configuration
distance by exhaustive permutation enumeration, and swept volumes by dense
angular sampling with an exact convex-overlap test, so each oracle can
cross-examine the production implementation.
"""

from __future__ import annotations

import itertools
from collections import deque
from typing import Iterable, Optional, Sequence

import numpy as np

from . import geometry
from .geometry import Cell, EdgeSpec

_FACE_STEPS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))


def bfs_connected(cells: Iterable[Cell]) -> bool:
    """Face-adjacency connectivity, decided by breadth-first search."""
    cell_set = set(cells)
    if not cell_set:
        raise ValueError("connectivity of an empty cell set is undefined")
    start = next(iter(cell_set))
    seen = {start}
    queue = deque([start])
    while queue:
        x, y, z = queue.popleft()
        for dx, dy, dz in _FACE_STEPS:
            nb = (x + dx, y + dy, z + dz)
            if nb in cell_set and nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return len(seen) == len(cell_set)


_PERMS_CACHE: dict[int, np.ndarray] = {}


def brute_force_distance(current: Sequence[Cell], goal: Sequence[Cell]) -> float:
    """Exact minimum over all n! assignments of summed Euclidean distances."""
    n = len(current)
    if n != len(goal):
        raise ValueError(f"cell-set sizes differ: {n} vs {len(goal)}")
    if n > 8:
        raise ValueError("factorial enumeration is limited to n <= 8")
    s = np.asarray(current, dtype=float)
    g = np.asarray(goal, dtype=float)
    cost = np.linalg.norm(s[:, None, :] - g[None, :, :], axis=2)
    perms = _PERMS_CACHE.get(n)
    if perms is None:
        perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
        _PERMS_CACHE[n] = perms
    totals = cost[np.arange(n), perms].sum(axis=1)
    return float(totals.min())


def sampled_sweep(
    cell: Cell, edge: EdgeSpec, angle: int, step_degrees: float = 1.0
) -> frozenset[Cell]:
    """Swept cells obtained by rotating the unit-square cross-section about
    the pivot in `step_degrees` increments and collecting every lattice cell
    whose open square strictly overlaps a sampled pose.

    Overlap of the two convex squares is decided exactly by the separating
    axis test over the four edge normals; boundary grazing does not count.
    The 2-D result is extruded along the pivot axis (which the motion never
    leaves) and the start cell is excluded.
    """
    if step_degrees > 1.0:
        raise ValueError("step must be at most 1 degree")
    if angle not in (90, -90, 180, -180):
        raise ValueError(f"unsupported angle {angle}")

    sign = 1.0 if angle > 0 else -1.0
    total = abs(angle)
    n_steps = int(round(total / step_degrees))
    thetas = np.radians(sign * step_degrees * np.arange(1, n_steps + 1))
    cos, sin = np.cos(thetas), np.sin(thetas)  # (K,)

    pivot = np.array([0.5 * edge.s_u, 0.5 * edge.s_v])
    corners0 = np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]]) - pivot
    # Rotated corner positions per pose: pivot + R(theta) @ corner.
    rot = np.stack(
        [np.stack([cos, -sin], axis=1), np.stack([sin, cos], axis=1)], axis=1
    )  # (K, 2, 2)
    corners = pivot + np.einsum("kij,cj->kci", rot, corners0)  # (K, 4, 2)
    centers = pivot + np.einsum("kij,j->ki", rot, -pivot)  # (K, 2)

    offsets = np.array(
        [(du, dv) for du in range(-2, 3) for dv in range(-2, 3)], dtype=float
    )  # (M, 2) candidate cell centers in the rotation plane

    eps = 1e-9
    # Axis-aligned separating axes: compare the pose bounding box with the
    # candidate unit squares.
    lo = corners.min(axis=1)  # (K, 2)
    hi = corners.max(axis=1)
    overlap = (
        (offsets[None, :, 0] - 0.5 < hi[:, None, 0] - eps)
        & (lo[:, None, 0] < offsets[None, :, 0] + 0.5 - eps)
        & (offsets[None, :, 1] - 0.5 < hi[:, None, 1] - eps)
        & (lo[:, None, 1] < offsets[None, :, 1] + 0.5 - eps)
    )  # (K, M)
    # Rotated-square edge normals: project both squares onto R(theta)@ex/ey.
    for col in (0, 1):
        axis = rot[:, :, col]  # (K, 2)
        sq_c = np.einsum("ki,ki->k", centers, axis)  # rotated square center proj
        cand_c = offsets @ axis.T  # (M, K)
        cand_h = 0.5 * (np.abs(axis[:, 0]) + np.abs(axis[:, 1]))  # (K,)
        overlap &= (
            (cand_c.T - cand_h[:, None] < sq_c[:, None] + 0.5 - eps)
            & (sq_c[:, None] - 0.5 < cand_c.T + cand_h[:, None] - eps)
        )

    hit = offsets[overlap.any(axis=0)].astype(int)
    cells = set()
    for du, dv in hit:
        if (du, dv) == (0, 0):
            continue
        off = [0, 0, 0]
        u, v = {0: (1, 2), 1: (2, 0), 2: (0, 1)}[edge.axis]
        off[u], off[v] = int(du), int(dv)
        cells.add((cell[0] + off[0], cell[1] + off[1], cell[2] + off[2]))
    return frozenset(cells)


def _canonical(cells: Iterable[Cell]) -> tuple[Cell, ...]:
    return tuple(sorted(cells))


def _ordered(state: Iterable[Cell]) -> tuple[Cell, ...]:
    rest = sorted(c for c in state if c != (0, 0, 0))
    return ((0, 0, 0),) + tuple(rest)


def canonical_successors(state: Iterable[Cell]):
    """Yield (mover_cell, edge, angle, next_state) over all valid single-module
    pivots from a canonical cell set; module identity is discarded because all
    modules are interchangeable."""
    ordered = _ordered(state)
    n = len(ordered)
    for module in range(1, n):
        mover = ordered[module]
        for edge in geometry.EDGES:
            for ang in geometry.ANGLES:
                rot = geometry.Rotation(module, edge, ang)
                if geometry.check_rotation(ordered, rot) is geometry.RotationCheck.VALID:
                    dest = geometry.rotation_endpoint(mover, edge, ang)
                    nxt = _canonical(set(ordered) - {mover} | {dest})
                    yield mover, edge, ang, nxt


def reachable_sets(start: Sequence[Cell], max_depth: Optional[int] = None) -> dict:
    """BFS enumeration of canonical cell sets reachable by valid pivots;
    returns {canonical state: depth}."""
    root = _canonical(start)
    depths = {root: 0}
    queue = deque([root])
    while queue:
        state = queue.popleft()
        d = depths[state]
        if max_depth is not None and d >= max_depth:
            continue
        for _, _, _, nxt in canonical_successors(state):
            if nxt not in depths:
                depths[nxt] = d + 1
                queue.append(nxt)
    return depths


def bfs_plan(
    start: Sequence[Cell], goal: Iterable[Cell], max_depth: int = 20
) -> Optional[list[int]]:
    """Shortest sequence of action ids reaching the goal cell set, or None.

    The search runs over canonical (sorted) cell sets; the result is encoded
    against the ordered configurations produced by replaying the plan from
    `start`, so it feeds straight into the environment's step function.
    """
    n = len(tuple(start))
    root = _canonical(start)
    target = _canonical(goal)
    if root == target:
        return []
    parents: dict = {root: None}
    queue = deque([(root, 0)])
    found = False
    while queue and not found:
        state, d = queue.popleft()
        if d >= max_depth:
            continue
        for mover, edge, ang, nxt in canonical_successors(state):
            if nxt in parents:
                continue
            parents[nxt] = (state, mover, edge, ang)
            if nxt == target:
                found = True
                break
            queue.append((nxt, d + 1))
    if not found:
        return None

    moves = []
    state = target
    while parents[state] is not None:
        prev, mover, edge, ang = parents[state]
        moves.append((mover, edge, ang))
        state = prev
    moves.reverse()

    config = tuple(start)
    plan = []
    for mover, edge, ang in moves:
        module = config.index(mover)
        action_id = geometry.encode_action(geometry.Rotation(module, edge, ang), n)
        plan.append(action_id)
        config = geometry.apply(config, geometry.decode_action(action_id, n))
    return plan
