"""Pivoting-cube kinematics on the integer lattice.

A configuration is an ordered tuple of distinct integer cells (one per
module); module 0 is pinned at the origin and the face-adjacency graph
over the cells must stay connected. A module moves by pivoting about one
of its 12 edges by +/-90 or +/-180 degrees (positive = counterclockwise
when viewed from the positive direction of the pivot axis).

Action encoding (frozen contract, used by trajectory files and checkpoints):

* action 0 is the no-op;
* action id in [1, 48*(n-1)] decodes as
      module = 1 + (id-1) // 48
      local  = (id-1) % 48
      edge   = EDGES[local // 4]
      angle  = ANGLES[local % 4]
* EDGES enumerates axes X, Y, Z, each with sign pairs
  (-,-), (-,+), (+,-), (+,+) for the offsets (+/-0.5) along the two
  remaining axes in canonical order X->(Y,Z), Y->(Z,X), Z->(X,Y);
* ANGLES = (+90, -90, +180, -180).

All operations here are pure functions; there is no shared mutable state.
"""

from __future__ import annotations

import enum
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

Cell = tuple[int, int, int]

AXIS_NAMES = ("x", "y", "z")

# Canonical in-plane axes for each pivot axis: axis -> (u, v).
_PLANE = {0: (1, 2), 1: (2, 0), 2: (0, 1)}


class EdgeSpec(NamedTuple):
    """Pivot edge of a cube: parallel to `axis`, offset (0.5*s_u, 0.5*s_v)
    from the cube center along the two remaining axes in canonical order."""

    axis: int  # 0=X, 1=Y, 2=Z
    s_u: int   # -1 or +1
    s_v: int   # -1 or +1


class Rotation(NamedTuple):
    module: int
    edge: EdgeSpec
    angle: int  # one of +/-90, +/-180


class RotationCheck(enum.Enum):
    VALID = "valid"
    INVALID_A = "invalid_a"  # pivot edge not anchored to a neighbor
    INVALID_B = "invalid_b"  # sweep interferes with another module
    INVALID_C = "invalid_c"  # result (or strict-mode remainder) disconnected


class InvalidActionError(ValueError):
    """Raised when a rotation that fails validity checks is applied."""


ANGLES = (90, -90, 180, -180)
EDGES = tuple(
    EdgeSpec(axis, s_u, s_v)
    for axis in (0, 1, 2)
    for (s_u, s_v) in ((-1, -1), (-1, 1), (1, -1), (1, 1))
)

ACTIONS_PER_MODULE = len(EDGES) * len(ANGLES)  # 48


def _uv_to_xyz(axis: int, du: int, dv: int) -> Cell:
    u, v = _PLANE[axis]
    out = [0, 0, 0]
    out[u] = du
    out[v] = dv
    return (out[0], out[1], out[2])


def _quarter_uv(s_u: int, s_v: int, sign: int) -> tuple[tuple[int, int], tuple[tuple[int, int], ...]]:
    """Endpoint and swept cells, in (u, v) offsets, of a single 90-degree
    pivot about the edge at (0.5*s_u, 0.5*s_v); sign=+1 is counterclockwise."""
    if sign > 0:
        d = ((s_u + s_v) // 2, (s_v - s_u) // 2)
    else:
        d = ((s_u - s_v) // 2, (s_u + s_v) // 2)
    # Unit vector perpendicular to the motion, pointing away from the pivot.
    e = (d[0] - s_u, d[1] - s_v)
    swept = (d, e, (d[0] + e[0], d[1] + e[1]))
    return d, swept


def _motion_uv(edge: EdgeSpec, angle: int) -> tuple[tuple[int, int], tuple[tuple[int, int], ...]]:
    """Endpoint and full swept-cell set in (u, v) offsets for one rotation."""
    sign = 1 if angle > 0 else -1
    d1, sw1 = _quarter_uv(edge.s_u, edge.s_v, sign)
    if abs(angle) == 90:
        return d1, sw1
    # 180 degrees: chain a second quarter turn about the same physical edge,
    # re-expressed relative to the mid-rotation cell.
    s_u2, s_v2 = edge.s_u - 2 * d1[0], edge.s_v - 2 * d1[1]
    d2, sw2 = _quarter_uv(s_u2, s_v2, sign)
    dest = (d1[0] + d2[0], d1[1] + d2[1])
    swept = tuple(dict.fromkeys(sw1 + tuple((d1[0] + c[0], d1[1] + c[1]) for c in sw2)))
    return dest, swept


def _build_tables():
    endpoint: dict[tuple[EdgeSpec, int], Cell] = {}
    swept: dict[tuple[EdgeSpec, int], tuple[Cell, ...]] = {}
    anchors: dict[EdgeSpec, tuple[Cell, Cell]] = {}
    for edge in EDGES:
        anchors[edge] = (
            _uv_to_xyz(edge.axis, edge.s_u, 0),
            _uv_to_xyz(edge.axis, 0, edge.s_v),
        )
        for angle in ANGLES:
            d, sw = _motion_uv(edge, angle)
            endpoint[(edge, angle)] = _uv_to_xyz(edge.axis, *d)
            swept[(edge, angle)] = tuple(_uv_to_xyz(edge.axis, *c) for c in sw)
    return endpoint, swept, anchors


_ENDPOINT, _SWEPT, _ANCHORS = _build_tables()


def decode_action(action_id: int, n: int) -> Optional[Rotation]:
    """Map an action id to its Rotation, or None for the no-op (id 0)."""
    if not 0 <= action_id <= ACTIONS_PER_MODULE * (n - 1):
        raise ValueError(f"action id {action_id} out of range for n={n}")
    if action_id == 0:
        return None
    local = (action_id - 1) % ACTIONS_PER_MODULE
    module = 1 + (action_id - 1) // ACTIONS_PER_MODULE
    return Rotation(module, EDGES[local // 4], ANGLES[local % 4])


def encode_action(action: Optional[Rotation], n: int) -> int:
    """Inverse of decode_action."""
    if action is None:
        return 0
    if not 1 <= action.module <= n - 1:
        raise ValueError(f"module {action.module} out of range for n={n}")
    local = EDGES.index(action.edge) * 4 + ANGLES.index(action.angle)
    return 1 + (action.module - 1) * ACTIONS_PER_MODULE + local


def num_actions(n: int) -> int:
    return ACTIONS_PER_MODULE * (n - 1) + 1


def translate(cell: Cell, offset: Cell) -> Cell:
    return (cell[0] + offset[0], cell[1] + offset[1], cell[2] + offset[2])


def rotation_endpoint(cell: Cell, edge: EdgeSpec, angle: int) -> Cell:
    """Cell occupied by the module after pivoting about `edge` by `angle`."""
    if angle not in ANGLES:
        raise ValueError(f"angle must be one of {ANGLES}, got {angle}")
    return translate(cell, _ENDPOINT[(edge, angle)])


def swept_cells(cell: Cell, edge: EdgeSpec, angle: int) -> frozenset[Cell]:
    """Every lattice cell (excluding the start cell) whose open unit cube is
    entered at some point of the rotation; always contains the endpoint."""
    if angle not in ANGLES:
        raise ValueError(f"angle must be one of {ANGLES}, got {angle}")
    return frozenset(translate(cell, off) for off in _SWEPT[(edge, angle)])


def anchor_cells(cell: Cell, edge: EdgeSpec) -> tuple[Cell, Cell]:
    """The two face-neighbors of `cell` that share the pivot edge."""
    a, b = _ANCHORS[edge]
    return (translate(cell, a), translate(cell, b))


def is_connected(cells: Iterable[Cell]) -> bool:
    """True iff the face-adjacency graph over `cells` is connected.

    Uses the Warshall transitive closure on the adjacency matrix, with the
    inner j-loop vectorized as a row bitmask OR.
    """
    cell_list = list(cells)
    m = len(cell_list)
    if m == 0:
        raise ValueError("connectivity of an empty cell set is undefined")
    if m == 1:
        return True
    reach = [1 << i for i in range(m)]
    for i in range(m):
        xi, yi, zi = cell_list[i]
        for j in range(i + 1, m):
            xj, yj, zj = cell_list[j]
            if abs(xi - xj) + abs(yi - yj) + abs(zi - zj) == 1:
                reach[i] |= 1 << j
                reach[j] |= 1 << i
    for k in range(m):
        row_k = reach[k]
        bit_k = 1 << k
        for i in range(m):
            if reach[i] & bit_k:
                reach[i] |= row_k
    return reach[0] == (1 << m) - 1


def validate_configuration(cells: Sequence[Cell]) -> None:
    """Raise ValueError unless `cells` is a valid ordered configuration."""
    if len(cells) == 0:
        raise ValueError("configuration must contain at least one module")
    if cells[0] != (0, 0, 0):
        raise ValueError(f"module 0 must sit at the origin, got {cells[0]}")
    if len(set(cells)) != len(cells):
        raise ValueError("module cells must be pairwise distinct")
    if not is_connected(cells):
        raise ValueError("configuration is not face-connected")


def check_rotation(
    config: Sequence[Cell], rotation: Rotation, strict_connectivity: bool = False
) -> RotationCheck:
    """Classify a rotation as valid or invalid type A/B/C (checked in that order).

    A: neither edge-sharing face-neighbor cell is occupied by another module.
    B: some swept cell is occupied by another module.
    C: the post-move configuration is disconnected; in strict mode the n-1
       stationary modules must additionally be connected on their own.
    """
    n = len(config)
    if not 1 <= rotation.module <= n - 1:
        raise ValueError(f"module index {rotation.module} out of range for n={n}")
    mover = config[rotation.module]
    others = set(config)
    others.discard(mover)

    if not any(c in others for c in anchor_cells(mover, rotation.edge)):
        return RotationCheck.INVALID_A
    if any(c in others for c in swept_cells(mover, rotation.edge, rotation.angle)):
        return RotationCheck.INVALID_B
    dest = rotation_endpoint(mover, rotation.edge, rotation.angle)
    if not is_connected(others | {dest}):
        return RotationCheck.INVALID_C
    if strict_connectivity and not is_connected(others):
        return RotationCheck.INVALID_C
    return RotationCheck.VALID


def action_mask(config: Sequence[Cell], strict_connectivity: bool = False) -> np.ndarray:
    """Boolean validity vector over the 48*(n-1)+1 actions; bit 0 (no-op)
    is always true."""
    n = len(config)
    mask = np.zeros(num_actions(n), dtype=bool)
    mask[0] = True
    occupied = set(config)
    action_id = 1
    for module in range(1, n):
        mover = config[module]
        others = occupied - {mover}
        for edge in EDGES:
            anchored = any(c in others for c in anchor_cells(mover, edge))
            for angle in ANGLES:
                if anchored and not any(
                    c in others for c in swept_cells(mover, edge, angle)
                ):
                    dest = rotation_endpoint(mover, edge, angle)
                    ok = is_connected(others | {dest})
                    if ok and strict_connectivity:
                        ok = is_connected(others)
                    mask[action_id] = ok
                action_id += 1
    return mask


def apply(
    config: Sequence[Cell],
    action: Optional[Rotation],
    strict_connectivity: bool = False,
) -> tuple[Cell, ...]:
    """Apply a no-op (None) or a valid Rotation, returning the new configuration.

    Raises InvalidActionError when the rotation fails the validity checks;
    callers are expected to consult the action mask first.
    """
    cells = tuple(config)
    if action is None:
        return cells
    verdict = check_rotation(cells, action, strict_connectivity)
    if verdict is not RotationCheck.VALID:
        raise InvalidActionError(
            f"rotation {action} is {verdict.value} in configuration {cells}"
        )
    dest = rotation_endpoint(cells[action.module], action.edge, action.angle)
    return cells[: action.module] + (dest,) + cells[action.module + 1 :]
