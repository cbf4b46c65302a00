"""A* route planning on the battle grid.

Movement is 8-connected: straight steps cost 1, diagonal steps sqrt(2). The
heuristic is octile distance, which never overestimates under those costs.
Only static structures block cells; units do not. A query whose goal cell is
itself blocked (a tower or crystal) resolves to the cheapest path ending on a
passable cell adjacent to the goal, which is what "walk to that building"
means in practice.

Expansion order is deterministic: ties on f-cost break toward the smaller
(row, col) node so repeated runs produce identical paths.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .actions import DELTA_TO_MOVE, MOVE_DELTAS, MOVE_STAY

SQRT2 = math.sqrt(2.0)

# The eight step deltas (exclues stay), with their costs.
_STEPS = tuple((dx, dy, SQRT2 if dx and dy else 1.0) for dx, dy in MOVE_DELTAS[:8])

Cell = tuple[int, int]


@dataclass(frozen=True)
class PathQuery:
    """A routing request: boolean passability grid plus start/goal cells.

    ``grid[y, x]`` is True where a unit may stand. Cells are (x, y).
    """

    grid: np.ndarray
    start: Cell
    goal: Cell

    def validate(self) -> None:
        h, w = self.grid.shape
        for name, (x, y) in (("start", self.start), ("goal", self.goal)):
            if not (0 <= x < w and 0 <= y < h):
                raise ValueError(f"{name} cell {(x, y)} outside {w}x{h} grid")
        sx, sy = self.start
        if not self.grid[sy, sx]:
            raise ValueError(f"start cell {self.start} is not passable")


@dataclass(frozen=True)
class Path:
    """An ordered walk from start toward goal with its total step cost."""

    cells: tuple[Cell, ...]
    cost: float


def octile(a: Cell, b: Cell) -> float:
    """Octile distance: exact 8-connected cost on an empty grid."""
    dx = abs(a[0] - b[0])
    dy = abs(a[1] - b[1])
    lo, hi = (dx, dy) if dx < dy else (dy, dx)
    return hi - lo + SQRT2 * lo


def astar(query: PathQuery) -> Path | None:
    """Cheapest 8-connected path, or None when the goal is unreachable.

    If the goal cell is impassable the search targets the cheapest passable
    cell adjacent to it and the returned path stops there.
    """
    query.validate()
    grid = query.grid
    h, w = grid.shape
    start, goal = query.start, query.goal
    goal_blocked = not grid[goal[1], goal[0]]

    if start == goal:
        return Path((start,), 0.0)
    if goal_blocked and octile(start, goal) <= SQRT2:
        # Already standing next to the blocked goal.
        return Path((start,), 0.0)

    # With a blocked goal the search targets any adjacent cell, so the plain
    # octile estimate can overshoot by one diagonal; shift it to stay
    # admissible.
    def heuristic(c: Cell) -> float:
        h_goal = octile(c, goal)
        return max(0.0, h_goal - SQRT2) if goal_blocked else h_goal

    g: dict[Cell, float] = {start: 0.0}
    came: dict[Cell, Cell] = {}
    # Heap entries: (f, row, col, cell). Row/col keep tie-breaking stable.
    open_heap: list[tuple[float, int, int, Cell]] = [
        (heuristic(start), start[1], start[0], start)
    ]
    closed: set[Cell] = set()

    def is_target(c: Cell) -> bool:
        if goal_blocked:
            return max(abs(c[0] - goal[0]), abs(c[1] - goal[1])) == 1
        return c == goal

    while open_heap:
        _, _, _, cur = heapq.heappop(open_heap)
        if cur in closed:
            continue
        if is_target(cur):
            cells = [cur]
            while cur in came:
                cur = came[cur]
                cells.append(cur)
            cells.reverse()
            return Path(tuple(cells), g[cells[-1]])
        closed.add(cur)
        cx, cy = cur
        for dx, dy, step_cost in _STEPS:
            nx, ny = cx + dx, cy + dy
            if not (0 <= nx < w and 0 <= ny < h) or not grid[ny, nx]:
                continue
            nxt = (nx, ny)
            ng = g[cur] + step_cost
            if ng < g.get(nxt, math.inf) - 1e-12:
                g[nxt] = ng
                came[nxt] = cur
                heapq.heappush(open_heap, (ng + heuristic(nxt), ny, nx, nxt))
    return None


def next_move_action(path: Path, current: Cell) -> int:
    """Map the step from ``current`` to its successor on ``path`` onto a
    move-head index; stay when current is the final cell."""
    try:
        idx = path.cells.index(current)
    except ValueError:
        raise ValueError(f"cell {current} is not on the path") from None
    if idx == len(path.cells) - 1:
        return MOVE_STAY
    nxt = path.cells[idx + 1]
    delta = (nxt[0] - current[0], nxt[1] - current[1])
    return DELTA_TO_MOVE[delta]
