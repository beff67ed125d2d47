"""Occupancy-grid navigation with goal-conditioned episodes and a BFS oracle.

Maps are boolean occupancy arrays (True = wall) with walled borders.  The
agent moves North/South/East/West; moves into walls keep it in place; with
probability slip_prob the executed direction is replaced by a uniformly
random one.  Reward is -1 on every step.
"""

from __future__ import annotations

import dataclasses
import re
from enum import IntEnum
from typing import NamedTuple, Optional

import numpy as np

from .kernels import bfs_distance_field


class State(NamedTuple):
    x: int
    y: int


class Action(IntEnum):
    NORTH = 0
    SOUTH = 1
    EAST = 2
    WEST = 3


# (dx, dy) per action; NORTH decreases y (row 0 is the top of the text form).
ACTION_DELTAS = ((0, -1), (0, 1), (1, 0), (-1, 0))


@dataclasses.dataclass
class EpisodeConfig:
    max_steps: int = 100
    slip_prob: float = 0.1
    goal_radius: int = 0
    nearby_goal_prob: float = 0.8
    nearby_goal_steps: int = 4

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        for name in ("slip_prob", "nearby_goal_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.goal_radius < 0 or self.nearby_goal_steps < 0:
            raise ValueError("radii must be non-negative")


@dataclasses.dataclass
class Transition:
    state: State
    action: int
    next_state: State
    goal: State
    reward: float
    done: bool
    timeout: bool


class GridMap:
    """Immutable occupancy grid.  Distance fields are cached per source."""

    def __init__(self, name: str, occupancy: np.ndarray):
        occ = np.ascontiguousarray(occupancy, dtype=np.bool_)
        if occ.ndim != 2:
            raise ValueError("occupancy must be 2-D")
        h, w = occ.shape
        if h < 3 or w < 3:
            raise ValueError("map must be at least 3x3")
        border = np.concatenate([occ[0], occ[-1], occ[:, 0], occ[:, -1]])
        if not border.all():
            raise ValueError(f"map {name!r} must have walls on every border cell")
        if (~occ).sum() < 2:
            raise ValueError(f"map {name!r} needs at least two free cells")
        occ.setflags(write=False)
        self.name = name
        self.occupancy = occ
        ys, xs = np.nonzero(~occ)
        self.free_cells = np.stack([xs, ys], axis=1).astype(np.int32)
        self.cell_index = np.full((h, w), -1, dtype=np.int32)
        self.cell_index[ys, xs] = np.arange(len(xs), dtype=np.int32)
        self._fields: dict[tuple[int, int], np.ndarray] = {}

    @property
    def width(self) -> int:
        return self.occupancy.shape[1]

    @property
    def height(self) -> int:
        return self.occupancy.shape[0]

    @property
    def num_free(self) -> int:
        return len(self.free_cells)

    def is_free(self, x: int, y: int) -> bool:
        return (
            0 <= x < self.width
            and 0 <= y < self.height
            and not self.occupancy[y, x]
        )

    def require_free(self, s: State) -> None:
        if not self.is_free(s.x, s.y):
            raise ValueError(f"{tuple(s)} is not a free cell of map {self.name!r}")

    def distance_field(self, source: State) -> np.ndarray:
        """BFS step counts from source to every cell; -1 where unreachable."""
        key = (int(source.x), int(source.y))
        field = self._fields.get(key)
        if field is None:
            self.require_free(source)
            field = bfs_distance_field(self.occupancy, key[0], key[1])
            field.setflags(write=False)
            self._fields[key] = field
        return field

    def __repr__(self):
        return f"GridMap({self.name!r}, {self.width}x{self.height})"


def oracle_distance(grid: GridMap, s: State, g: State) -> Optional[int]:
    """Exact shortest-path steps between free cells; None when unreachable."""
    grid.require_free(s)
    grid.require_free(g)
    d = int(grid.distance_field(g)[s.y, s.x])
    return None if d < 0 else d


def within_goal(grid: GridMap, s: State, goal: State, radius: int) -> bool:
    if radius == 0:
        return s == goal
    d = grid.distance_field(goal)[s.y, s.x]
    return 0 <= d <= radius


def reset(grid: GridMap, cfg: EpisodeConfig, rng: np.random.Generator) -> tuple[State, State]:
    """Sample (start, goal): start uniform over free cells; goal nearby with
    probability nearby_goal_prob (uniform within nearby_goal_steps BFS steps,
    excluding start), else uniform over free cells != start."""
    cells = grid.free_cells
    start = State(*map(int, cells[rng.integers(len(cells))]))
    nearby = rng.random() < cfg.nearby_goal_prob
    if nearby:
        field = grid.distance_field(start)
        ys, xs = np.nonzero((field > 0) & (field <= cfg.nearby_goal_steps))
        if len(xs) > 0:
            i = rng.integers(len(xs))
            return start, State(int(xs[i]), int(ys[i]))
        # isolated start: fall through to the uniform rule
    while True:
        goal = State(*map(int, cells[rng.integers(len(cells))]))
        if goal != start:
            return start, goal


def step(
    grid: GridMap,
    state: State,
    action: int,
    goal: State,
    cfg: EpisodeConfig,
    rng: np.random.Generator,
) -> Transition:
    executed = int(action)
    if cfg.slip_prob > 0.0 and rng.random() < cfg.slip_prob:
        executed = int(rng.integers(4))
    dx, dy = ACTION_DELTAS[executed]
    nx, ny = state.x + dx, state.y + dy
    if not grid.is_free(nx, ny):
        nx, ny = state.x, state.y  # wall move projects back to the current cell
    next_state = State(nx, ny)
    done = within_goal(grid, next_state, goal, cfg.goal_radius)
    return Transition(
        state=state,
        action=int(action),
        next_state=next_state,
        goal=goal,
        reward=-1.0,
        done=done,
        timeout=False,
    )


def random_walk_states(
    grid: GridMap, n: int, rng: np.random.Generator, cfg: EpisodeConfig | None = None
) -> list[State]:
    """n states visited by uniform-random-action episodes (fresh reset each
    episode, length cfg.max_steps).  Duplicates allowed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if cfg is None:
        cfg = EpisodeConfig()
    out: list[State] = []
    while len(out) < n:
        state, goal = reset(grid, cfg, rng)
        out.append(state)
        for _ in range(cfg.max_steps):
            if len(out) >= n:
                break
            t = step(grid, state, int(rng.integers(4)), goal, cfg, rng)
            state = t.next_state
            out.append(state)
    return out[:n]


# ---------------------------------------------------------------------------
# Built-in layouts


def _empty(width: int, height: int) -> np.ndarray:
    occ = np.ones((height, width), dtype=np.bool_)
    occ[1:-1, 1:-1] = False
    return occ


def _u_maze() -> np.ndarray:
    # 15x15 folded corridor: a horizontal bar attached to the left wall with
    # a gap on the right, so straight-line-near pairs are far in path length.
    occ = _empty(15, 15)
    occ[7, 1:12] = True
    return occ


def _four_rooms(size: int, doors: tuple[tuple[int, int], ...]) -> np.ndarray:
    occ = _empty(size, size)
    mid = size // 2
    occ[mid, :] = True
    occ[:, mid] = True
    for x, y in doors:
        occ[y, x] = False
    return occ


def _recursive_backtracker(seed: int, size: int) -> np.ndarray:
    """Perfect maze on an odd lattice: cells at odd coordinates, walls carved
    between visited neighbors, depth-first with a stack."""
    if size < 5 or size % 2 == 0:
        raise ValueError(f"random_maze size must be odd and >= 5, got {size}")
    rng = np.random.default_rng(seed)
    occ = np.ones((size, size), dtype=np.bool_)
    k = (size - 1) // 2  # lattice cells per axis
    visited = np.zeros((k, k), dtype=np.bool_)

    def carve(cx, cy):
        occ[2 * cy + 1, 2 * cx + 1] = False

    stack = [(int(rng.integers(k)), int(rng.integers(k)))]
    visited[stack[0][1], stack[0][0]] = True
    carve(*stack[0])
    while stack:
        cx, cy = stack[-1]
        nbrs = []
        for dx, dy in ((0, -1), (0, 1), (1, 0), (-1, 0)):
            mx, my = cx + dx, cy + dy
            if 0 <= mx < k and 0 <= my < k and not visited[my, mx]:
                nbrs.append((mx, my))
        if not nbrs:
            stack.pop()
            continue
        mx, my = nbrs[rng.integers(len(nbrs))]
        visited[my, mx] = True
        carve(mx, my)
        occ[cy + my + 1, cx + mx + 1] = False  # wall cell between the two
        stack.append((mx, my))
    return occ


_RANDOM_MAZE_RE = re.compile(
    r"^random_maze\(\s*seed\s*=\s*(-?\d+)\s*,\s*size\s*=\s*(\d+)\s*\)$"
)


def builtin_map(name: str) -> GridMap:
    """Named layouts: u_maze, four_rooms, large_four_rooms, and
    random_maze(seed=S, size=K) for deterministic generated mazes."""
    name = name.strip()
    if name == "u_maze":
        return GridMap(name, _u_maze())
    if name == "four_rooms":
        # doors: two per dividing wall, symmetric
        return GridMap(name, _four_rooms(21, ((10, 5), (10, 15), (5, 10), (15, 10))))
    if name == "large_four_rooms":
        # doors near the corners so cross-room routes wind; longest shortest
        # path is 116 steps, which keeps 100-step goals reachable
        return GridMap(
            name, _four_rooms(61, ((30, 2), (30, 58), (2, 30), (58, 30)))
        )
    m = _RANDOM_MAZE_RE.match(name)
    if m:
        seed, size = int(m.group(1)), int(m.group(2))
        canon = f"random_maze(seed={seed},size={size})"
        return GridMap(canon, _recursive_backtracker(seed, size))
    raise ValueError(f"unknown map name {name!r}")


def random_maze(seed: int, size: int) -> GridMap:
    return builtin_map(f"random_maze(seed={seed},size={size})")


# ---------------------------------------------------------------------------
# Map text format: first line "width height", then height rows of width chars,
# '#' = wall and '.' = free.


def map_to_text(grid: GridMap) -> str:
    rows = ["".join("#" if c else "." for c in row) for row in grid.occupancy]
    return f"{grid.width} {grid.height}\n" + "\n".join(rows) + "\n"


def parse_map_text(text: str, name: str = "custom") -> GridMap:
    lines = text.splitlines()
    if not lines:
        raise ValueError("empty map text")
    header = lines[0].split()
    if len(header) != 2:
        raise ValueError(f"bad map header {lines[0]!r}, expected 'width height'")
    w, h = int(header[0]), int(header[1])
    rows = lines[1 : 1 + h]
    if len(rows) != h:
        raise ValueError(f"expected {h} rows, got {len(rows)}")
    occ = np.ones((h, w), dtype=np.bool_)
    for y, row in enumerate(rows):
        if len(row) != w:
            raise ValueError(f"row {y} has length {len(row)}, expected {w}")
        for x, ch in enumerate(row):
            if ch == "#":
                occ[y, x] = True
            elif ch == ".":
                occ[y, x] = False
            else:
                raise ValueError(f"bad map character {ch!r} at row {y}, col {x}")
    return GridMap(name, occ)


def load_map_file(path: str) -> GridMap:
    from pathlib import Path

    p = Path(path)
    return parse_map_text(p.read_text(), name=p.stem)
