"""Maze environments: a continuous point maze and a discrete grid maze.

States are plain numpy arrays.  A continuous state is ``(x, y, vx, vy)`` and a
discrete state is a cell ``(i, j)`` where ``i`` is the column and ``j`` the row
of the layout.  In both cases the goal projection is the first two
coordinates, so ``phi(s) == s[..., :2]``.

Continuous positions live in a frame whose origin is the inner corner of the
boundary wall: cell ``(i, j)`` covers ``[(i-1)*cs, i*cs) x [(j-1)*cs, j*cs)``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CONTINUOUS = "continuous"
DISCRETE = "discrete"

UP, DOWN, LEFT, RIGHT, STAY = range(5)
ACTION_NAMES = ("Up", "Down", "Left", "Right", "Stay")
MOVES = np.array([(0, -1), (0, 1), (-1, 0), (1, 0), (0, 0)], dtype=np.int64)
N_DISCRETE_ACTIONS = len(MOVES)

DEFAULT_DT = 0.1
DEFAULT_V_MAX = 1.0
DEFAULT_DELTA = 0.5
_EDGE = 1e-6

LAYOUTS = {
    "umaze": """
#####
#...#
###.#
#...#
#####
""",
    "medium": """
########
#..##..#
#..#...#
##...###
#..#...#
#.#..#.#
#...#..#
########
""",
    "large": """
############
#....#.....#
#.##.#.#.#.#
#......#...#
#.####.###.#
#..#.#.....#
##.#.#.#.###
#..#...#...#
############
""",
    # two rooms with no doorway between them
    "two_room": """
#######
#..#..#
#..#..#
#..#..#
#..#..#
#..#..#
#..#..#
#..#..#
#..#..#
#..#..#
#..#..#
#..#..#
#..#..#
#######
""",
    "open5": """
#######
#.....#
#.....#
#.....#
#.....#
#.....#
#######
""",
}


class MazeError(ValueError):
    pass


@dataclass(eq=False)
class MazeSpec:
    name: str
    grid: np.ndarray  # bool, True where there is a wall; indexed [row, col]
    kind: str = CONTINUOUS
    cell_size: float = 1.0
    dt: float = DEFAULT_DT
    v_max: float = DEFAULT_V_MAX
    _index: dict = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=bool)
        if self.kind not in (CONTINUOUS, DISCRETE):
            raise MazeError(f"unknown maze kind {self.kind!r}")
        _validate_grid(self.grid, self.name)
        cells = [(i, j) for j in range(self.rows) for i in range(self.cols) if not self.grid[j, i]]
        self._index = {c: n for n, c in enumerate(cells)}

    @property
    def rows(self) -> int:
        return self.grid.shape[0]

    @property
    def cols(self) -> int:
        return self.grid.shape[1]

    @property
    def free_cells(self) -> list[tuple[int, int]]:
        return list(self._index)

    @property
    def n_free(self) -> int:
        return len(self._index)

    @property
    def state_dim(self) -> int:
        return 4 if self.kind == CONTINUOUS else 2

    @property
    def action_dim(self) -> int:
        return 2 if self.kind == CONTINUOUS else N_DISCRETE_ACTIONS

    @property
    def k_env(self) -> float:
        """Local Lipschitz constant of the true dynamics away from walls."""
        return 1.0 + self.dt if self.kind == CONTINUOUS else 1.0

    def cell_index(self, cell) -> int:
        return self._index[(int(cell[0]), int(cell[1]))]

    def is_free(self, i: int, j: int) -> bool:
        return 0 <= j < self.rows and 0 <= i < self.cols and not self.grid[j, i]

    def cell_of(self, point) -> tuple[int, int]:
        """Cell containing a goal-space point (continuous) or the cell itself."""
        p = np.asarray(point, dtype=float)
        if self.kind == DISCRETE:
            return int(round(p[0])), int(round(p[1]))
        return 1 + int(np.floor(p[0] / self.cell_size)), 1 + int(np.floor(p[1] / self.cell_size))

    def cells_of(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)[..., :2]
        if self.kind == DISCRETE:
            return np.rint(p).astype(np.int64)
        return 1 + np.floor(p / self.cell_size).astype(np.int64)

    def cell_center(self, cell) -> np.ndarray:
        if self.kind == DISCRETE:
            return np.array(cell, dtype=float)
        return (np.asarray(cell, dtype=float) - 0.5) * self.cell_size

    def with_kind(self, kind: str) -> "MazeSpec":
        return MazeSpec(self.name, self.grid.copy(), kind, self.cell_size, self.dt, self.v_max)

    def to_text(self) -> str:
        return "\n".join("".join("#" if w else "." for w in row) for row in self.grid)


def _validate_grid(grid: np.ndarray, name: str) -> None:
    if grid.ndim != 2 or min(grid.shape) < 3:
        raise MazeError(f"maze {name!r}: grid must be 2-D and at least 3x3")
    if grid.all():
        raise MazeError(f"maze {name!r}: no free cell")
    if not (grid[0].all() and grid[-1].all() and grid[:, 0].all() and grid[:, -1].all()):
        raise MazeError(f"maze {name!r}: outer boundary must be walls")
    rows, cols = grid.shape
    for j in range(rows):
        for i in range(cols):
            if grid[j, i]:
                continue
            if all(grid[j + dj, i + di] for di, dj in MOVES[:4]):
                raise MazeError(f"maze {name!r}: free cell ({i}, {j}) is isolated")


def parse_layout(text: str, name: str = "custom", **kwargs) -> MazeSpec:
    lines = [ln.rstrip() for ln in text.strip("\n").splitlines() if ln.strip()]
    if not lines:
        raise MazeError(f"maze {name!r}: empty layout")
    width = len(lines[0])
    rows = []
    for n, ln in enumerate(lines, 1):
        if len(ln) != width:
            raise MazeError(f"maze {name!r} line {n}: expected {width} columns, got {len(ln)}")
        bad = set(ln) - {"#", "."}
        if bad:
            raise MazeError(f"maze {name!r} line {n}: unexpected characters {sorted(bad)}")
        rows.append([c == "#" for c in ln])
    return MazeSpec(name, np.array(rows, dtype=bool), **kwargs)


def load_maze(name_or_path: str, kind: str = CONTINUOUS, **kwargs) -> MazeSpec:
    """A bundled layout by name, or a layout file on disk."""
    if name_or_path in LAYOUTS:
        return parse_layout(LAYOUTS[name_or_path], name_or_path, kind=kind, **kwargs)
    path = Path(name_or_path)
    if not path.exists():
        raise MazeError(f"unknown maze {name_or_path!r} (bundled: {', '.join(LAYOUTS)})")
    return parse_layout(path.read_text(), path.stem, kind=kind, **kwargs)


def phi(s):
    """State-to-goal projection."""
    return np.asarray(s)[..., :2]


def check_state(spec: MazeSpec, s) -> None:
    s = np.asarray(s)
    if s.shape[-1] != spec.state_dim:
        raise MazeError(f"state {s} has wrong dimension for a {spec.kind} maze")
    if not spec.is_free(*spec.cell_of(s[:2])):
        raise MazeError(f"state {s} is not inside a free cell of {spec.name!r}")
    if spec.kind == DISCRETE:
        if not np.all(s == np.rint(s)):
            raise MazeError(f"discrete state {s} must be integral")
    elif np.any(np.abs(s[2:]) > spec.v_max + 1e-9):
        raise MazeError(f"state {s} exceeds v_max={spec.v_max}")


def step(spec: MazeSpec, s, a) -> np.ndarray:
    """Ground-truth transition for a single state."""
    check_state(spec, s)
    return step_batch(spec, np.asarray(s)[None], np.asarray(a)[None])[0]


def step_batch(spec: MazeSpec, states, actions) -> np.ndarray:
    """Vectorised transition; no validity checks on the inputs."""
    if spec.kind == DISCRETE:
        return _discrete_step(spec, np.asarray(states), np.asarray(actions))
    return _continuous_step(spec, np.asarray(states, float), np.asarray(actions, float))


def _discrete_step(spec, states, actions):
    cur = states.astype(np.int64)
    nxt = cur + MOVES[np.asarray(actions, dtype=np.int64).reshape(-1)]
    blocked = spec.grid[nxt[:, 1], nxt[:, 0]]
    return np.where(blocked[:, None], cur, nxt)


def _continuous_step(spec, states, actions):
    cs, dt = spec.cell_size, spec.dt
    a = np.clip(actions, -1.0, 1.0)
    v = np.clip(states[:, 2:] + a * dt, -spec.v_max, spec.v_max)
    p = states[:, :2].copy()
    cell = spec.cells_of(p)
    for axis in (0, 1):
        target = p[:, axis] + v[:, axis] * dt
        probe = cell.copy()
        probe[:, axis] = 1 + np.floor(target / cs).astype(np.int64)
        hit = spec.grid[probe[:, 1], probe[:, 0]]
        # clip to the face of the current cell and drop the blocked velocity
        lo = (cell[:, axis] - 1) * cs
        hi = cell[:, axis] * cs - _EDGE
        target = np.where(hit, np.where(v[:, axis] > 0, hi, lo), target)
        v[:, axis] = np.where(hit, 0.0, v[:, axis])
        p[:, axis] = target
        cell[:, axis] = np.where(hit, cell[:, axis], probe[:, axis])
    return np.concatenate([p, v], axis=1)


def reward(s, g, delta: float = DEFAULT_DELTA) -> int:
    if delta <= 0:
        raise ValueError("delta must be positive")
    return int(np.linalg.norm(phi(s) - np.asarray(g, dtype=float)) < delta)


def reached(states, goals, delta: float = DEFAULT_DELTA) -> np.ndarray:
    return np.linalg.norm(phi(states) - goals, axis=-1) < delta


def _bfs(spec: MazeSpec, src: tuple[int, int]) -> dict:
    dist = {src: 0}
    queue = deque([src])
    while queue:
        i, j = queue.popleft()
        for di, dj in MOVES[:4]:
            nb = (i + int(di), j + int(dj))
            if nb not in dist and spec.is_free(*nb):
                dist[nb] = dist[(i, j)] + 1
                queue.append(nb)
    return dist


def bfs_reachable(spec: MazeSpec, start, goal) -> tuple[bool, int | None]:
    """Reachability and hop count between the cells containing two goals."""
    a, b = spec.cell_of(start), spec.cell_of(goal)
    for c in (a, b):
        if not spec.is_free(*c):
            raise MazeError(f"cell {c} is a wall")
    d = _bfs(spec, a).get(b)
    return d is not None, d


def distance_matrix(spec: MazeSpec) -> np.ndarray:
    """All-pairs BFS hop counts over free cells, -1 where unreachable."""
    n = spec.n_free
    out = np.full((n, n), -1, dtype=np.int64)
    for c, k in spec._index.items():
        for other, d in _bfs(spec, c).items():
            out[k, spec.cell_index(other)] = d
    return out


def shortest_cell_path(spec: MazeSpec, start, goal) -> list[tuple[int, int]]:
    a, b = tuple(start), tuple(goal)
    prev = {a: None}
    queue = deque([a])
    while queue:
        c = queue.popleft()
        if c == b:
            break
        for di, dj in MOVES[:4]:
            nb = (c[0] + int(di), c[1] + int(dj))
            if nb not in prev and spec.is_free(*nb):
                prev[nb] = c
                queue.append(nb)
    if b not in prev:
        raise MazeError(f"no path from {a} to {b} in {spec.name!r}")
    path = [b]
    while path[-1] != a:
        path.append(prev[path[-1]])
    return path[::-1]


def diameter_path(spec: MazeSpec) -> list[tuple[int, int]]:
    """A longest shortest path, found by double BFS from the first free cell."""
    first = spec.free_cells[0]
    d0 = _bfs(spec, first)
    a = max(d0, key=lambda c: (d0[c], -c[1], -c[0]))
    d1 = _bfs(spec, a)
    b = max(d1, key=lambda c: (d1[c], -c[1], -c[0]))
    # orient so the path starts nearest the top-left corner
    if (b[1], b[0]) < (a[1], a[0]):
        a, b = b, a
    return shortest_cell_path(spec, a, b)
