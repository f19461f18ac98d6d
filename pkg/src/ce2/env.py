"""Deterministic maze environments.

Two flavours share one :class:`EnvSpec`:

* ``grid``  - discrete cells, states are integer cell coordinates ``(x, y)``,
  four moves, blocked moves leave the agent in place.
* ``point`` - continuous ``[0, W) x [0, H)`` plane, states are positions,
  actions are 2-D velocity commands clipped to the unit box and scaled by
  ``step_scale``; motion is clipped at wall faces.

``y`` grows upwards; layouts are written top row first.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

# up, right, down, left
GRID_ACTIONS = np.array([[0, 1], [1, 0], [0, -1], [-1, 0]], dtype=float)
_DIAG = 1.0
POINT_ACTIONS = np.array(
    [[0, 1], [1, 0], [0, -1], [-1, 0],
     [_DIAG, _DIAG], [_DIAG, -_DIAG], [-_DIAG, -_DIAG], [-_DIAG, _DIAG]],
    dtype=float,
)
_EDGE_EPS = 1e-6

FOUR_ROOMS = """\
....#.....
....#.....
..........
....#.....
##.###.###
....#.....
....#.....
..........
....#.....
S...#.....
"""


class EpisodeExhausted(RuntimeError):
    pass


class EmptyGoalDistribution(ValueError):
    pass


class OutOfBounds(ValueError):
    pass


@dataclass
class StepResult:
    next_state: np.ndarray
    reached: bool


@dataclass
class EnvSpec:
    name: str
    kind: str  # "grid" | "point"
    free: np.ndarray  # bool [height, width], row 0 is y = 0
    start: np.ndarray
    max_episode_len: int
    success_radius: float
    goal_distribution: list[np.ndarray] = field(default_factory=list)
    step_scale: float = 0.3

    def __post_init__(self):
        self.free = np.asarray(self.free, dtype=bool)
        self.start = np.asarray(self.start, dtype=float)
        if self.success_radius <= 0:
            raise ValueError("success_radius must be positive")
        if self.max_episode_len < 2:
            raise ValueError("max_episode_len must be >= 2")
        if self.kind not in ("grid", "point"):
            raise ValueError(f"unknown env kind {self.kind!r}")
        if not self.is_free(self.cell_of(self.start)):
            raise ValueError("start cell is a wall")
        self.goal_distribution = [np.asarray(g, dtype=float) for g in self.goal_distribution]

    @property
    def height(self) -> int:
        return self.free.shape[0]

    @property
    def width(self) -> int:
        return self.free.shape[1]

    @property
    def state_dim(self) -> int:
        return 2

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    @property
    def actions(self) -> np.ndarray:
        return GRID_ACTIONS if self.kind == "grid" else POINT_ACTIONS

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def low(self) -> np.ndarray:
        return np.zeros(2)

    @property
    def high(self) -> np.ndarray:
        """Upper corner of the valid state box (inclusive for grid)."""
        if self.kind == "grid":
            return np.array([self.width - 1, self.height - 1], dtype=float)
        return np.array([self.width - _EDGE_EPS, self.height - _EDGE_EPS])

    def clip(self, states: np.ndarray) -> np.ndarray:
        return np.clip(states, self.low, self.high)

    def is_free(self, cell: tuple[int, int]) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height and bool(self.free[y, x])

    def cell_of(self, state: Sequence[float]) -> tuple[int, int]:
        s = np.asarray(state, dtype=float)
        if self.kind == "grid":
            c = np.floor(s + 0.5)
        else:
            c = np.floor(s)
        return int(c[0]), int(c[1])

    def cell_ids(self, states: np.ndarray) -> np.ndarray:
        """Flat cell ids (``y * width + x``) for an ``(n, 2)`` array, clipped into the grid."""
        s = np.asarray(states, dtype=float).reshape(-1, 2)
        c = np.floor(s + 0.5) if self.kind == "grid" else np.floor(s)
        x = np.clip(c[:, 0], 0, self.width - 1).astype(np.int64)
        y = np.clip(c[:, 1], 0, self.height - 1).astype(np.int64)
        return y * self.width + x

    def cell_centers(self, ids: np.ndarray | None = None) -> np.ndarray:
        if ids is None:
            ids = np.arange(self.n_cells)
        ids = np.asarray(ids)
        x = ids % self.width
        y = ids // self.width
        off = 0.0 if self.kind == "grid" else 0.5
        return np.stack([x + off, y + off], axis=-1).astype(float)

    def free_ids(self) -> np.ndarray:
        return np.flatnonzero(self.free.reshape(-1))

    def snap_goal(self, goal: np.ndarray) -> np.ndarray:
        """Map a decoded state onto the goal space: grid goals land on cell centers."""
        g = self.clip(np.asarray(goal, dtype=float))
        if self.kind == "grid":
            g = np.floor(g + 0.5)
        return g


def parse_layout(text: str) -> tuple[np.ndarray, tuple[int, int] | None, list[tuple[int, int]]]:
    """Parse a text map ('#' wall, '.' free, 'S' start, 'G' env goal)."""
    rows = [r.rstrip("\n") for r in text.strip("\n").splitlines() if r.strip()]
    if not rows:
        raise ValueError("empty layout")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError("layout rows have unequal length")
    height = len(rows)
    free = np.zeros((height, width), dtype=bool)
    start = None
    goals = []
    for r, row in enumerate(rows):
        y = height - 1 - r
        for x, ch in enumerate(row):
            if ch not in "#.SG":
                raise ValueError(f"bad layout character {ch!r} at row {r}")
            free[y, x] = ch != "#"
            if ch == "S":
                start = (x, y)
            elif ch == "G":
                goals.append((x, y))
    return free, start, goals


def load_layout(path: str | Path):
    return parse_layout(Path(path).read_text())


def farthest_free_cell(free: np.ndarray, start: tuple[int, int]) -> tuple[int, int]:
    """BFS-farthest free cell from ``start`` (ties: highest y, then highest x)."""
    from .distance import bfs_all

    dist = bfs_all(free, start)
    best = None
    for y in range(free.shape[0]):
        for x in range(free.shape[1]):
            d = dist[y, x]
            if d < 0:
                continue
            key = (d, y, x)
            if best is None or key > best:
                best = key
    return best[2], best[1]


def make_spec(
    name: str,
    *,
    layout: str | None = None,
    size: int = 10,
    max_episode_len: int | None = None,
    success_radius: float | None = None,
    step_scale: float = 0.3,
    goals: list | None = None,
) -> EnvSpec:
    """Build an :class:`EnvSpec` for one of the built-in environments.

    ``name`` is ``grid_open``, ``grid_four_rooms``, ``grid`` (needs ``layout``),
    ``point_maze`` or ``point_open``.
    """
    if name == "grid_open":
        text = "\n".join("." * size for _ in range(size))
    elif name in ("grid_four_rooms", "point_maze"):
        text = layout or FOUR_ROOMS
    elif name == "point_open":
        text = "\n".join("." * size for _ in range(size))
    elif name == "grid":
        if layout is None:
            raise ValueError("grid env needs a layout")
        text = layout
    else:
        raise ValueError(f"unknown environment {name!r}")
    if layout is not None:
        text = layout
    free, start, marked = parse_layout(text)
    start = start or (0, 0)
    kind = "point" if name.startswith("point") else "grid"
    off = 0.5 if kind == "point" else 0.0
    if goals is None:
        cells = marked or [farthest_free_cell(free, start)]
        goals = [(x + off, y + off) for x, y in cells]
    return EnvSpec(
        name=name,
        kind=kind,
        free=free,
        start=np.array([start[0] + off, start[1] + off]),
        max_episode_len=max_episode_len or 50,
        success_radius=success_radius or (0.5 if kind == "grid" else 0.15),
        goal_distribution=[np.asarray(g, dtype=float) for g in goals],
        step_scale=step_scale,
    )


class MazeEnv:
    """Single-owner mutable maze episode."""

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self.state = spec.start.copy()
        self.t = 0
        self.goal: np.ndarray | None = None

    def reset(self, seed: int | None = None, goal: np.ndarray | None = None) -> np.ndarray:
        # dynamics are deterministic; the seed is accepted for interface symmetry
        self.state = self.spec.start.copy()
        self.t = 0
        self.goal = None if goal is None else np.asarray(goal, dtype=float)
        return self.state.copy()

    def step(self, action) -> StepResult:
        if self.t >= self.spec.max_episode_len:
            raise EpisodeExhausted(f"episode already ran {self.t} steps")
        self.state = transition(self.spec, self.state, action)
        self.t += 1
        reached = self.goal is not None and success(self.state, self.goal, self.spec)
        return StepResult(self.state.copy(), bool(reached))


def _action_vector(spec: EnvSpec, action) -> np.ndarray:
    a = np.asarray(action)
    if a.ndim == 0:
        idx = int(a)
        if not 0 <= idx < spec.n_actions:
            raise ValueError(f"action index {idx} out of range")
        return spec.actions[idx]
    if spec.kind == "grid":
        raise ValueError("grid actions are discrete indices")
    return np.clip(a.astype(float), -1.0, 1.0)


def transition(spec: EnvSpec, state: np.ndarray, action) -> np.ndarray:
    """True transition function T(s' | s, a) (deterministic)."""
    vec = _action_vector(spec, action)
    s = np.asarray(state, dtype=float)
    if spec.kind == "grid":
        cell = spec.cell_of(s)
        nxt = (cell[0] + int(vec[0]), cell[1] + int(vec[1]))
        if spec.is_free(nxt):
            return np.array(nxt, dtype=float)
        return np.array(cell, dtype=float)
    x, y = float(s[0]), float(s[1])
    delta = vec * spec.step_scale
    x = _slide(spec, x, y, delta[0], axis=0)
    y = _slide(spec, x, y, delta[1], axis=1)
    return np.array([x, y])


def _slide(spec: EnvSpec, x: float, y: float, d: float, axis: int) -> float:
    cur = x if axis == 0 else y
    new = cur + d
    cell = int(np.floor(cur))
    new_cell = int(np.floor(new))
    if new_cell == cell:
        return new
    probe = (new_cell, int(np.floor(y))) if axis == 0 else (int(np.floor(x)), new_cell)
    if spec.is_free(probe):
        return new
    return cell + 1 - _EDGE_EPS if d > 0 else float(cell)


def success(state, goal, spec: EnvSpec) -> bool:
    s = np.asarray(state, dtype=float)
    g = np.asarray(goal, dtype=float)
    if s.shape != g.shape:
        raise ValueError(f"state/goal dimension mismatch: {s.shape} vs {g.shape}")
    return bool(np.linalg.norm(s[:2] - g[:2]) < spec.success_radius)


def sample_env_goal(spec: EnvSpec, rng: np.random.Generator) -> np.ndarray:
    if not spec.goal_distribution:
        raise EmptyGoalDistribution("environment goal distribution is empty")
    return spec.goal_distribution[int(rng.integers(len(spec.goal_distribution)))].copy()


def discretize(state, spec: EnvSpec) -> tuple[int, int]:
    s = np.asarray(state, dtype=float)
    lo = spec.low - (0.5 if spec.kind == "grid" else 0.0)
    hi = np.array([spec.width, spec.height], dtype=float) - (0.5 if spec.kind == "grid" else 0.0)
    if np.any(s[:2] < lo) or np.any(s[:2] >= hi):
        raise OutOfBounds(f"state {s.tolist()} outside maze")
    return spec.cell_of(s)
