"""Desk-scale continuous navigation tasks.

``PointMaze``: a ball pushed by bounded forces through a grid maze, sparse 0/1
reward at one of two hidden goals. ``PointMass``: the same dynamics in an
open arena with a dense distance penalty, used as a fast smoke test.

Coordinates are ``(x, y)`` in cell units: ``x`` runs along columns, ``y``
along rows, with row 0 at the top of the layout file.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

DEFAULT_LAYOUT = "medium_maze.txt"
_WALL_MARGIN = 1e-6


@dataclass(frozen=True)
class Dynamics:
    dt: float = 0.1
    f_max: float = 1.0
    v_max: float = 1.0
    friction: float = 0.1


@dataclass(frozen=True, eq=False)
class MazeSpec:
    walls: np.ndarray
    start: tuple
    goals: tuple
    goal_radius: float = 0.45
    cell_size: float = 1.0
    max_steps: int = 300
    start_jitter: float = 0.0
    dynamics: Dynamics = field(default_factory=Dynamics)

    def __post_init__(self):
        walls = np.asarray(self.walls, dtype=bool)
        object.__setattr__(self, "walls", walls)
        object.__setattr__(self, "start", tuple(int(v) for v in self.start))
        object.__setattr__(self, "goals", tuple(tuple(int(v) for v in g) for g in self.goals))
        if walls.ndim != 2:
            raise ValueError("wall grid must be 2-d")
        if not self.goals:
            raise ValueError("maze needs at least one goal")
        for cell in (self.start, *self.goals):
            if not self.is_free_cell(*cell):
                raise ValueError(f"cell {cell} is not free")
        reachable = self.reachable_cells(self.start)
        for g in self.goals:
            if g not in reachable:
                raise ValueError(f"goal {g} is not reachable from start {self.start}")
        if not 0.0 <= self.start_jitter < 0.5:
            raise ValueError("start_jitter must lie in [0, 0.5) cells")

    @property
    def shape(self):
        return self.walls.shape

    @property
    def extent(self):
        rows, cols = self.walls.shape
        return cols * self.cell_size, rows * self.cell_size

    def is_free_cell(self, row, col) -> bool:
        rows, cols = self.walls.shape
        return 0 <= row < rows and 0 <= col < cols and not self.walls[row, col]

    def cell_of(self, position):
        x, y = position
        return int(math.floor(y / self.cell_size)), int(math.floor(x / self.cell_size))

    def is_free_position(self, position) -> bool:
        return self.is_free_cell(*self.cell_of(position))

    def cell_center(self, cell):
        row, col = cell
        return np.array([(col + 0.5) * self.cell_size, (row + 0.5) * self.cell_size])

    def reachable_cells(self, source):
        seen = {tuple(source)}
        queue = deque([tuple(source)])
        while queue:
            r, c = queue.popleft()
            for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                if (nr, nc) not in seen and self.is_free_cell(nr, nc):
                    seen.add((nr, nc))
                    queue.append((nr, nc))
        return seen

    def shortest_path(self, source, target):
        """Cell path (inclusive) by breadth-first search over free cells."""
        source, target = tuple(source), tuple(target)
        parent = {source: None}
        queue = deque([source])
        while queue:
            cell = queue.popleft()
            if cell == target:
                break
            r, c = cell
            for nxt in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                if nxt not in parent and self.is_free_cell(*nxt):
                    parent[nxt] = cell
                    queue.append(nxt)
        if target not in parent:
            raise ValueError(f"no path from {source} to {target}")
        path = [target]
        while parent[path[-1]] is not None:
            path.append(parent[path[-1]])
        return path[::-1]

    @classmethod
    def from_text(cls, text, **kw) -> "MazeSpec":
        """Parse ``#`` wall, ``.`` free, ``S`` start (one), ``G`` goal (one or more)."""
        lines = [ln.rstrip("\n") for ln in text.splitlines() if ln.strip()]
        if not lines or len({len(ln) for ln in lines}) != 1:
            raise ValueError("maze layout must be a non-empty rectangle")
        walls = np.zeros((len(lines), len(lines[0])), dtype=bool)
        start, goals = None, []
        for r, line in enumerate(lines):
            for c, ch in enumerate(line):
                if ch == "#":
                    walls[r, c] = True
                elif ch == "S":
                    if start is not None:
                        raise ValueError("layout has more than one start cell")
                    start = (r, c)
                elif ch == "G":
                    goals.append((r, c))
                elif ch != ".":
                    raise ValueError(f"unknown layout character {ch!r} at row {r}, col {c}")
        if start is None:
            raise ValueError("layout has no start cell 'S'")
        # top-right goal first, then bottom-left
        goals.sort(key=lambda g: (g[0], -g[1]))
        return cls(walls, start, tuple(goals), **kw)

    @classmethod
    def load(cls, path, **kw) -> "MazeSpec":
        return cls.from_text(Path(path).read_text(), **kw)

    @classmethod
    def default(cls, **kw) -> "MazeSpec":
        text = resources.files("wbsac").joinpath("data", DEFAULT_LAYOUT).read_text()
        return cls.from_text(text, **kw)


@dataclass(frozen=True, eq=False)
class EnvState:
    position: np.ndarray
    velocity: np.ndarray
    steps_elapsed: int = 0
    # index into spec.goals; never part of the observation
    goal: int = 0


def _integrate(velocity, action, dyn: Dynamics):
    ax = min(1.0, max(-1.0, float(action[0])))
    ay = min(1.0, max(-1.0, float(action[1])))
    keep = 1.0 - dyn.friction
    vx = velocity[0] * keep + ax * dyn.f_max * dyn.dt
    vy = velocity[1] * keep + ay * dyn.f_max * dyn.dt
    speed = math.hypot(vx, vy)
    if speed > dyn.v_max:
        scale = dyn.v_max / speed
        vx *= scale
        vy *= scale
    return vx, vy


def _move_axis(spec: MazeSpec, x, y, dx, axis):
    """Move along one axis; stop at the face of a wall cell (slide along walls)."""
    cs = spec.cell_size
    if axis == 0:
        nx = x + dx
        if spec.is_free_position((nx, y)):
            return nx, False
        col = math.floor(x / cs)
        nx = (col + 1) * cs - _WALL_MARGIN * cs if dx > 0 else col * cs + _WALL_MARGIN * cs
        return nx, True
    ny = y + dx
    if spec.is_free_position((x, ny)):
        return ny, False
    row = math.floor(y / cs)
    ny = (row + 1) * cs - _WALL_MARGIN * cs if dx > 0 else row * cs + _WALL_MARGIN * cs
    return ny, True


def maze_reset(spec: MazeSpec, rng: np.random.Generator) -> EnvState:
    goal = int(rng.integers(len(spec.goals)))
    pos = spec.cell_center(spec.start)
    if spec.start_jitter > 0:
        pos = pos + rng.uniform(-spec.start_jitter, spec.start_jitter, size=2) * spec.cell_size
    return EnvState(pos, np.zeros(2), 0, goal)


def maze_step(state: EnvState, action, spec: MazeSpec):
    """Advance one step. Returns ``(next_state, reward, terminated, truncated)``."""
    dyn = spec.dynamics
    vx, vy = _integrate(state.velocity, action, dyn)
    x, y = float(state.position[0]), float(state.position[1])
    x, hit = _move_axis(spec, x, y, vx * dyn.dt, 0)
    if hit:
        vx = 0.0
    y, hit = _move_axis(spec, x, y, vy * dyn.dt, 1)
    if hit:
        vy = 0.0
    pos = np.array([x, y])
    steps = state.steps_elapsed + 1
    goal = spec.cell_center(spec.goals[state.goal])
    reached = math.hypot(x - goal[0], y - goal[1]) <= spec.goal_radius * spec.cell_size
    reward = 1.0 if reached else 0.0
    truncated = not reached and steps >= spec.max_steps
    return EnvState(pos, np.array([vx, vy]), steps, state.goal), reward, reached, truncated


def maze_observation(state: EnvState, spec: MazeSpec) -> np.ndarray:
    width, height = spec.extent
    v = spec.dynamics.v_max
    return np.array([
        2.0 * state.position[0] / width - 1.0,
        2.0 * state.position[1] / height - 1.0,
        state.velocity[0] / v,
        state.velocity[1] / v,
    ])


# ---------------------------------------------------------------- open-arena smoke env

@dataclass(frozen=True)
class PointMassSpec:
    half_width: float = 1.0
    start: tuple = (-0.5, -0.5)
    goal: tuple = (0.5, 0.5)
    goal_radius: float = 0.1
    max_steps: int = 100
    dynamics: Dynamics = field(default_factory=Dynamics)


def point_mass_reset(spec: PointMassSpec) -> EnvState:
    return EnvState(np.array(spec.start, dtype=float), np.zeros(2), 0, 0)


def point_mass_step(state: EnvState, action, spec: PointMassSpec = PointMassSpec()):
    dyn = spec.dynamics
    vx, vy = _integrate(state.velocity, action, dyn)
    L = spec.half_width
    x = state.position[0] + vx * dyn.dt
    y = state.position[1] + vy * dyn.dt
    if not -L <= x <= L:
        x, vx = min(L, max(-L, x)), 0.0
    if not -L <= y <= L:
        y, vy = min(L, max(-L, y)), 0.0
    dist = math.hypot(x - spec.goal[0], y - spec.goal[1])
    reward = -dist * dyn.dt
    steps = state.steps_elapsed + 1
    terminated = dist <= spec.goal_radius
    truncated = not terminated and steps >= spec.max_steps
    return EnvState(np.array([x, y]), np.array([vx, vy]), steps, 0), reward, terminated, truncated


def point_mass_observation(state: EnvState, spec: PointMassSpec) -> np.ndarray:
    v = spec.dynamics.v_max
    return np.array([state.position[0] / spec.half_width, state.position[1] / spec.half_width,
                     state.velocity[0] / v, state.velocity[1] / v])


def straight_line_oracle_return(spec: PointMassSpec = PointMassSpec()) -> float:
    """Return of full thrust straight at the goal from the fixed start.

    Along the start-goal direction ``u`` the largest available force component
    is ``f_max * ||u||_1`` (the action ``sign(u)``). For axis-aligned or
    diagonal ``u`` that force is parallel to ``u``, so the rollout stays on the
    line and reduces to a scalar recurrence. No policy gets closer to the goal
    at any step, hence this return bounds every policy's return.
    """
    dyn = spec.dynamics
    ux, uy = spec.goal[0] - spec.start[0], spec.goal[1] - spec.start[1]
    if not (ux == 0 or uy == 0 or abs(ux) == abs(uy)):
        raise ValueError("oracle needs an axis-aligned or diagonal start-goal line")
    dist = math.hypot(ux, uy)
    ux, uy = ux / dist, uy / dist
    thrust = dyn.f_max * (abs(ux) + abs(uy))
    v, progress, total = 0.0, 0.0, 0.0
    for _ in range(spec.max_steps):
        v = min(v * (1.0 - dyn.friction) + thrust * dyn.dt, dyn.v_max)
        progress += v * dyn.dt
        remaining = abs(dist - progress)
        total -= remaining * dyn.dt
        if remaining <= spec.goal_radius:
            break
    return total


# ---------------------------------------------------------------- gym-style wrappers

class PointMazeEnv:
    obs_dim = 4
    act_dim = 2

    def __init__(self, spec: MazeSpec | None = None, seed=None):
        self.spec = spec or MazeSpec.default()
        self.rng = np.random.default_rng(seed)
        self.state = None

    def reset(self):
        self.state = maze_reset(self.spec, self.rng)
        return maze_observation(self.state, self.spec)

    def step(self, action):
        self.state, r, term, trunc = maze_step(self.state, action, self.spec)
        return maze_observation(self.state, self.spec), r, term, trunc

    @property
    def position(self):
        return self.state.position


class PointMassEnv:
    obs_dim = 4
    act_dim = 2

    def __init__(self, spec: PointMassSpec | None = None, seed=None):
        self.spec = spec or PointMassSpec()
        self.state = None

    def reset(self):
        self.state = point_mass_reset(self.spec)
        return point_mass_observation(self.state, self.spec)

    def step(self, action):
        self.state, r, term, trunc = point_mass_step(self.state, action, self.spec)
        return point_mass_observation(self.state, self.spec), r, term, trunc

    @property
    def position(self):
        return self.state.position


# ---------------------------------------------------------------- scripted oracle

def waypoint_policy(spec: MazeSpec, goal_index: int, gain=4.0):
    """Scripted controller following the BFS cell path to a goal.

    Steers toward the next waypoint cell center with a velocity-damped
    proportional law; advances once within 0.3 cells of the waypoint.
    """
    path = [spec.cell_center(c) for c in spec.shortest_path(spec.start, spec.goals[goal_index])]
    state = {"i": 1}

    def act(env_state: EnvState):
        pos, vel = env_state.position, env_state.velocity
        i = state["i"]
        while i < len(path) - 1 and np.linalg.norm(path[i] - pos) < 0.3 * spec.cell_size:
            i += 1
        state["i"] = i
        desired = gain * (path[i] - pos) - 2.0 * vel
        return np.clip(desired, -1.0, 1.0)

    return act


def run_waypoint_oracle(spec: MazeSpec, goal_index: int):
    """Roll out the scripted controller; returns ``(reached, steps, positions)``."""
    state = replace(maze_reset(spec, np.random.default_rng(0)), goal=goal_index,
                    position=spec.cell_center(spec.start))
    policy = waypoint_policy(spec, goal_index)
    positions = [state.position]
    for _ in range(spec.max_steps):
        state, reward, term, trunc = maze_step(state, policy(state), spec)
        positions.append(state.position)
        if term:
            return True, state.steps_elapsed, np.array(positions)
        if trunc:
            break
    return False, state.steps_elapsed, np.array(positions)


# ---------------------------------------------------------------- coverage

class CoverageGrid:
    """Visit counts over the free cells of a maze."""

    def __init__(self, spec: MazeSpec):
        self.spec = spec
        self.counts = np.zeros(spec.shape, dtype=np.int64)
        self.free_cells = int((~spec.walls).sum())
        self.visited_cells = 0

    def visit(self, position):
        row, col = self.spec.cell_of(position)
        if not self.spec.is_free_cell(row, col):
            raise ValueError(f"position {tuple(position)} is outside the free space (cell {(row, col)})")
        if self.counts[row, col] == 0:
            self.visited_cells += 1
        self.counts[row, col] += 1
        return self

    @property
    def fraction(self) -> float:
        return self.visited_cells / self.free_cells


def coverage_update(grid: CoverageGrid, position) -> CoverageGrid:
    return grid.visit(position)


def heatmap_export(grid: CoverageGrid, path, pixels_per_cell=16):
    """Write ``<path>.csv`` (counts, row-major, dims header) and ``<path>.png``.

    Image: white for unvisited, black for the most-visited cell, walls mid-grey.
    Returns the two written paths.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    csv_path, png_path = path.with_suffix(".csv"), path.with_suffix(".png")
    rows, cols = grid.counts.shape
    try:
        with open(csv_path, "w", newline="") as fh:
            fh.write(f"# rows={rows} cols={cols}\n")
            csv.writer(fh, lineterminator="\n").writerows(grid.counts.tolist())
        img = heatmap_pixels(grid)
        img = np.kron(img, np.ones((pixels_per_cell, pixels_per_cell), dtype=np.uint8))
        plt.imsave(png_path, img, cmap="gray", vmin=0, vmax=255, metadata={"Software": None})
    except OSError as exc:
        raise OSError(f"failed to write heatmap to {path}: {exc}") from exc
    return csv_path, png_path


def heatmap_pixels(grid: CoverageGrid) -> np.ndarray:
    counts = grid.counts.astype(float)
    peak = counts.max()
    shade = np.full(counts.shape, 255.0)
    if peak > 0:
        shade = 255.0 * (1.0 - counts / peak)
    shade[grid.spec.walls] = 128.0
    return np.rint(shade).astype(np.uint8)


def read_heatmap_csv(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().strip()
        dims = dict(kv.split("=") for kv in header.lstrip("# ").split())
        counts = np.array([[int(v) for v in row] for row in csv.reader(fh)], dtype=np.int64)
    counts = counts.reshape(int(dims["rows"]), int(dims["cols"]))
    return counts


ENV_IDS = ("point_maze", "point_mass")


def make_env(env_id, seed=None, maze_path=None, start_jitter=0.0):
    if env_id == "point_maze":
        spec = (MazeSpec.load(maze_path, start_jitter=start_jitter) if maze_path
                else MazeSpec.default(start_jitter=start_jitter))
        return PointMazeEnv(spec, seed)
    if env_id == "point_mass":
        return PointMassEnv(PointMassSpec(), seed)
    raise KeyError(f"unknown env id {env_id!r}; expected one of {ENV_IDS}")
