"""Desk-scale sparse-reward pixel maze.

A 3x3 grid of 9x9-cell rooms joined by one-cell doorways (a seeded spanning
tree over the room graph), with the goal fixed in the corner room.  The agent
sees an egocentric top-down 11x11-cell window rendered to a grayscale square
frame; per-room texture patterns keep observations visually distinct across
rooms, walls render at a fixed intensity of 1.0 and the goal at 0.0.

Rewards are sparse: +1 exactly when the goal cell is reached, 0 otherwise.
Spawns come from the goal-distance field: the "very_sparse" setting starts at
the farthest walkable cell, "sparse" at a cell roughly half as far.

Actions: 0 = forward, 1 = turn left, 2 = turn right, 3 = no-op.  Forward
motion is applied ``action_repeat`` times per step (blocked by walls);
turning changes heading by one quadrant per step, since repeating a quarter
turn four times would be the identity.
"""

from __future__ import annotations

from dataclasses import dataclass
from collections import deque

import numpy as np

from .config import EnvConfig
from .errors import ConfigError, InvalidInputError, LifecycleError

HEADINGS = ("north", "east", "south", "west")
# (row, col) deltas per heading
_DELTAS = ((-1, 0), (0, 1), (1, 0), (0, -1))

ACTION_FORWARD = 0
ACTION_TURN_LEFT = 1
ACTION_TURN_RIGHT = 2
ACTION_NOOP = 3
NUM_ACTIONS = 4
ACTION_NAMES = ("forward", "turn_left", "turn_right", "no_op")

ROOM_GRID = 3
ROOM_SIZE = 9
VIEW_RADIUS = 5

WALL_INTENSITY = 1.0
GOAL_INTENSITY = 0.0
_JITTER_LEVELS = (-0.12, -0.06, 0.0, 0.06, 0.12)


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def _mix(*parts: int) -> int:
    h = 0x8000000000000000
    for p in parts:
        h = _splitmix64(h ^ (int(p) & 0xFFFFFFFFFFFFFFFF))
    return h


@dataclass(frozen=True)
class Pose:
    """Agent placement in map units: x = column, y = row, heading index."""

    x: float
    y: float
    heading: int

    @property
    def heading_name(self) -> str:
        return HEADINGS[self.heading]


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict


class MazeLayout:
    """Static map data derived deterministically from a layout seed."""

    def __init__(self, layout_seed: int):
        self.layout_seed = int(layout_seed)
        self.size = ROOM_GRID * (ROOM_SIZE + 1) + 1
        self.walls = np.ones((self.size, self.size), dtype=bool)
        for rr in range(ROOM_GRID):
            for rc in range(ROOM_GRID):
                r0 = 1 + rr * (ROOM_SIZE + 1)
                c0 = 1 + rc * (ROOM_SIZE + 1)
                self.walls[r0 : r0 + ROOM_SIZE, c0 : c0 + ROOM_SIZE] = False
        self._carve_doors()

        goal_room = (ROOM_GRID - 1, ROOM_GRID - 1)
        mid = 1 + ROOM_SIZE // 2
        self.goal = (
            goal_room[0] * (ROOM_SIZE + 1) + mid,
            goal_room[1] * (ROOM_SIZE + 1) + mid,
        )
        self.distance = self._bfs_from(self.goal)
        floor = ~self.walls
        if np.any((self.distance < 0) & floor):
            raise ConfigError(f"layout seed {layout_seed} produced unreachable floor cells")
        self.spawns = self._place_spawns()
        self.texture = self._build_texture()

    def _carve_doors(self) -> None:
        rng = np.random.Generator(np.random.PCG64(_mix(self.layout_seed, 0xD00D)))
        visited = {(0, 0)}
        stack = [(0, 0)]
        while stack:
            room = stack[-1]
            neighbors = [
                (room[0] + dr, room[1] + dc)
                for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1))
                if 0 <= room[0] + dr < ROOM_GRID and 0 <= room[1] + dc < ROOM_GRID
            ]
            fresh = [n for n in neighbors if n not in visited]
            if not fresh:
                stack.pop()
                continue
            nxt = fresh[rng.integers(len(fresh))]
            offset = int(rng.integers(ROOM_SIZE))
            if nxt[0] != room[0]:  # vertical neighbors share a horizontal wall
                wall_row = (max(room[0], nxt[0])) * (ROOM_SIZE + 1)
                col = 1 + room[1] * (ROOM_SIZE + 1) + offset
                self.walls[wall_row, col] = False
            else:
                wall_col = (max(room[1], nxt[1])) * (ROOM_SIZE + 1)
                row = 1 + room[0] * (ROOM_SIZE + 1) + offset
                self.walls[row, wall_col] = False
            visited.add(nxt)
            stack.append(nxt)

    def _bfs_from(self, start) -> np.ndarray:
        dist = np.full((self.size, self.size), -1, dtype=np.int32)
        dist[start] = 0
        queue = deque([start])
        while queue:
            r, c = queue.popleft()
            for dr, dc in _DELTAS:
                nr, nc = r + dr, c + dc
                if 0 <= nr < self.size and 0 <= nc < self.size:
                    if not self.walls[nr, nc] and dist[nr, nc] < 0:
                        dist[nr, nc] = dist[r, c] + 1
                        queue.append((nr, nc))
        return dist

    def _place_spawns(self) -> dict:
        floor = np.argwhere(~self.walls)
        dists = self.distance[tuple(floor.T)]
        far_idx = int(np.argmax(dists))  # argmax scans row-major: deterministic tie-break
        far_cell = tuple(int(v) for v in floor[far_idx])
        target = dists.max() / 2.0
        mid_idx = int(np.argmin(np.abs(dists - target)))
        mid_cell = tuple(int(v) for v in floor[mid_idx])
        if self.distance[mid_cell] >= self.distance[far_cell]:
            raise ConfigError(
                f"layout seed {self.layout_seed}: sparse spawn is not strictly closer than very_sparse"
            )
        return {"sparse": mid_cell, "very_sparse": far_cell}

    def room_of(self, r: int, c: int) -> int:
        rr = min(ROOM_GRID - 1, max(0, (r - 1) // (ROOM_SIZE + 1)))
        rc = min(ROOM_GRID - 1, max(0, (c - 1) // (ROOM_SIZE + 1)))
        return rr * ROOM_GRID + rc

    def _build_texture(self) -> np.ndarray:
        tex = np.full((self.size, self.size), WALL_INTENSITY, dtype=np.float32)
        n_rooms = ROOM_GRID * ROOM_GRID
        for r in range(self.size):
            for c in range(self.size):
                if self.walls[r, c]:
                    continue
                room = self.room_of(r, c)
                base = 0.25 + 0.5 * room / (n_rooms - 1)
                jitter = _JITTER_LEVELS[_mix(self.layout_seed, r, c) % len(_JITTER_LEVELS)]
                tex[r, c] = float(np.clip(base + jitter, 0.13, 0.87))
        tex[self.goal] = GOAL_INTENSITY
        return tex

    def spawn_distance(self, setting: str) -> int:
        return int(self.distance[self.spawns[setting]])


class MazeEnv:
    """Sparse-reward maze with egocentric grayscale rendering."""

    num_actions = NUM_ACTIONS

    def __init__(self, config: EnvConfig):
        config.validate()
        self.config = config
        self.layout = MazeLayout(config.layout_seed)
        size = config.render_size
        self._pix_index = (np.arange(size) * (2 * VIEW_RADIUS + 1)) // size
        self._padded = np.pad(
            self.layout.texture, VIEW_RADIUS, mode="constant", constant_values=WALL_INTENSITY
        )
        self._cache: dict = {}
        self._pose: Pose | None = None
        self._done = True
        self._steps = 0

    def render_pose(self, pose: Pose) -> np.ndarray:
        """Deterministic egocentric view; pure function of pose and layout."""
        r, c, h = int(pose.y), int(pose.x), int(pose.heading)
        if not (0 <= r < self.layout.size and 0 <= c < self.layout.size):
            raise InvalidInputError(f"pose ({pose.x}, {pose.y}) lies outside the map")
        if not 0 <= h < len(HEADINGS):
            raise InvalidInputError(f"heading index must be in [0, 4), got {pose.heading}")
        key = (r, c, h)
        frame = self._cache.get(key)
        if frame is None:
            window = self._padded[r : r + 2 * VIEW_RADIUS + 1, c : c + 2 * VIEW_RADIUS + 1]
            rotated = np.rot90(window, k=h)
            frame = np.ascontiguousarray(
                rotated[np.ix_(self._pix_index, self._pix_index)], dtype=np.float32
            )
            frame.setflags(write=False)
            self._cache[key] = frame
        return frame

    def reset(self, seed: int = 0) -> StepResult:
        spawn = self.layout.spawns[self.config.spawn_setting]
        heading = _mix(self.config.layout_seed, seed, 0xFACE) % len(HEADINGS)
        self._pose = Pose(x=float(spawn[1]), y=float(spawn[0]), heading=int(heading))
        self._done = False
        self._steps = 0
        return StepResult(
            observation=self.render_pose(self._pose),
            reward=0.0,
            done=False,
            info={"pose": self._pose, "episode_step": 0},
        )

    @property
    def pose(self) -> Pose:
        if self._pose is None:
            raise LifecycleError("environment has not been reset")
        return self._pose

    def step(self, action: int) -> StepResult:
        if self._pose is None or self._done:
            raise LifecycleError("step called on a finished episode; call reset first")
        if not isinstance(action, (int, np.integer)) or not 0 <= int(action) < NUM_ACTIONS:
            raise InvalidInputError(f"action must be an integer in [0, {NUM_ACTIONS}), got {action!r}")
        action = int(action)
        r, c, h = int(self._pose.y), int(self._pose.x), self._pose.heading
        reward = 0.0
        done = False
        if action == ACTION_FORWARD:
            dr, dc = _DELTAS[h]
            for _ in range(self.config.action_repeat):
                nr, nc = r + dr, c + dc
                if self.layout.walls[nr, nc]:
                    break
                r, c = nr, nc
                if (r, c) == self.layout.goal:
                    reward = 1.0
                    done = True
                    break
        elif action == ACTION_TURN_LEFT:
            h = (h - 1) % 4
        elif action == ACTION_TURN_RIGHT:
            h = (h + 1) % 4
        self._steps += 1
        if not done and self._steps >= self.config.max_episode_steps:
            done = True
        self._pose = Pose(x=float(c), y=float(r), heading=h)
        self._done = done
        return StepResult(
            observation=self.render_pose(self._pose),
            reward=reward,
            done=done,
            info={"pose": self._pose, "episode_step": self._steps},
        )
