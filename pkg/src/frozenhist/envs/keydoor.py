"""Key-and-door memory task with an egocentric 7x7 view.

A rectangular room is split by a wall near the right edge; a locked door is
the only way through.  A key lies somewhere in the left part, the target
object sits in the strip behind the door.  The agent must pick up the key
(adjacent cell + ``pickup``), open the door (``toggle`` while adjacent,
key in hand), walk through, and pick up the object.  Since the view is a
local crop and carrying the key is not shown anywhere, solving reliably
requires remembering the pickup.

Success pays 1 - 0.9 * steps / max_steps; running out of time pays 0.
Bumping walls or toggling without the key does nothing.
"""

from __future__ import annotations

import numpy as np

from ..rng import Rng, split_seed
from .common import CODES, MOVES, EnvStep, render_grid

VIEW_RADIUS = 3  # 7x7 crop

WALL = CODES["wall"]
FREE = CODES["empty"]

ACT_PICKUP = 4
ACT_TOGGLE = 5


class KeyDoorTask:
    n_actions = 6
    obs_shape = (2 * VIEW_RADIUS + 1, 2 * VIEW_RADIUS + 1)

    def __init__(self, seed: int, height: int = 5, width: int | None = None):
        self._rng = Rng(split_seed(seed, "keytask"))
        self._fixed_width = width
        self.height = height
        self._done = True

    def reset(self) -> np.ndarray:
        rng = self._rng
        h = self.height
        w = self._fixed_width or rng.integers(9, 14)
        grid = np.full((h, w), WALL, dtype=np.int64)
        grid[1 : h - 1, 1 : w - 1] = FREE
        divider = w - 3
        grid[1 : h - 1, divider] = WALL
        door_row = rng.integers(1, h - 1)
        self.door = (door_row, divider)
        grid[self.door] = CODES["door_locked"]
        left_cells = [(r, c) for r in range(1, h - 1) for c in range(1, divider)]
        key_idx = rng.integers(0, len(left_cells))
        self.key = left_cells[key_idx]
        spawn = self.key
        while spawn == self.key:
            spawn = left_cells[rng.integers(0, len(left_cells))]
        self.obj = (rng.integers(1, h - 1), w - 2)
        grid[self.key] = CODES["key"]
        grid[self.obj] = CODES["object"]
        self.grid = grid
        self.width = w
        self.agent = spawn
        self.carrying = False
        self.door_open = False
        self.steps = 0
        self.max_steps = 8 * h * w
        self._done = False
        r = VIEW_RADIUS
        self._padded = np.full((h + 2 * r, w + 2 * r), WALL, dtype=np.int64)
        self._padded[r : r + h, r : r + w] = grid
        return self._observe()

    def _set_cell(self, pos: tuple[int, int], code: int) -> None:
        self.grid[pos] = code
        self._padded[pos[0] + VIEW_RADIUS, pos[1] + VIEW_RADIUS] = code

    def _observe(self) -> np.ndarray:
        r, c = self.agent
        k = 2 * VIEW_RADIUS + 1
        return self._padded[r : r + k, c : c + k].copy()

    def _adjacent(self, pos: tuple[int, int]) -> bool:
        return abs(self.agent[0] - pos[0]) + abs(self.agent[1] - pos[1]) == 1

    def step(self, action: int) -> EnvStep:
        if self._done:
            raise RuntimeError("step called after the episode ended; reset first")
        self.steps += 1
        reward = 0.0
        done = False
        success = False
        if action < 4:
            dr, dc = MOVES[action]
            r, c = self.agent[0] + dr, self.agent[1] + dc
            cell = self.grid[r, c] if (0 <= r < self.height and 0 <= c < self.width) else WALL
            if cell in (FREE, CODES["door_open"]):
                self.agent = (r, c)
        elif action == ACT_PICKUP:
            if not self.carrying and self._adjacent(self.key) and self.grid[self.key] == CODES["key"]:
                self.carrying = True
                self._set_cell(self.key, FREE)
            elif self._adjacent(self.obj) and self.grid[self.obj] == CODES["object"]:
                success = True
                done = True
                reward = 1.0 - 0.9 * self.steps / self.max_steps
        elif action == ACT_TOGGLE:
            if self.carrying and self._adjacent(self.door) and not self.door_open:
                self.door_open = True
                self._set_cell(self.door, CODES["door_open"])
        else:
            raise ValueError(f"unknown action {action}")
        if not done and self.steps >= self.max_steps:
            done = True
        if done:
            self._done = True
            return EnvStep(self._observe(), reward, True,
                           {"length": self.steps, "success": success})
        return EnvStep(self._observe(), reward, False, {})

    def render(self) -> str:
        return render_grid(self.grid, self.agent)
