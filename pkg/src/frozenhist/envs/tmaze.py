"""Corridor-and-junction memory diagnostic with a 3x3 view.

The agent starts at the top of a vertical corridor of length C.  Only the
very first observation carries a cue (left or right) in its center cell;
every later observation is cue-free, and all mid-corridor views are
identical.  Corridor cells admit no choices: any action advances the agent
one cell toward the junction (the classic forced-walk form of this
diagnostic, which makes the junction decision the only behavioral degree of
freedom).  At the junction the corridor opens into two arm cells; moving
left or right enters an arm and ends the episode with +1 if the arm matches
the cue and -1 otherwise, while up/down do nothing.

Because the junction view is the same under both cues, no policy acting on
the current observation alone can beat an expected return of zero; carrying
the first observation forward solves the task.  Timeouts (after
50 * (C + 2) steps of dithering at the junction) count as failures and pay
-1, keeping terminal rewards in {-1, +1}.
"""

from __future__ import annotations

import numpy as np

from ..rng import Rng, split_seed
from .common import CODES, EnvStep, render_grid

VIEW_RADIUS = 1  # 3x3 crop

WALL = CODES["wall"]
FREE = CODES["empty"]

ACT_LEFT = 2
ACT_RIGHT = 3


class TMaze:
    n_actions = 4
    obs_shape = (2 * VIEW_RADIUS + 1, 2 * VIEW_RADIUS + 1)

    def __init__(self, corridor_length: int, seed: int):
        if corridor_length < 0:
            raise ValueError(f"corridor length must be >= 0, got {corridor_length}")
        self.corridor = corridor_length
        self._rng = Rng(split_seed(seed, "tmaze"))
        self._done = True
        c = corridor_length
        grid = np.full((c + 1, 3), WALL, dtype=np.int64)
        grid[:, 1] = FREE
        grid[c, 0] = FREE
        grid[c, 2] = FREE
        self._base_grid = grid
        self.junction = (c, 1)
        self.max_steps = 50 * (c + 2)
        r = VIEW_RADIUS
        h, w = grid.shape
        self._padded = np.full((h + 2 * r, w + 2 * r), WALL, dtype=np.int64)
        self._padded[r : r + h, r : r + w] = grid

    def reset(self) -> np.ndarray:
        self.cue_left = bool(self._rng.integers(0, 2))
        self.agent = (0, 1)
        self.steps = 0
        self._done = False
        return self._observe(first=True)

    def _observe(self, first: bool = False) -> np.ndarray:
        r, c = self.agent
        k = 2 * VIEW_RADIUS + 1
        view = self._padded[r : r + k, c : c + k].copy()
        if first:
            view[VIEW_RADIUS, VIEW_RADIUS] = CODES["cue_left"] if self.cue_left else CODES["cue_right"]
        return view

    def step(self, action: int) -> EnvStep:
        if self._done:
            raise RuntimeError("step called after the episode ended; reset first")
        self.steps += 1
        r, c = self.agent
        if r < self.corridor:
            # forced walk: every action advances toward the junction
            self.agent = (r + 1, c)
        elif action in (ACT_LEFT, ACT_RIGHT):
            went_left = action == ACT_LEFT
            self._done = True
            reward = 1.0 if went_left == self.cue_left else -1.0
            self.agent = (r, 0 if went_left else 2)
            return EnvStep(self._observe(), reward, True,
                           {"length": self.steps, "success": reward > 0})
        if self.steps >= self.max_steps:
            self._done = True
            return EnvStep(self._observe(), -1.0, True,
                           {"length": self.steps, "success": False})
        return EnvStep(self._observe(), 0.0, False, {})

    def render(self) -> str:
        grid = self._base_grid.copy()
        if self.steps == 0 and not self._done:
            grid[0, 1] = CODES["cue_left"] if self.cue_left else CODES["cue_right"]
        return render_grid(grid, self.agent)
