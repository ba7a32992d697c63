"""Procedurally generated maze with an egocentric 9x9 view.

Every episode samples a fresh maze: side length uniform in {5..25}, layout
carved by recursive backtracking on the odd cell lattice (which yields a
perfect maze, so every free cell is reachable), agent spawned on a uniformly
random free cell, goal on the free cell in the lower-right corner.  Even side
lengths are produced by carving the next odd size and cropping away the last
row and column; those hold only border wall, so connectivity survives and
out-of-bounds simply reads as wall.

Rewards: -1 and episode end for walking into a wall (or off the grid), +1 and
episode end on the goal, -0.01 per ordinary move.  Episodes are cut off after
4 * side^2 steps so rollouts stay bounded.
"""

from __future__ import annotations

import numpy as np

from ..rng import Rng, split_seed
from .common import CODES, MOVES, EnvStep, render_grid

SIZE_LO, SIZE_HI = 5, 25
VIEW_RADIUS = 4  # 9x9 crop

WALL = CODES["wall"]
FREE = CODES["empty"]
GOAL = CODES["goal"]


def carve_maze(side_odd: int, rng: Rng) -> np.ndarray:
    """Recursive-backtracker maze on an odd-sized lattice; 0 free, 1 wall.

    Carving runs on plain Python rows (scalar numpy indexing is an order of
    magnitude slower and this runs once per episode).
    """
    rows = [[WALL] * side_odd for _ in range(side_odd)]
    rows[1][1] = FREE
    stack = [(1, 1)]
    limit = side_odd - 1
    # one uniform per carving decision, drawn in bulk; at most ~2 decisions
    # per cell of the ((side-1)/2)^2 lattice
    budget = side_odd * side_odd
    draws = rng.uniform(budget).tolist()
    used = 0
    while stack:
        r, c = stack[-1]
        candidates = []
        for dr, dc in MOVES:
            nr, nc = r + 2 * dr, c + 2 * dc
            if 1 <= nr < limit and 1 <= nc < limit and rows[nr][nc] == WALL:
                candidates.append((nr, nc, r + dr, c + dc))
        if not candidates:
            stack.pop()
            continue
        if len(candidates) == 1:
            pick = 0
        else:
            if used >= len(draws):
                draws = rng.uniform(budget).tolist()
                used = 0
            pick = int(draws[used] * len(candidates))
            used += 1
        nr, nc, wr, wc = candidates[pick]
        rows[wr][wc] = FREE
        rows[nr][nc] = FREE
        stack.append((nr, nc))
    return np.array(rows, dtype=np.int64)


class RandomMaze:
    """One environment instance; ``reset`` draws the next episode's maze."""

    n_actions = 4
    obs_shape = (2 * VIEW_RADIUS + 1, 2 * VIEW_RADIUS + 1)

    def __init__(self, seed: int):
        self._rng = Rng(split_seed(seed, "randmaze"))
        self._done = True
        self.grid: np.ndarray | None = None
        self.agent: tuple[int, int] = (0, 0)
        self.goal: tuple[int, int] = (0, 0)
        self.size = 0
        self.steps = 0
        self.max_steps = 0

    def reset(self) -> np.ndarray:
        rng = self._rng
        size = rng.integers(SIZE_LO, SIZE_HI + 1)
        side_odd = size if size % 2 == 1 else size + 1
        grid = carve_maze(side_odd, rng)[:size, :size]
        free = np.argwhere(grid == FREE)
        # lower-right-most free cell hosts the goal
        order = np.lexsort((free[:, 1], free[:, 0]))
        goal = tuple(free[order[-1]])
        spawn = goal
        while spawn == goal:
            spawn = tuple(free[rng.integers(0, len(free))])
        self.grid = grid
        self.size = size
        self.goal = goal
        self.agent = spawn
        self.steps = 0
        self.max_steps = 4 * size * size
        self._done = False
        # wall-padded copy makes the egocentric crop a plain slice
        r = VIEW_RADIUS
        padded = np.full((size + 2 * r, size + 2 * r), WALL, dtype=np.int64)
        padded[r : r + size, r : r + size] = grid
        padded[goal[0] + r, goal[1] + r] = GOAL
        self._padded = padded
        return self._observe()

    def _observe(self) -> np.ndarray:
        r, c = self.agent
        k = 2 * VIEW_RADIUS + 1
        return self._padded[r : r + k, c : c + k].copy()

    def step(self, action: int) -> EnvStep:
        if self._done:
            raise RuntimeError("step called after the episode ended; reset first")
        self.steps += 1
        dr, dc = MOVES[action]
        r, c = self.agent[0] + dr, self.agent[1] + dc
        out_of_bounds = not (0 <= r < self.size and 0 <= c < self.size)
        if out_of_bounds or self.grid[r, c] == WALL:
            self._done = True
            return EnvStep(self._observe(), -1.0, True,
                           {"length": self.steps, "success": False})
        self.agent = (r, c)
        if self.agent == self.goal:
            self._done = True
            return EnvStep(self._observe(), 1.0, True,
                           {"length": self.steps, "success": True})
        if self.steps >= self.max_steps:
            self._done = True
            return EnvStep(self._observe(), -0.01, True,
                           {"length": self.steps, "success": False})
        return EnvStep(self._observe(), -0.01, False, {})

    def render(self) -> str:
        shown = self.grid.copy()
        shown[self.goal] = GOAL
        return render_grid(shown, self.agent)
