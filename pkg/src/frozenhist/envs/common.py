"""Shared pieces for the gridworld environments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CODES = {
    "empty": 0,
    "wall": 1,
    "goal": 2,
    "key": 3,
    "door_locked": 4,
    "door_open": 5,
    "cue_left": 6,
    "cue_right": 7,
    "object": 8,
}

# up, down, left, right as (dr, dc)
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))

_GLYPHS = {0: ".", 1: "#", 2: "G", 3: "k", 4: "D", 5: "d", 6: "<", 7: ">", 8: "o"}


@dataclass
class EnvStep:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


def crop(grid: np.ndarray, center: tuple[int, int], radius: int) -> np.ndarray:
    """Egocentric square crop; cells beyond the grid read as wall."""
    size = 2 * radius + 1
    out = np.full((size, size), CODES["wall"], dtype=np.int64)
    r0, c0 = center
    h, w = grid.shape
    for i in range(size):
        r = r0 - radius + i
        if not 0 <= r < h:
            continue
        lo = max(0, c0 - radius)
        hi = min(w, c0 + radius + 1)
        out[i, lo - (c0 - radius) : hi - (c0 - radius)] = grid[r, lo:hi]
    return out


def render_grid(grid: np.ndarray, agent: tuple[int, int] | None = None) -> str:
    lines = []
    for r in range(grid.shape[0]):
        row = []
        for c in range(grid.shape[1]):
            if agent is not None and (r, c) == agent:
                row.append("A")
            else:
                row.append(_GLYPHS.get(int(grid[r, c]), "?"))
        lines.append("".join(row))
    return "\n".join(lines)
