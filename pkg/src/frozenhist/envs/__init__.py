"""Procedurally generated, seeded gridworld POMDPs.

Observations are small egocentric integer-grid crops; hidden cells never
leak.  Cell codes are shared across environments:

    0 empty   1 wall   2 goal   3 key   4 door (locked)   5 door (open)
    6 cue left   7 cue right   8 object

Flattening for the projection path divides by the largest code (8); see
``tokenmap.flatten_observation``.
"""

from .common import EnvStep, CODES
from .maze import RandomMaze
from .keydoor import KeyDoorTask
from .tmaze import TMaze

ENV_KINDS = ("randmaze", "keytask", "tmaze")


def make_env(kind: str, seed: int, corridor_length: int = 8):
    """Construct one environment instance by kind name."""
    if kind == "randmaze":
        return RandomMaze(seed)
    if kind == "keytask":
        return KeyDoorTask(seed)
    if kind == "tmaze":
        return TMaze(corridor_length, seed)
    raise ValueError(f"unknown environment kind {kind!r}; expected one of {ENV_KINDS}")


__all__ = [
    "EnvStep",
    "CODES",
    "RandomMaze",
    "KeyDoorTask",
    "TMaze",
    "ENV_KINDS",
    "make_env",
]
