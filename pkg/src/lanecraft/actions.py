"""Discrete micro action space shared by the simulator, policy and masks.

A micro action is a pair (move index, attack index). The move head has nine
ways (eight compass directions plus stay); the attack head has seven entries
(stay, three skills, basic attack, flash, restore).
"""

from __future__ import annotations

from dataclasses import dataclass

# Move head. Grid coordinates are (x, y) with y growing downward, so "up"
# decreases y.
MOVE_UP = 0
MOVE_DOWN = 1
MOVE_LEFT = 2
MOVE_RIGHT = 3
MOVE_LOWER_RIGHT = 4
MOVE_LOWER_LEFT = 5
MOVE_UPPER_RIGHT = 6
MOVE_UPPER_LEFT = 7
MOVE_STAY = 8
N_MOVE = 9

MOVE_DELTAS: tuple[tuple[int, int], ...] = (
    (0, -1),   # up
    (0, 1),    # down
    (-1, 0),   # left
    (1, 0),    # right
    (1, 1),    # lower-right
    (-1, 1),   # lower-left
    (1, -1),   # upper-right
    (-1, -1),  # upper-left
    (0, 0),    # stay
)

MOVE_NAMES = (
    "up", "down", "left", "right",
    "lower_right", "lower_left", "upper_right", "upper_left", "stay",
)

DELTA_TO_MOVE = {d: i for i, d in enumerate(MOVE_DELTAS)}

# Compass ring in clockwise order, used to find the two directions adjacent
# to a heading (45 degrees either side).
DIRECTION_RING = (
    MOVE_UP, MOVE_UPPER_RIGHT, MOVE_RIGHT, MOVE_LOWER_RIGHT,
    MOVE_DOWN, MOVE_LOWER_LEFT, MOVE_LEFT, MOVE_UPPER_LEFT,
)
_RING_POS = {m: i for i, m in enumerate(DIRECTION_RING)}


def adjacent_directions(move: int) -> tuple[int, int]:
    """Return the two compass directions 45 degrees either side of ``move``."""
    if move == MOVE_STAY:
        raise ValueError("stay has no adjacent directions")
    i = _RING_POS[move]
    return DIRECTION_RING[(i - 1) % 8], DIRECTION_RING[(i + 1) % 8]


# Attack head.
ATTACK_STAY = 0
ATTACK_SKILL_1 = 1
ATTACK_SKILL_2 = 2
ATTACK_SKILL_3 = 3
ATTACK_BASIC = 4
ATTACK_FLASH = 5
ATTACK_RESTORE = 6
N_ATTACK = 7

ATTACK_NAMES = (
    "stay", "skill_1", "skill_2", "skill_3", "attack", "flash", "restore",
)

SKILL_SLOTS = (ATTACK_SKILL_1, ATTACK_SKILL_2, ATTACK_SKILL_3)

# Cooldown timer slots on a hero: three skills, then flash, then restore.
CD_SKILL_1, CD_SKILL_2, CD_SKILL_3, CD_FLASH, CD_RESTORE = range(5)
N_COOLDOWNS = 5


@dataclass(frozen=True)
class ActionPair:
    """Joint micro action: one move index and one attack index."""

    move: int
    attack: int

    def __post_init__(self) -> None:
        if not 0 <= self.move < N_MOVE:
            raise ValueError(f"move index out of range: {self.move}")
        if not 0 <= self.attack < N_ATTACK:
            raise ValueError(f"attack index out of range: {self.attack}")


STAY_PAIR = ActionPair(MOVE_STAY, ATTACK_STAY)
