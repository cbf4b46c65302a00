"""Hierarchical macro/micro RL on a desk-scale lane-pushing game.

The package is organised around seven pieces:

* ``config`` / ``sim``  -- the grid battle simulator (1v1 and 5v5) with
  dense per-tick reward events,
* ``pathing``           -- A* route planning on the simulator grid,
* ``net``               -- a dual-head (move/attack) policy + value network
  with post-softmax action masking, written on plain numpy float64,
* ``macro``             -- the scripted expert, behaviour-cloned macro
  classifier, scheduler and macro-to-mask mapping,
* ``learner``           -- advantages, the composite clipped-surrogate loss,
  the episodic best-return memory and the parameter update step,
* ``rollout``           -- parallel experience collection plus a small
  length-prefixed wire protocol for remote workers,
* ``bench`` / ``cli``   -- training, evaluation and ablation commands.
"""

__version__ = "0.1.0"

from .actions import ActionPair
from .config import GameConfig, RewardWeights, default_config

__all__ = [
    "ActionPair",
    "GameConfig",
    "RewardWeights",
    "default_config",
    "__version__",
]
