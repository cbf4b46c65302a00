"""Macro strategy layer: scripted expert, cloned classifier, scheduler, masks.

A macro action is one of four kinds: attack, move (with a goal cell),
purchase, or spending a skill point. The expert picks macros from a fixed
rule cascade; a small classifier is behaviour-cloned from its decisions; the
scheduler decides when a new macro is taken; and ``macro_to_mask`` translates
the current macro into the set of micro actions the policy may sample.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Protocol

import numpy as np

from .actions import (
    ATTACK_BASIC,
    ATTACK_FLASH,
    ATTACK_RESTORE,
    ATTACK_SKILL_1,
    ATTACK_STAY,
    CD_FLASH,
    CD_RESTORE,
    MOVE_STAY,
    N_ATTACK,
    N_MOVE,
    ActionPair,
    adjacent_directions,
)
from .config import GameConfig
from .sim import (
    GameState,
    Hero,
    astar_step,
    chebyshev,
    find_entity,
    frontmost_enemy_structure,
    observe_features,
    scripted_commands,
    scripted_opponent,
    step,
    reset,
    tower_exposed,
    weakest_enemy,
    MACRO_CMD_PURCHASE,
    MACRO_CMD_SKILL_POINT,
)

Cell = tuple[int, int]

MACRO_ATTACK = 0
MACRO_MOVE = 1
MACRO_PURCHASE = 2
MACRO_ADD_SKILL_POINT = 3
N_MACRO_KINDS = 4
MACRO_NAMES = ("attack", "move", "purchase", "add_skill_point")

# Enemy heroes or towers inside this radius make an Attack macro sensible.
ENGAGE_RADIUS = 4
LOW_HP_FRAC = 0.30
HEALTHY_HP_FRAC = 0.50
# Greedy micro tops itself up well before the retreat threshold bites.
RESTORE_AT_FRAC = 0.75

GOAL_GRID = 4
N_GOAL_REGIONS = GOAL_GRID * GOAL_GRID

DEMO_MAGIC = b"LCDEMO01"


@dataclass(frozen=True)
class MacroAction:
    kind: int
    goal: Optional[Cell] = None
    skill_slot: Optional[int] = None

    def __post_init__(self) -> None:
        if not 0 <= self.kind < N_MACRO_KINDS:
            raise ValueError(f"unknown macro kind {self.kind}")
        if (self.goal is not None) != (self.kind == MACRO_MOVE):
            raise ValueError("goal must be present exactly for move macros")
        if (self.skill_slot is not None) != (self.kind == MACRO_ADD_SKILL_POINT):
            raise ValueError("skill_slot must be present exactly for skill macros")


class MacroPolicy(Protocol):
    def predict(self, state: GameState, agent_id: int) -> MacroAction: ...


def region_of(cell: Cell, cfg: GameConfig) -> int:
    """Index of the coarse GOAL_GRID x GOAL_GRID region containing a cell."""
    rx = min(cell[0] * GOAL_GRID // cfg.grid_width, GOAL_GRID - 1)
    ry = min(cell[1] * GOAL_GRID // cfg.grid_height, GOAL_GRID - 1)
    return ry * GOAL_GRID + rx


def region_center(region: int, cfg: GameConfig) -> Cell:
    rx, ry = region % GOAL_GRID, region // GOAL_GRID
    x0, x1 = rx * cfg.grid_width // GOAL_GRID, (rx + 1) * cfg.grid_width // GOAL_GRID
    y0, y1 = ry * cfg.grid_height // GOAL_GRID, (ry + 1) * cfg.grid_height // GOAL_GRID
    return ((x0 + x1 - 1) // 2, (y0 + y1 - 1) // 2)


def _lowest_upgradable_slot(hero: Hero) -> Optional[int]:
    slots = [s for s in range(3) if hero.skill_levels[s] < 3]
    if not slots:
        return None
    return min(slots, key=lambda s: (hero.skill_levels[s], s))


def lane_objective(state: GameState, team: int, lane: int) -> Cell:
    """Where the lane wants its hero: the own tower (or crystal) while
    enemies are on our side of the lane, otherwise the next enemy structure
    to break."""
    cfg = state.config
    own_points = [t.pos for t in state.towers if t.team == team and t.lane == lane]
    own_points.append(state.crystal_of(team).pos)
    danger = cfg.tower_range + 3
    threatened = None
    for point in own_points:
        for h in state.heroes:
            if h.team != team and h.alive and chebyshev(h.pos, point) <= danger:
                threatened = point
                break
        if threatened is None:
            for m in state.minions:
                if m.team != team and chebyshev(m.pos, point) <= danger:
                    threatened = point
                    break
        if threatened is not None:
            return threatened
    return frontmost_enemy_structure(state, team, lane)


def expert_macro(state: GameState, agent_id: int) -> MacroAction:
    """Deterministic rule cascade for macro decisions.

    Spend skill points first, then shop, retreat when low, fight when an
    enemy hero or tower is close and we are healthy, otherwise move on the
    lane objective (defend while invaded, push when the lane is clear).
    """
    cfg = state.config
    hero = state.hero(agent_id)
    if not hero.alive:
        raise ValueError(f"hero {agent_id} is dead")

    slot = _lowest_upgradable_slot(hero)
    if hero.skill_points > 0 and slot is not None:
        return MacroAction(MACRO_ADD_SKILL_POINT, skill_slot=slot)
    if hero.gold >= cfg.purchase_cost:
        return MacroAction(MACRO_PURCHASE)
    if hero.hp < LOW_HP_FRAC * hero.max_hp:
        return MacroAction(MACRO_MOVE, goal=state.crystal_of(hero.team).pos)
    if hero.hp >= HEALTHY_HP_FRAC * hero.max_hp and _enemy_threat_near(state, hero):
        return MacroAction(MACRO_ATTACK)
    return MacroAction(MACRO_MOVE,
                       goal=lane_objective(state, hero.team, hero.lane))


def _enemy_threat_near(state: GameState, hero: Hero) -> bool:
    for other in state.heroes:
        if (other.team != hero.team and other.alive
                and chebyshev(hero.pos, other.pos) <= ENGAGE_RADIUS):
            return True
    return any(t.team != hero.team and chebyshev(hero.pos, t.pos) <= ENGAGE_RADIUS
               for t in state.towers)


class ExpertMacroPolicy:
    """Macro policy backed directly by the expert rules."""

    def predict(self, state: GameState, agent_id: int) -> MacroAction:
        return expert_macro(state, agent_id)


# ---------------------------------------------------------------------------
# Scheduler


@dataclass
class SchedulerState:
    current_macro: Optional[MacroAction] = None
    ticks_in_macro: int = 0
    replan_period: int = 10
    replans: int = 0


def macro_valid(state: GameState, agent_id: int, macro: MacroAction) -> bool:
    """Whether the macro can still make progress for this agent.

    A move macro is also interrupted when a fight opportunity appears (an
    enemy hero or tower inside the engage radius while healthy); without
    this the agent walks through engagements unable to attack until the
    replan period expires.
    """
    cfg = state.config
    hero = state.hero(agent_id)
    if macro.kind == MACRO_ATTACK:
        return weakest_enemy(state, agent_id, ENGAGE_RADIUS) is not None
    if macro.kind == MACRO_MOVE:
        if (hero.hp >= HEALTHY_HP_FRAC * hero.max_hp
                and _enemy_threat_near(state, hero)):
            return False
        return astar_step(state, hero.pos, macro.goal) is not None or hero.pos == macro.goal
    if macro.kind == MACRO_PURCHASE:
        return hero.gold >= cfg.purchase_cost
    return hero.skill_points > 0 and _lowest_upgradable_slot(hero) is not None


def macro_completed(state: GameState, agent_id: int, macro: MacroAction,
                    ticks_in_macro: int) -> bool:
    hero = state.hero(agent_id)
    if macro.kind == MACRO_MOVE:
        if hero.pos == macro.goal:
            return True
        return not _cell_passable(state, macro.goal) and chebyshev(hero.pos, macro.goal) <= 1
    if macro.kind in (MACRO_PURCHASE, MACRO_ADD_SKILL_POINT):
        # These resolve in the first simulated tick.
        return ticks_in_macro >= 1
    return False


def _cell_passable(state: GameState, cell: Cell) -> bool:
    return not (any(t.pos == cell for t in state.towers)
                or any(c.pos == cell for c in state.crystals))


def schedule(sched: SchedulerState, state: GameState, agent_id: int,
             policy: MacroPolicy) -> MacroAction:
    """Return the macro in force for this tick, replanning when the current
    macro timed out, completed or became impossible."""
    macro = sched.current_macro
    needs_replan = (
        macro is None
        or sched.ticks_in_macro >= sched.replan_period
        or macro_completed(state, agent_id, macro, sched.ticks_in_macro)
        or not macro_valid(state, agent_id, macro)
    )
    if needs_replan:
        macro = policy.predict(state, agent_id)
        sched.current_macro = macro
        sched.ticks_in_macro = 0
        sched.replans += 1
    sched.ticks_in_macro += 1
    return macro


# ---------------------------------------------------------------------------
# Macro -> micro masks


def macro_to_mask(state: GameState, agent_id: int, macro: MacroAction
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Allowed micro actions under a macro. Stay is always available on both
    heads, so a mask is never empty; locked or cooling skills never pass."""
    hero = state.hero(agent_id)
    move_mask = np.zeros(N_MOVE, dtype=bool)
    attack_mask = np.zeros(N_ATTACK, dtype=bool)
    move_mask[MOVE_STAY] = True
    attack_mask[ATTACK_STAY] = True

    if macro.kind == MACRO_ATTACK:
        move_mask[:] = True
        attack_mask[ATTACK_BASIC] = True
        for slot in range(3):
            if hero.skill_levels[slot] >= 1 and hero.cooldowns[slot] == 0:
                attack_mask[ATTACK_SKILL_1 + slot] = True
        if hero.cooldowns[CD_FLASH] == 0:
            attack_mask[ATTACK_FLASH] = True
        if hero.cooldowns[CD_RESTORE] == 0:
            attack_mask[ATTACK_RESTORE] = True
    elif macro.kind == MACRO_MOVE:
        direction = astar_step(state, hero.pos, macro.goal)
        if direction is not None and direction != MOVE_STAY:
            move_mask[direction] = True
            left, right = adjacent_directions(direction)
            move_mask[left] = True
            move_mask[right] = True
    # purchase / add-skill-point leave both heads at stay; the effect is
    # applied by the simulator through the macro command channel.
    return move_mask, attack_mask


def macro_command(macro: MacroAction) -> Optional[tuple]:
    if macro.kind == MACRO_PURCHASE:
        return (MACRO_CMD_PURCHASE,)
    if macro.kind == MACRO_ADD_SKILL_POINT:
        return (MACRO_CMD_SKILL_POINT, macro.skill_slot)
    return None


def validity_masks(state: GameState, agent_id: int
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Masks for the flat (macro-free) baseline: every move, plus every
    attack option that is not locked or cooling."""
    hero = state.hero(agent_id)
    move_mask = np.ones(N_MOVE, dtype=bool)
    attack_mask = np.zeros(N_ATTACK, dtype=bool)
    attack_mask[ATTACK_STAY] = True
    attack_mask[ATTACK_BASIC] = True
    for slot in range(3):
        if hero.skill_levels[slot] >= 1 and hero.cooldowns[slot] == 0:
            attack_mask[ATTACK_SKILL_1 + slot] = True
    if hero.cooldowns[CD_FLASH] == 0:
        attack_mask[ATTACK_FLASH] = True
    if hero.cooldowns[CD_RESTORE] == 0:
        attack_mask[ATTACK_RESTORE] = True
    return move_mask, attack_mask


# ---------------------------------------------------------------------------
# Greedy micro execution (used by the expert for data generation and as a
# sanity-check opponent)


def _safe_step(state: GameState, hero: Hero, direction: Optional[int],
               move_mask: np.ndarray) -> int:
    """Take the step unless it walks into uncovered tower fire."""
    if direction is None or direction == MOVE_STAY or not move_mask[direction]:
        return MOVE_STAY
    from .actions import MOVE_DELTAS

    dx, dy = MOVE_DELTAS[direction]
    target = (hero.pos[0] + dx, hero.pos[1] + dy)
    if tower_exposed(state, hero.team, target):
        return MOVE_STAY
    return direction


def greedy_micro(state: GameState, agent_id: int, macro: MacroAction,
                 move_mask: np.ndarray, attack_mask: np.ndarray) -> ActionPair:
    """Deterministic micro rule respecting the macro's masks: close distance
    while a friendly wave covers tower fire, fire the biggest available
    ability, heal when hurt."""
    cfg = state.config
    hero = state.hero(agent_id)
    move, attack = MOVE_STAY, ATTACK_STAY

    if macro.kind == MACRO_MOVE:
        direction = astar_step(state, hero.pos, macro.goal)
        retreating = macro.goal == state.crystal_of(hero.team).pos
        if retreating:
            # Never hold a retreat for tower safety; just go home.
            if direction is not None and move_mask[direction]:
                move = direction
        else:
            move = _safe_step(state, hero, direction, move_mask)
    elif macro.kind == MACRO_ATTACK:
        options: list[tuple[int, int]] = []
        for slot in range(3):
            idx = ATTACK_SKILL_1 + slot
            if attack_mask[idx] and weakest_enemy(
                    state, agent_id, cfg.skill_range[slot]) is not None:
                damage = cfg.skill_damage[slot] * hero.skill_levels[slot]
                options.append((damage + hero.damage_bonus, idx))
        if attack_mask[ATTACK_BASIC] and weakest_enemy(
                state, agent_id, cfg.attack_range) is not None:
            options.append((cfg.basic_attack_damage + hero.damage_bonus,
                            ATTACK_BASIC))
        hurt = hero.hp < HEALTHY_HP_FRAC * hero.max_hp
        topping_up = not options and hero.hp < RESTORE_AT_FRAC * hero.max_hp
        if attack_mask[ATTACK_RESTORE] and (hurt or topping_up):
            attack = ATTACK_RESTORE
        elif options:
            attack = max(options)[1]
        # Movement is independent of the attack head: fall back when tower
        # fire is uncovered, otherwise close to basic range behind cover.
        if tower_exposed(state, hero.team, hero.pos):
            direction = astar_step(state, hero.pos,
                                   state.crystal_of(hero.team).pos)
            if direction is not None and move_mask[direction]:
                move = direction
        else:
            target = weakest_enemy(state, agent_id, ENGAGE_RADIUS)
            if target is not None:
                target_pos = find_entity(state, target).pos
                if chebyshev(hero.pos, target_pos) > cfg.attack_range:
                    direction = astar_step(state, hero.pos, target_pos)
                    move = _safe_step(state, hero, direction, move_mask)
    return ActionPair(move, attack)


# ---------------------------------------------------------------------------
# Demonstration dataset


@dataclass
class DemoDataset:
    """Macro decision records: observation features, macro kind, goal region
    (or -1 for non-move macros), the episode each record came from, and a
    train/test tag assigned per episode."""

    features: np.ndarray
    kinds: np.ndarray
    regions: np.ndarray
    episodes: np.ndarray
    train_mask: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.kinds)
        if not (len(self.features) == len(self.regions) == len(self.episodes)
                == len(self.train_mask) == n):
            raise ValueError("dataset arrays must have matching lengths")

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def split(self, train: bool) -> "DemoDataset":
        m = self.train_mask if train else ~self.train_mask
        return DemoDataset(self.features[m], self.kinds[m], self.regions[m],
                           self.episodes[m], self.train_mask[m])

    def save(self, path) -> None:
        n, dim = self.features.shape
        with open(path, "wb") as fh:
            fh.write(DEMO_MAGIC)
            fh.write(struct.pack("<IQ", dim, n))
            for i in range(n):
                fh.write(self.features[i].astype("<f8").tobytes())
                fh.write(struct.pack("<iiqB", int(self.kinds[i]), int(self.regions[i]),
                                     int(self.episodes[i]), int(self.train_mask[i])))

    @staticmethod
    def load(path) -> "DemoDataset":
        raw = Path(path).read_bytes()
        if raw[:8] != DEMO_MAGIC:
            raise ValueError(f"{path}: not a demo dataset (bad magic)")
        dim, n = struct.unpack_from("<IQ", raw, 8)
        record = dim * 8 + 4 + 4 + 8 + 1
        if len(raw) != 20 + n * record:
            raise ValueError(f"{path}: truncated demo dataset")
        feats = np.zeros((n, dim), dtype=np.float64)
        kinds = np.zeros(n, dtype=np.int64)
        regions = np.zeros(n, dtype=np.int64)
        episodes = np.zeros(n, dtype=np.int64)
        train = np.zeros(n, dtype=bool)
        off = 20
        for i in range(n):
            feats[i] = np.frombuffer(raw, dtype="<f8", count=dim, offset=off)
            off += dim * 8
            k, r, e, t = struct.unpack_from("<iiqB", raw, off)
            off += 17
            kinds[i], regions[i], episodes[i], train[i] = k, r, e, bool(t)
        return DemoDataset(feats, kinds, regions, episodes, train)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            cols = [f"f{i}" for i in range(self.feature_dim)]
            fh.write(",".join(["episode", "kind", "region", "train"] + cols) + "\n")
            for i in range(len(self.kinds)):
                feats = ",".join(format(v, ".10g") for v in self.features[i])
                fh.write(f"{self.episodes[i]},{self.kinds[i]},{self.regions[i]},"
                         f"{int(self.train_mask[i])},{feats}\n")


def generate_dataset(config: GameConfig, episodes: int, seed: int,
                     opponent_level: str = "entry",
                     replan_period: int = 10) -> DemoDataset:
    """Play expert-vs-scripted episodes and record (observation, macro) at
    every scheduler replan; episodes split 90/10 into train/test."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    expert = ExpertMacroPolicy()
    feats: list[np.ndarray] = []
    kinds: list[int] = []
    regions: list[int] = []
    episode_ids: list[int] = []

    for ep in range(episodes):
        cfg = replace(config, seed=seed * 1_000_003 + ep)
        state = reset(cfg)
        team0 = state.team_hero_ids(0)
        scheds = {a: SchedulerState(replan_period=replan_period) for a in team0}
        while not state.done:
            actions: dict[int, ActionPair] = {}
            commands: dict[int, tuple] = {}
            for agent in team0:
                hero = state.hero(agent)
                if not hero.alive:
                    continue
                macro = schedule(scheds[agent], state, agent, expert)
                if scheds[agent].ticks_in_macro == 1:
                    feats.append(observe_features(state, agent))
                    kinds.append(macro.kind)
                    regions.append(region_of(macro.goal, cfg)
                                   if macro.kind == MACRO_MOVE else -1)
                    episode_ids.append(ep)
                    cmd = macro_command(macro)
                    if cmd is not None:
                        commands[agent] = cmd
                masks = macro_to_mask(state, agent, macro)
                actions[agent] = greedy_micro(state, agent, macro, *masks)
            for agent in state.team_hero_ids(1):
                if state.hero(agent).alive:
                    actions[agent] = scripted_opponent(state, agent, opponent_level)
                    cmd = scripted_commands(state, agent, opponent_level)
                    if cmd is not None:
                        commands[agent] = cmd
            state, _ = step(state, actions, commands)

    n = len(kinds)
    episode_arr = np.asarray(episode_ids, dtype=np.int64)
    return DemoDataset(
        features=np.vstack(feats) if n else np.zeros((0, 1)),
        kinds=np.asarray(kinds, dtype=np.int64),
        regions=np.asarray(regions, dtype=np.int64),
        episodes=episode_arr,
        train_mask=(episode_arr % 10) != 9,
    )


# ---------------------------------------------------------------------------
# Behaviour cloning


class BCModel:
    """One-hidden-layer classifier over observation features with a macro-kind
    head and a move-goal-region head."""

    def __init__(self, feature_dim: int, hidden: int = 64, seed: int = 0,
                 zero: bool = False):
        self.feature_dim = feature_dim
        self.hidden = hidden
        rng = np.random.default_rng(np.uint64(seed))

        def init(fan_in: int, fan_out: int) -> np.ndarray:
            if zero:
                return np.zeros((fan_in, fan_out))
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, (fan_in, fan_out))

        self.w0 = init(feature_dim, hidden)
        self.b0 = np.zeros(hidden)
        self.wk = init(hidden, N_MACRO_KINDS)
        self.bk = np.zeros(N_MACRO_KINDS)
        self.wr = init(hidden, N_GOAL_REGIONS)
        self.br = np.zeros(N_GOAL_REGIONS)

    def logits(self, features: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        h = np.maximum(features @ self.w0 + self.b0, 0.0)
        return h @ self.wk + self.bk, h @ self.wr + self.br, h

    def predict_labels(self, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        kind_logits, region_logits, _ = self.logits(features)
        return kind_logits.argmax(axis=1), region_logits.argmax(axis=1)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            np.savez(fh, w0=self.w0, b0=self.b0, wk=self.wk, bk=self.bk,
                     wr=self.wr, br=self.br)

    @staticmethod
    def load(path) -> "BCModel":
        data = np.load(path)
        model = BCModel(feature_dim=data["w0"].shape[0], hidden=data["w0"].shape[1],
                        zero=True)
        for name in ("w0", "b0", "wk", "bk", "wr", "br"):
            setattr(model, name, data[name])
        return model


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def train_bc(dataset: DemoDataset, epochs: int = 30, lr: float = 0.05,
             seed: int = 0, hidden: int = 64, minibatch: int = 64
             ) -> tuple[BCModel, dict]:
    """Minibatch SGD with momentum on cross-entropy over macro kinds plus,
    for move records, cross-entropy over goal regions."""
    train = dataset.split(train=True)
    test = dataset.split(train=False)
    if len(train.kinds) == 0:
        raise ValueError("empty training split")

    model = BCModel(train.feature_dim, hidden=hidden, seed=seed)
    rng = np.random.default_rng(np.uint64(seed) + 1)
    momentum = 0.9
    vel = {name: np.zeros_like(getattr(model, name))
           for name in ("w0", "b0", "wk", "bk", "wr", "br")}
    epoch_losses: list[float] = []

    for _ in range(epochs):
        order = rng.permutation(len(train.kinds))
        total_loss = 0.0
        for start in range(0, len(order), minibatch):
            idx = order[start:start + minibatch]
            x = train.features[idx]
            yk = train.kinds[idx]
            yr = train.regions[idx]
            n = len(idx)

            kind_logits, region_logits, h = model.logits(x)
            pk = _softmax_rows(kind_logits)
            loss = -np.log(np.maximum(pk[np.arange(n), yk], 1e-300)).sum()
            d_kind = pk
            d_kind[np.arange(n), yk] -= 1.0

            move_rows = yr >= 0
            d_region = np.zeros_like(region_logits)
            if move_rows.any():
                pr = _softmax_rows(region_logits[move_rows])
                rows = np.flatnonzero(move_rows)
                loss += -np.log(np.maximum(
                    pr[np.arange(len(rows)), yr[rows]], 1e-300)).sum()
                pr[np.arange(len(rows)), yr[rows]] -= 1.0
                d_region[rows] = pr
            total_loss += loss
            d_kind /= n
            d_region /= n

            d_h = (d_kind @ model.wk.T + d_region @ model.wr.T) * (h > 0)
            grads = {
                "wk": h.T @ d_kind, "bk": d_kind.sum(axis=0),
                "wr": h.T @ d_region, "br": d_region.sum(axis=0),
                "w0": x.T @ d_h, "b0": d_h.sum(axis=0),
            }
            for name, g in grads.items():
                vel[name] = momentum * vel[name] - lr * g
                setattr(model, name, getattr(model, name) + vel[name])
        epoch_losses.append(total_loss / len(order))

    def accuracy(split: DemoDataset) -> float:
        if len(split.kinds) == 0:
            return float("nan")
        pred, _ = model.predict_labels(split.features)
        return float((pred == split.kinds).mean())

    metrics = {
        "train_accuracy": accuracy(train),
        "test_accuracy": accuracy(test),
        "epoch_losses": epoch_losses,
    }
    return model, metrics


def il_predict(model: BCModel, obs_features: np.ndarray, cfg: GameConfig) -> MacroAction:
    """Argmax macro from the cloned model; move goals are region centers.

    Skill-slot choice is not part of the learned label; a placeholder slot 0
    is attached and refined by the executing policy from live hero state.
    """
    kind_logits, region_logits, _ = model.logits(obs_features.reshape(1, -1))
    kind = int(kind_logits[0].argmax())
    if kind == MACRO_MOVE:
        return MacroAction(MACRO_MOVE,
                           goal=region_center(int(region_logits[0].argmax()), cfg))
    if kind == MACRO_ADD_SKILL_POINT:
        return MacroAction(MACRO_ADD_SKILL_POINT, skill_slot=0)
    return MacroAction(kind)


class BCMacroPolicy:
    """Scheduler-facing wrapper around a trained BC model."""

    def __init__(self, model: BCModel):
        self.model = model

    def predict(self, state: GameState, agent_id: int) -> MacroAction:
        macro = il_predict(self.model, observe_features(state, agent_id),
                           state.config)
        if macro.kind == MACRO_ADD_SKILL_POINT:
            slot = _lowest_upgradable_slot(state.hero(agent_id))
            macro = MacroAction(MACRO_ADD_SKILL_POINT,
                                skill_slot=slot if slot is not None else 0)
        return macro
