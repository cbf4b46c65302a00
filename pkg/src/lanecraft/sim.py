"""Deterministic turn-based lane-pushing battle simulator.

Two teams fight on a small grid. Each team owns one crystal, one tower per
lane, periodic minion waves and one or five heroes. Destroying the enemy
crystal wins; reaching the tick limit ends the game with the healthier
crystal ahead.

``step`` resolves one tick in a fixed order so identical inputs always
produce identical states:

  0. pending macro commands (purchase / spend skill point)
  1. hero moves (blocked moves become stay; lower id claims contested cells)
  2. hero attacks and skills (target = weakest enemy in range)
  3. minion moves/attacks, then tower attacks
  4. deaths, kill gold, respawns
  5. minion wave spawning
  6. passive gold
  7. tick increment and terminal check

Randomness exists only in ``reset`` (spawn jitter drawn from the config
seed); the dynamics themselves are pure.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional

import numpy as np

from . import pathing
from .actions import (
    ATTACK_BASIC,
    ATTACK_FLASH,
    ATTACK_RESTORE,
    ATTACK_SKILL_1,
    ATTACK_STAY,
    CD_FLASH,
    CD_RESTORE,
    MOVE_DELTAS,
    MOVE_STAY,
    N_ATTACK,
    N_COOLDOWNS,
    N_MOVE,
    ActionPair,
)
from .config import TEAM_BLUE, TEAM_RED, GameConfig, RewardWeights

Cell = tuple[int, int]

# Observation sizing knobs shared by the sim and the policy network.
MINIONS_OBSERVED_PER_SIDE = 3
MINIMAP_SIZE = 8
LOCAL_VIEW_SIZE = 5
OBS_CHANNELS = 3  # ally units, enemy units, structures

# Each team keeps at most this many minions alive per lane; waves that would
# exceed it are skipped (prevents unbounded pileups in stalled games).
MAX_MINIONS_PER_LANE = 6

MACRO_CMD_PURCHASE = "purchase"
MACRO_CMD_SKILL_POINT = "skill_point"

OPPONENT_LEVELS = ("entry", "easy", "medium")
RETREAT_HP_FRAC = 0.30


@dataclass
class Hero:
    id: int
    team: int
    lane: int
    pos: Cell
    spawn: Cell
    hp: int
    max_hp: int
    gold: int = 0
    skill_points: int = 1
    skill_levels: list[int] = field(default_factory=lambda: [0, 0, 0])
    cooldowns: list[int] = field(default_factory=lambda: [0] * N_COOLDOWNS)
    damage_bonus: int = 0
    alive: bool = True
    respawn_timer: int = 0
    last_action: Optional[ActionPair] = None
    prev_block: Optional[np.ndarray] = None


@dataclass
class Tower:
    id: int
    team: int
    lane: int
    pos: Cell
    hp: int


@dataclass
class Crystal:
    id: int
    team: int
    pos: Cell
    hp: int


@dataclass
class Minion:
    id: int
    team: int
    lane: int
    pos: Cell
    hp: int


@dataclass
class StepEvents:
    """Per-agent deltas for one tick, the inputs of the reward function.

    ``gold_delta`` and ``hp_delta`` are the agent's own changes this tick;
    ``tower_loss`` and ``player_death`` are team-level signed counts
    (positive when the enemy lost a tower / a player).
    """

    gold_delta: int = 0
    hp_delta: int = 0
    tower_loss: int = 0
    player_death: int = 0


@dataclass
class Observation:
    """Normalized agent view: flat features plus coarse occupancy grids."""

    features: np.ndarray
    minimap: np.ndarray
    local_view: np.ndarray


@dataclass
class GameState:
    config: GameConfig
    tick: int
    heroes: list[Hero]
    towers: list[Tower]
    crystals: list[Crystal]
    minions: list[Minion]
    lane_rows: tuple[int, ...]
    tower_layout: tuple[tuple[int, int, int, Cell], ...]  # (id, team, lane, pos)
    next_entity_id: int
    rng_state: int
    done: bool = False
    winner: Optional[int] = None
    # Route cache, valid while the set of standing structures is unchanged;
    # never part of the observable state or digests.
    path_cache: dict = field(default_factory=dict, repr=False)

    def hero(self, hero_id: int) -> Hero:
        if not 0 <= hero_id < len(self.heroes):
            raise ValueError(f"unknown hero id {hero_id}")
        return self.heroes[hero_id]

    def crystal_of(self, team: int) -> Crystal:
        return self.crystals[team]

    def alive_hero_ids(self) -> list[int]:
        return [h.id for h in self.heroes if h.alive]

    def team_hero_ids(self, team: int) -> list[int]:
        return [h.id for h in self.heroes if h.team == team]


def chebyshev(a: Cell, b: Cell) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


def _lane_rows(cfg: GameConfig) -> tuple[int, ...]:
    if cfg.lane_count() == 1:
        return (cfg.grid_height // 2,)
    h = cfg.grid_height
    return (h // 6, h // 2, h - 1 - h // 6)


def _team_layout(cfg: GameConfig, team: int) -> dict:
    """Static positions for one team: crystal, towers, spawn area."""
    w = cfg.grid_width
    mid = cfg.grid_height // 2
    lanes = _lane_rows(cfg)
    if team == TEAM_BLUE:
        crystal_x, tower_x, spawn_x, minion_x = 1, (4 if cfg.lane_count() == 1 else 6), 2, 2
    else:
        crystal_x = w - 2
        tower_x = w - 5 if cfg.lane_count() == 1 else w - 7
        spawn_x, minion_x = w - 3, w - 3
    return {
        "crystal": (crystal_x, mid),
        "towers": [(tower_x, y) for y in lanes],
        "spawn_x": spawn_x,
        "minion_x": minion_x,
    }


def passability_grid(state: GameState) -> np.ndarray:
    """Boolean grid of cells a hero may occupy; structures block."""
    cfg = state.config
    grid = np.ones((cfg.grid_height, cfg.grid_width), dtype=bool)
    for t in state.towers:
        grid[t.pos[1], t.pos[0]] = False
    for c in state.crystals:
        grid[c.pos[1], c.pos[0]] = False
    return grid


def _find_free_near(state: GameState, cell: Cell, occupied: set[Cell]) -> Cell:
    """Nearest passable unoccupied cell, scanning rings deterministically."""
    grid = passability_grid(state)
    h, w = grid.shape
    for radius in range(max(w, h)):
        candidates = []
        for y in range(cell[1] - radius, cell[1] + radius + 1):
            for x in range(cell[0] - radius, cell[0] + radius + 1):
                if max(abs(x - cell[0]), abs(y - cell[1])) != radius:
                    continue
                if 0 <= x < w and 0 <= y < h and grid[y, x] and (x, y) not in occupied:
                    candidates.append((y, x))
        if candidates:
            y, x = min(candidates)
            return (x, y)
    raise RuntimeError("no free cell on the grid")


def reset(config: GameConfig) -> GameState:
    """Build the initial state: heroes at jittered spawns, structures placed,
    tick zero. Deterministic for a given config (including its seed)."""
    config.validate()
    n = config.heroes_per_team()
    lanes = _lane_rows(config)
    rng = np.random.default_rng(np.uint64(config.seed))

    heroes: list[Hero] = []
    towers: list[Tower] = []
    crystals: list[Crystal] = []
    next_id = 2 * n

    for team in (TEAM_BLUE, TEAM_RED):
        layout = _team_layout(config, team)
        for lane_idx, pos in enumerate(layout["towers"]):
            towers.append(Tower(id=next_id, team=team, lane=lane_idx, pos=pos,
                                hp=config.tower_hp))
            next_id += 1
    for team in (TEAM_BLUE, TEAM_RED):
        layout = _team_layout(config, team)
        crystals.append(Crystal(id=next_id, team=team, pos=layout["crystal"],
                                hp=config.crystal_hp))
        next_id += 1

    blocked = {t.pos for t in towers} | {c.pos for c in crystals}
    taken: set[Cell] = set()
    for team in (TEAM_BLUE, TEAM_RED):
        layout = _team_layout(config, team)
        mid = config.grid_height // 2
        for i in range(n):
            base = (layout["spawn_x"], mid - n // 2 + i)
            # Jitter within the 3x3 neighbourhood keeps eval games varied.
            options = []
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    c = (base[0] + dx, base[1] + dy)
                    if (0 <= c[0] < config.grid_width and 0 <= c[1] < config.grid_height
                            and c not in blocked and c not in taken):
                        options.append(c)
            pos = options[int(rng.integers(len(options)))]
            taken.add(pos)
            hero_id = team * n + i
            heroes.append(Hero(
                id=hero_id, team=team, lane=i % config.lane_count(),
                pos=pos, spawn=base, hp=config.hero_base_hp,
                max_hp=config.hero_base_hp,
            ))
    heroes.sort(key=lambda h: h.id)

    state = GameState(
        config=config,
        tick=0,
        heroes=heroes,
        towers=towers,
        crystals=crystals,
        minions=[],
        lane_rows=lanes,
        tower_layout=tuple((t.id, t.team, t.lane, t.pos) for t in towers),
        next_entity_id=next_id,
        rng_state=int(config.seed) & 0xFFFFFFFFFFFFFFFF,
    )
    layout_obs = observation_layout(config)
    for h in heroes:
        h.prev_block = np.zeros(layout_obs.core_dim, dtype=np.float64)
    return state


# ---------------------------------------------------------------------------
# Target selection


def _entity_catalog(state: GameState, team: int):
    """Enemy entities of ``team`` grouped by target-priority class."""
    enemy = 1 - team
    heroes = [(h.id, h.pos, h.hp) for h in state.heroes if h.team == enemy and h.alive]
    minions = [(m.id, m.pos, m.hp) for m in state.minions if m.team == enemy]
    towers = [(t.id, t.pos, t.hp) for t in state.towers if t.team == enemy]
    crystal = state.crystal_of(enemy)
    crystals = [(crystal.id, crystal.pos, crystal.hp)] if crystal.hp > 0 else []
    return heroes, minions, towers, crystals


def weakest_enemy(state: GameState, agent_id: int, rng: int) -> Optional[int]:
    """Lowest-hp enemy entity within ``rng`` cells of the agent.

    Priority classes: heroes, then minions, then towers, then the crystal;
    the first non-empty class in range wins. Ties break on the lower id.
    """
    hero = state.hero(agent_id)
    if not hero.alive:
        raise ValueError(f"hero {agent_id} is dead")
    for group in _entity_catalog(state, hero.team):
        in_range = [(hp, eid) for eid, pos, hp in group
                    if hp > 0 and chebyshev(hero.pos, pos) <= rng]
        if in_range:
            return min(in_range)[1]
    return None


def find_entity(state: GameState, entity_id: int):
    for h in state.heroes:
        if h.id == entity_id:
            return h
    for group in (state.towers, state.minions, state.crystals):
        for e in group:
            if e.id == entity_id:
                return e
    return None


def frontmost_enemy_structure(state: GameState, team: int, lane: int) -> Cell:
    """Push target for a lane: the closest alive enemy tower in that lane,
    or the enemy crystal once the lane is open."""
    own_crystal = state.crystal_of(team).pos
    towers = [t for t in state.towers if t.team != team and t.lane == lane]
    if towers:
        return min(towers, key=lambda t: (chebyshev(t.pos, own_crystal), t.id)).pos
    return state.crystal_of(1 - team).pos


def astar_step(state: GameState, start: Cell, goal: Cell) -> Optional[int]:
    """Move-head index of the first A* step from start toward goal; stay when
    already there, None when the goal is unreachable. Results are cached per
    state until a structure falls (only structures block)."""
    if start == goal:
        return MOVE_STAY
    key = (start, goal)
    cached = state.path_cache.get(key, -2)
    if cached != -2:
        return cached
    query = pathing.PathQuery(grid=passability_grid(state), start=start, goal=goal)
    path = pathing.astar(query)
    direction = None if path is None else pathing.next_move_action(path, start)
    state.path_cache[key] = direction
    return direction


# ---------------------------------------------------------------------------
# Step resolution


def _skill_damage(cfg: GameConfig, hero: Hero, slot: int) -> int:
    return cfg.skill_damage[slot] * hero.skill_levels[slot] + hero.damage_bonus


def _apply_macro_command(state: GameState, hero: Hero, command) -> None:
    cfg = state.config
    kind = command[0]
    if kind == MACRO_CMD_PURCHASE:
        if hero.gold >= cfg.purchase_cost:
            hero.gold -= cfg.purchase_cost
            hero.damage_bonus += cfg.purchase_damage_bonus
    elif kind == MACRO_CMD_SKILL_POINT:
        slot = command[1]
        if 0 <= slot < 3 and hero.skill_points > 0 and hero.skill_levels[slot] < 3:
            hero.skill_points -= 1
            hero.skill_levels[slot] += 1
    else:
        raise ValueError(f"unknown macro command {command!r}")


def _hero_moves(state: GameState, actions: dict[int, ActionPair]) -> dict[int, int]:
    """Phase 1. Returns the executed move index per hero."""
    cfg = state.config
    grid = passability_grid(state)
    occupied = {h.pos for h in state.heroes if h.alive}
    executed: dict[int, int] = {}
    for hero in state.heroes:
        if not hero.alive:
            continue
        move = actions[hero.id].move
        if move == MOVE_STAY:
            executed[hero.id] = MOVE_STAY
            continue
        dx, dy = MOVE_DELTAS[move]
        target = (hero.pos[0] + dx, hero.pos[1] + dy)
        inside = 0 <= target[0] < cfg.grid_width and 0 <= target[1] < cfg.grid_height
        if inside and grid[target[1], target[0]] and target not in occupied:
            occupied.discard(hero.pos)
            occupied.add(target)
            hero.pos = target
            executed[hero.id] = move
        else:
            executed[hero.id] = MOVE_STAY
    return executed


def _flash_target(state: GameState, hero: Hero) -> Cell:
    """Blink up to flash_distance cells toward the own crystal."""
    cfg = state.config
    grid = passability_grid(state)
    occupied = {h.pos for h in state.heroes if h.alive and h.id != hero.id}
    goal = state.crystal_of(hero.team).pos
    pos = hero.pos
    for _ in range(cfg.flash_distance):
        dx = (goal[0] > pos[0]) - (goal[0] < pos[0])
        dy = (goal[1] > pos[1]) - (goal[1] < pos[1])
        if dx == 0 and dy == 0:
            break
        nxt = (pos[0] + dx, pos[1] + dy)
        if not (0 <= nxt[0] < cfg.grid_width and 0 <= nxt[1] < cfg.grid_height):
            break
        if not grid[nxt[1], nxt[0]] or nxt in occupied:
            break
        pos = nxt
    return pos


def _hero_attacks(state: GameState, actions: dict[int, ActionPair],
                  last_damager: dict[int, int]) -> dict[int, int]:
    """Phase 2. Returns the executed attack index per hero."""
    cfg = state.config
    executed: dict[int, int] = {}
    for hero in state.heroes:
        if not hero.alive:
            continue
        attack = actions[hero.id].attack
        done = ATTACK_STAY
        if attack == ATTACK_STAY:
            pass
        elif ATTACK_SKILL_1 <= attack <= ATTACK_SKILL_1 + 2:
            slot = attack - ATTACK_SKILL_1
            if hero.skill_levels[slot] >= 1 and hero.cooldowns[slot] == 0:
                target_id = weakest_enemy(state, hero.id, cfg.skill_range[slot])
                done = attack
                if target_id is not None:
                    target = find_entity(state, target_id)
                    target.hp -= _skill_damage(cfg, hero, slot)
                    hero.cooldowns[slot] = cfg.skill_cooldowns[slot]
                    last_damager[target_id] = hero.id
        elif attack == ATTACK_BASIC:
            done = ATTACK_BASIC
            target_id = weakest_enemy(state, hero.id, cfg.attack_range)
            if target_id is not None:
                target = find_entity(state, target_id)
                target.hp -= cfg.basic_attack_damage + hero.damage_bonus
                last_damager[target_id] = hero.id
        elif attack == ATTACK_FLASH:
            if hero.cooldowns[CD_FLASH] == 0:
                hero.pos = _flash_target(state, hero)
                hero.cooldowns[CD_FLASH] = cfg.flash_cooldown
                done = ATTACK_FLASH
        elif attack == ATTACK_RESTORE:
            if hero.cooldowns[CD_RESTORE] == 0:
                hero.hp = min(hero.max_hp, hero.hp + cfg.restore_heal)
                hero.cooldowns[CD_RESTORE] = cfg.restore_cooldown
                done = ATTACK_RESTORE
        else:
            raise ValueError(f"unknown attack index {attack}")
        executed[hero.id] = done
    return executed


def _weakest_in(entries: Iterable[tuple[int, Cell, int]], origin: Cell,
                rng: int) -> Optional[int]:
    in_range = [(hp, eid) for eid, pos, hp in entries
                if hp > 0 and chebyshev(origin, pos) <= rng]
    return min(in_range)[1] if in_range else None


def _minion_phase(state: GameState) -> None:
    """Phase 3a: each minion attacks an adjacent enemy or advances."""
    cfg = state.config
    grid = passability_grid(state)
    for minion in list(state.minions):
        if minion.hp <= 0:
            continue
        heroes, minions, towers, crystals = _entity_catalog(state, minion.team)
        # Weakest adjacent unit first (waves grind waves, stragglers get
        # finished), then structures.
        target_id = None
        for group in (minions + heroes, towers, crystals):
            target_id = _weakest_in(group, minion.pos, 1)
            if target_id is not None:
                break
        if target_id is not None:
            find_entity(state, target_id).hp -= cfg.minion_damage
            continue
        goal = frontmost_enemy_structure(state, minion.team, minion.lane)
        x, y = minion.pos
        dx = (goal[0] > x) - (goal[0] < x)
        dy = (goal[1] > y) - (goal[1] < y)
        # Forward first, then diagonal detours so own structures on the lane
        # row are walked around rather than jamming the wave.
        candidates = ((x + dx, y + dy), (x + dx, y), (x + dx, y - 1),
                      (x + dx, y + 1), (x, y + dy))
        seen: set[Cell] = {(x, y)}
        for cand in candidates:
            if cand in seen:
                continue
            seen.add(cand)
            if (0 <= cand[0] < cfg.grid_width and 0 <= cand[1] < cfg.grid_height
                    and grid[cand[1], cand[0]]):
                minion.pos = cand
                break


def _tower_phase(state: GameState) -> None:
    """Phase 3b: each tower shoots the weakest enemy unit (minion or hero) in
    range, so waves soak fire but low heroes who overstay get focused."""
    cfg = state.config
    for tower in state.towers:
        if tower.hp <= 0:
            continue
        heroes, minions, _, _ = _entity_catalog(state, tower.team)
        target_id = _weakest_in(heroes + minions, tower.pos, cfg.tower_range)
        if target_id is not None:
            find_entity(state, target_id).hp -= cfg.tower_damage


def _death_phase(state: GameState, last_damager: dict[int, int],
                 deaths: list[int], tower_falls: list[int]) -> None:
    """Phase 4: respawn timers, then deaths, credit and removals."""
    cfg = state.config

    was_dead = [h for h in state.heroes if not h.alive]
    for hero in was_dead:
        hero.respawn_timer -= 1
        if hero.respawn_timer <= 0:
            occupied = {h.pos for h in state.heroes if h.alive}
            hero.pos = _find_free_near(state, hero.spawn, occupied)
            hero.alive = True
            hero.hp = hero.max_hp
            hero.respawn_timer = 0
            hero.cooldowns = [0] * N_COOLDOWNS

    def credit(entity_id: int, amount: int) -> None:
        killer = last_damager.get(entity_id)
        if killer is not None:
            state.heroes[killer].gold += amount

    for hero in state.heroes:
        if hero.alive and hero.hp <= 0:
            hero.alive = False
            hero.hp = 0
            hero.respawn_timer = cfg.respawn_delay
            deaths[hero.team] += 1
            credit(hero.id, cfg.kill_gold)

    for minion in [m for m in state.minions if m.hp <= 0]:
        credit(minion.id, cfg.minion_gold)
        state.minions.remove(minion)

    for tower in [t for t in state.towers if t.hp <= 0]:
        tower_falls[tower.team] += 1
        credit(tower.id, cfg.kill_gold)
        state.towers.remove(tower)
        state.path_cache.clear()

    for crystal in state.crystals:
        if crystal.hp < 0:
            crystal.hp = 0


def _spawn_waves(state: GameState) -> None:
    """Phase 5: spawn a wave per lane per team on the wave period."""
    cfg = state.config
    if (state.tick + 1) % cfg.minion_wave_period != 0:
        return
    for team in (TEAM_BLUE, TEAM_RED):
        layout = _team_layout(cfg, team)
        for lane, row in enumerate(state.lane_rows):
            current = sum(1 for m in state.minions
                          if m.team == team and m.lane == lane)
            spawn_n = min(cfg.minion_wave_size, MAX_MINIONS_PER_LANE - current)
            for _ in range(max(0, spawn_n)):
                state.minions.append(Minion(
                    id=state.next_entity_id, team=team, lane=lane,
                    pos=(layout["minion_x"], row), hp=cfg.minion_hp,
                ))
                state.next_entity_id += 1


def _skill_point_accrual(state: GameState) -> None:
    cfg = state.config
    if (state.tick + 1) % cfg.skill_point_period != 0:
        return
    for hero in state.heroes:
        if hero.alive and sum(hero.skill_levels) + hero.skill_points < 9:
            hero.skill_points += 1


def _base_restore(state: GameState) -> None:
    """A hero resting beside its own crystal has restore cast for it. This is
    the only healing outside an explicit restore action or a respawn, and it
    burns the same cooldown."""
    cfg = state.config
    for hero in state.heroes:
        if (hero.alive and hero.hp < hero.max_hp
                and hero.cooldowns[CD_RESTORE] == 0
                and chebyshev(hero.pos, state.crystal_of(hero.team).pos) <= 1):
            hero.hp = min(hero.max_hp, hero.hp + cfg.restore_heal)
            hero.cooldowns[CD_RESTORE] = cfg.restore_cooldown


def step(
    state: GameState,
    actions: dict[int, ActionPair],
    macro_commands: Optional[dict[int, tuple]] = None,
) -> tuple[GameState, dict[int, StepEvents]]:
    """Advance one tick. ``actions`` must cover exactly the alive heroes;
    ``macro_commands`` optionally carries purchase / skill-point effects the
    macro layer resolved this tick. Mutates and returns ``state``."""
    if state.done:
        raise ValueError("episode is over; reset before stepping again")
    alive = set(state.alive_hero_ids())
    given = set(actions)
    if given != alive:
        missing, extra = alive - given, given - alive
        parts = []
        if missing:
            parts.append(f"missing actions for alive heroes {sorted(missing)}")
        if extra:
            parts.append(f"actions for dead/unknown heroes {sorted(extra)}")
        raise ValueError("; ".join(parts))

    cfg = state.config
    layout_obs = observation_layout(cfg)
    entry_blocks = {h.id: _core_block(state, h.id, layout_obs) for h in state.heroes}
    gold_before = {h.id: h.gold for h in state.heroes}
    hp_before = {h.id: h.hp for h in state.heroes}

    if macro_commands:
        for hero_id, command in macro_commands.items():
            hero = state.heroes[hero_id] if 0 <= hero_id < len(state.heroes) else None
            if hero is not None and hero.alive:
                _apply_macro_command(state, hero, command)

    last_damager: dict[int, int] = {}
    moves = _hero_moves(state, actions)
    attacks = _hero_attacks(state, actions, last_damager)
    _minion_phase(state)
    _tower_phase(state)

    deaths = [0, 0]
    tower_falls = [0, 0]
    _death_phase(state, last_damager, deaths, tower_falls)
    _spawn_waves(state)
    _skill_point_accrual(state)
    for hero in state.heroes:
        if hero.alive:
            hero.gold += cfg.passive_gold_per_tick
            hero.cooldowns = [max(0, cd - 1) for cd in hero.cooldowns]
    _base_restore(state)

    state.tick += 1
    blue_c, red_c = state.crystal_of(TEAM_BLUE), state.crystal_of(TEAM_RED)
    if blue_c.hp <= 0 or red_c.hp <= 0:
        state.done = True
        if blue_c.hp <= 0 and red_c.hp <= 0:
            state.winner = None
        else:
            state.winner = TEAM_RED if blue_c.hp <= 0 else TEAM_BLUE
    elif state.tick >= cfg.max_ticks:
        state.done = True
        if blue_c.hp != red_c.hp:
            state.winner = TEAM_BLUE if blue_c.hp > red_c.hp else TEAM_RED
        else:
            blue_hp = sum(t.hp for t in state.towers if t.team == TEAM_BLUE)
            red_hp = sum(t.hp for t in state.towers if t.team == TEAM_RED)
            if blue_hp != red_hp:
                state.winner = TEAM_BLUE if blue_hp > red_hp else TEAM_RED
            else:
                state.winner = None

    events: dict[int, StepEvents] = {}
    for hero in state.heroes:
        enemy = 1 - hero.team
        events[hero.id] = StepEvents(
            gold_delta=hero.gold - gold_before[hero.id],
            hp_delta=hero.hp - hp_before[hero.id],
            tower_loss=tower_falls[enemy] - tower_falls[hero.team],
            player_death=deaths[enemy] - deaths[hero.team],
        )
        if hero.id in moves:
            hero.last_action = ActionPair(moves[hero.id], attacks[hero.id])
        hero.prev_block = entry_blocks[hero.id]
    return state, events


def compute_reward(events: StepEvents, weights: RewardWeights) -> float:
    """Dense two-part reward: weighted own gold/hp deltas plus weighted
    team tower and death events."""
    r_self = events.gold_delta * weights.f_m + events.hp_delta * weights.f_h
    r_global = events.tower_loss * weights.f_t + events.player_death * weights.f_d
    return weights.rho1 * r_self + weights.rho2 * r_global


# ---------------------------------------------------------------------------
# Observations


@dataclass(frozen=True)
class ObservationLayout:
    """Slot counts and dimensionality of the observation for one config."""

    n_allies: int
    n_enemies: int
    n_towers_per_team: int
    core_dim: int
    feature_dim: int

    @property
    def spatial_dims(self) -> tuple[tuple[int, int, int], tuple[int, int, int]]:
        return ((OBS_CHANNELS, MINIMAP_SIZE, MINIMAP_SIZE),
                (OBS_CHANNELS, LOCAL_VIEW_SIZE, LOCAL_VIEW_SIZE))


_OWN_BLOCK = 16
_HERO_BLOCK = 5
_TOWER_BLOCK = 4
_CRYSTAL_BLOCK = 6
_MINION_BLOCK = 4
_GLOBAL_BLOCK = 3


_LAYOUTS: dict[tuple[int, int], ObservationLayout] = {}


def observation_layout(cfg: GameConfig) -> ObservationLayout:
    n = cfg.heroes_per_team()
    lanes = cfg.lane_count()
    cached = _LAYOUTS.get((n, lanes))
    if cached is not None:
        return cached
    core = (_OWN_BLOCK
            + _HERO_BLOCK * (n - 1)
            + _HERO_BLOCK * n
            + _TOWER_BLOCK * 2 * lanes
            + _CRYSTAL_BLOCK
            + _MINION_BLOCK * 2 * MINIONS_OBSERVED_PER_SIDE
            + _GLOBAL_BLOCK)
    layout = ObservationLayout(
        n_allies=n - 1,
        n_enemies=n,
        n_towers_per_team=lanes,
        core_dim=core,
        feature_dim=2 * core + N_MOVE + N_ATTACK,
    )
    _LAYOUTS[(n, lanes)] = layout
    return layout


def _rel(a: Cell, b: Cell, cfg: GameConfig) -> tuple[float, float, float]:
    """Normalized (dx, dy, distance) of b relative to a, each in [0, 1]."""
    w, h = cfg.grid_width, cfg.grid_height
    dx = (b[0] - a[0]) / max(w - 1, 1)
    dy = (b[1] - a[1]) / max(h - 1, 1)
    dist = chebyshev(a, b) / max(w - 1, h - 1, 1)
    return (dx + 1.0) / 2.0, (dy + 1.0) / 2.0, min(dist, 1.0)


def _core_block(state: GameState, agent_id: int, layout: ObservationLayout) -> np.ndarray:
    cfg = state.config
    me = state.hero(agent_id)
    mx, my = me.pos
    w1 = max(cfg.grid_width - 1, 1)
    h1 = max(cfg.grid_height - 1, 1)
    dmax = max(w1, h1)
    out: list[float] = []
    push = out.append

    cd_max = (*cfg.skill_cooldowns, cfg.flash_cooldown, cfg.restore_cooldown)
    push(me.hp / me.max_hp)
    push(mx / w1)
    push(my / h1)
    push(min(me.gold / (2.0 * cfg.purchase_cost), 1.0))
    push(min(me.skill_points / 9.0, 1.0))
    for lvl in me.skill_levels:
        push(lvl / 3.0)
    for slot in range(N_COOLDOWNS):
        push(me.cooldowns[slot] / cd_max[slot])
    push(min(me.damage_bonus / (10.0 * cfg.purchase_damage_bonus), 1.0))
    push(1.0 if me.alive else 0.0)
    push(me.respawn_timer / cfg.respawn_delay)

    def rel(px: int, py: int) -> tuple[float, float, float]:
        ax, ay = abs(px - mx), abs(py - my)
        return (((px - mx) / w1 + 1.0) / 2.0,
                ((py - my) / h1 + 1.0) / 2.0,
                min((ax if ax > ay else ay) / dmax, 1.0))

    def hero_slots(candidates: list[Hero], count: int) -> None:
        live = [hh for hh in candidates if hh.alive]
        live.sort(key=lambda hh: (max(abs(hh.pos[0] - mx), abs(hh.pos[1] - my)),
                                  hh.id))
        for k in range(count):
            if k < len(live):
                other = live[k]
                dxn, dyn, dist = rel(*other.pos)
                out.extend((1.0, other.hp / other.max_hp, dxn, dyn, dist))
            else:
                out.extend((0.0, 0.0, 0.0, 0.0, 0.0))

    hero_slots([hh for hh in state.heroes if hh.team == me.team and hh.id != me.id],
               layout.n_allies)
    hero_slots([hh for hh in state.heroes if hh.team != me.team], layout.n_enemies)

    alive_towers = {t.id: t for t in state.towers}
    for team in (me.team, 1 - me.team):
        for tid, t_team, _lane, pos in state.tower_layout:
            if t_team != team:
                continue
            tower = alive_towers.get(tid)
            if tower is not None:
                dxn, dyn, _ = rel(*pos)
                out.extend((1.0, tower.hp / cfg.tower_hp, dxn, dyn))
            else:
                out.extend((0.0, 0.0, 0.0, 0.0))

    for team in (me.team, 1 - me.team):
        crystal = state.crystal_of(team)
        dxn, dyn, _ = rel(*crystal.pos)
        out.extend((crystal.hp / cfg.crystal_hp, dxn, dyn))

    for team in (me.team, 1 - me.team):
        group = [m for m in state.minions if m.team == team]
        group.sort(key=lambda m: (max(abs(m.pos[0] - mx), abs(m.pos[1] - my)),
                                  m.id))
        for k in range(MINIONS_OBSERVED_PER_SIDE):
            if k < len(group):
                m = group[k]
                dxn, dyn, _ = rel(*m.pos)
                out.extend((1.0, m.hp / cfg.minion_hp, dxn, dyn))
            else:
                out.extend((0.0, 0.0, 0.0, 0.0))

    push(state.tick / cfg.max_ticks)
    cap = MAX_MINIONS_PER_LANE * cfg.lane_count()
    own = sum(1 for m in state.minions if m.team == me.team)
    push(min(own / cap, 1.0))
    push(min((len(state.minions) - own) / cap, 1.0))
    arr = np.asarray(out, dtype=np.float64)
    assert arr.shape[0] == layout.core_dim
    return np.clip(arr, 0.0, 1.0, out=arr)


def _paint(grid: np.ndarray, channel: int, gx: int, gy: int, weight: float) -> None:
    if 0 <= gx < grid.shape[2] and 0 <= gy < grid.shape[1]:
        grid[channel, gy, gx] = min(1.0, grid[channel, gy, gx] + weight)


def _spatial_views(state: GameState, me: Hero) -> tuple[np.ndarray, np.ndarray]:
    cfg = state.config
    w, h = cfg.grid_width, cfg.grid_height
    minimap = np.zeros((OBS_CHANNELS, MINIMAP_SIZE, MINIMAP_SIZE), dtype=np.float64)
    local = np.zeros((OBS_CHANNELS, LOCAL_VIEW_SIZE, LOCAL_VIEW_SIZE), dtype=np.float64)
    half = LOCAL_VIEW_SIZE // 2

    def channel_of(team: Optional[int]) -> int:
        if team is None:
            return 2
        return 0 if team == me.team else 1

    units: list[tuple[Optional[int], Cell, float]] = []
    for hh in state.heroes:
        if hh.alive:
            units.append((hh.team, hh.pos, 1.0))
    for m in state.minions:
        units.append((m.team, m.pos, 0.34))
    for t in state.towers:
        units.append((None, t.pos, 1.0))
    for c in state.crystals:
        if c.hp > 0:
            units.append((None, c.pos, 1.0))

    for team, (x, y), weight in units:
        ch = channel_of(team)
        _paint(minimap, ch, x * MINIMAP_SIZE // w, y * MINIMAP_SIZE // h, weight)
        _paint(local, ch, x - me.pos[0] + half, y - me.pos[1] + half, weight)
    return minimap, local


def observe_features(state: GameState, agent_id: int) -> np.ndarray:
    """The flat feature vector of :func:`observe` without the spatial grids
    (the rollout hot path; identical values)."""
    layout = observation_layout(state.config)
    me = state.hero(agent_id)
    core = _core_block(state, agent_id, layout)
    prev = me.prev_block
    if prev is None:
        prev = np.zeros(layout.core_dim, dtype=np.float64)
    onehots = np.zeros(N_MOVE + N_ATTACK, dtype=np.float64)
    if me.last_action is not None:
        onehots[me.last_action.move] = 1.0
        onehots[N_MOVE + me.last_action.attack] = 1.0
    return np.concatenate([core, prev, onehots])


def observe(state: GameState, agent_id: int) -> Observation:
    """Agent view: current core block, previous-tick core block and the last
    executed action as one-hots, plus coarse minimap / local occupancy."""
    features = observe_features(state, agent_id)
    minimap, local = _spatial_views(state, state.hero(agent_id))
    return Observation(features=features, minimap=minimap, local_view=local)


# ---------------------------------------------------------------------------
# Scripted opponents


def tower_exposed(state: GameState, team: int, cell: Cell) -> bool:
    """True when standing on ``cell`` draws unanswered enemy tower fire: some
    enemy tower covers the cell and no friendly minion is soaking it."""
    rng = state.config.tower_range
    for tower in state.towers:
        if tower.team == team or chebyshev(cell, tower.pos) > rng:
            continue
        shielded = any(m.team == team and chebyshev(m.pos, tower.pos) <= rng
                       for m in state.minions)
        if not shielded:
            return True
    return False


def _push_step(state: GameState, hero: Hero, goal: Cell) -> int:
    """Advance toward the goal, holding position rather than stepping into
    uncovered tower fire (pushing bots wait for their wave, they never feed)."""
    direction = astar_step(state, hero.pos, goal)
    if direction is None or direction == MOVE_STAY:
        return MOVE_STAY
    dx, dy = MOVE_DELTAS[direction]
    target = (hero.pos[0] + dx, hero.pos[1] + dy)
    if tower_exposed(state, hero.team, target):
        return MOVE_STAY
    return direction


def _best_attack(state: GameState, hero: Hero) -> int:
    """Highest-damage attack-head index with a live target in range."""
    cfg = state.config
    options: list[tuple[int, int]] = []
    for slot in range(3):
        if hero.skill_levels[slot] >= 1 and hero.cooldowns[slot] == 0:
            if weakest_enemy(state, hero.id, cfg.skill_range[slot]) is not None:
                options.append((_skill_damage(cfg, hero, slot), ATTACK_SKILL_1 + slot))
    if weakest_enemy(state, hero.id, cfg.attack_range) is not None:
        options.append((cfg.basic_attack_damage + hero.damage_bonus, ATTACK_BASIC))
    if not options:
        return ATTACK_STAY
    return max(options)[1]


def scripted_opponent(state: GameState, agent_id: int, level: str) -> ActionPair:
    """Rule policy for the built-in opponent.

    entry: push the lane and basic-attack whatever is in range; never
    retreats, never uses skills. easy: entry plus skills off cooldown.
    medium: easy plus retreating below 30% hp (and, via
    :func:`scripted_commands`, purchasing).
    """
    if level not in OPPONENT_LEVELS:
        raise ValueError(f"unknown opponent level {level!r}")
    cfg = state.config
    hero = state.hero(agent_id)
    if not hero.alive:
        raise ValueError(f"hero {agent_id} is dead")

    if level == "entry":
        attack = (ATTACK_BASIC
                  if weakest_enemy(state, hero.id, cfg.attack_range) is not None
                  else ATTACK_STAY)
    else:
        attack = _best_attack(state, hero)

    retreating = level == "medium" and hero.hp < RETREAT_HP_FRAC * hero.max_hp
    if retreating:
        move = astar_step(state, hero.pos, state.crystal_of(hero.team).pos)
        move = MOVE_STAY if move is None else move
    elif weakest_enemy(state, hero.id, cfg.attack_range) is not None:
        move = MOVE_STAY
    else:
        goal = frontmost_enemy_structure(state, hero.team, hero.lane)
        move = _push_step(state, hero, goal)
    return ActionPair(move, attack)


def scripted_commands(state: GameState, agent_id: int, level: str) -> Optional[tuple]:
    """Out-of-band purchase / skill-point behaviour for scripted heroes."""
    hero = state.hero(agent_id)
    if not hero.alive or level == "entry":
        return None
    upgradable = [s for s in range(3) if hero.skill_levels[s] < 3]
    if hero.skill_points > 0 and upgradable:
        slot = min(upgradable, key=lambda s: (hero.skill_levels[s], s))
        return (MACRO_CMD_SKILL_POINT, slot)
    if level == "medium" and hero.gold >= state.config.purchase_cost:
        return (MACRO_CMD_PURCHASE,)
    return None


# ---------------------------------------------------------------------------
# Introspection helpers


def state_digest(state: GameState) -> str:
    """Stable hash of all dynamic state, for determinism checks."""
    payload = (
        state.tick, state.done, state.winner, state.rng_state,
        tuple((h.id, h.team, h.lane, h.pos, h.hp, h.gold, h.skill_points,
               tuple(h.skill_levels), tuple(h.cooldowns), h.damage_bonus,
               h.alive, h.respawn_timer,
               None if h.last_action is None else (h.last_action.move,
                                                   h.last_action.attack),
               None if h.prev_block is None else h.prev_block.tobytes())
              for h in state.heroes),
        tuple((t.id, t.team, t.lane, t.pos, t.hp) for t in state.towers),
        tuple((c.id, c.team, c.pos, c.hp) for c in state.crystals),
        tuple((m.id, m.team, m.lane, m.pos, m.hp) for m in state.minions),
        state.next_entity_id,
    )
    digest = hashlib.sha256(repr(payload).encode()).hexdigest()
    return digest


class TraceWriter:
    """Optional newline-delimited episode trace for debugging."""

    def __init__(self, stream: IO[str]):
        self._stream = stream

    def record(self, tick: int, agent_id: int, action: ActionPair,
               reward: float, events: StepEvents) -> None:
        self._stream.write(json.dumps({
            "tick": tick,
            "agent": agent_id,
            "move": action.move,
            "attack": action.attack,
            "reward": reward,
            "gold_delta": events.gold_delta,
            "hp_delta": events.hp_delta,
            "tower_loss": events.tower_loss,
            "player_death": events.player_death,
        }, separators=(",", ":")) + "\n")
