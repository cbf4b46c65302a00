"""Game configuration, reward weights and the plain-text config file format.

Config files are line-oriented ``key = value`` text. ``#`` starts a comment,
blank lines are ignored, and list-valued fields use comma-separated entries:

    mode = 1v1
    max_ticks = 600
    skill_damage = 25, 35, 50

Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

MODE_1V1 = "1v1"
MODE_5V5 = "5v5"

TEAM_BLUE = 0
TEAM_RED = 1


@dataclass
class GameConfig:
    """Everything that parameterises one battle.

    Defaults (via :func:`default_config`) are sized so a 1v1 game between
    reasonable policies ends by crystal kill in roughly 200-600 ticks.
    """

    mode: str = MODE_1V1
    grid_width: int = 15
    grid_height: int = 15
    max_ticks: int = 600
    minion_wave_period: int = 25
    minion_wave_size: int = 3
    minion_hp: int = 50
    minion_damage: int = 5
    hero_base_hp: int = 200
    tower_hp: int = 150
    crystal_hp: int = 100
    basic_attack_damage: int = 10
    skill_damage: tuple[int, int, int] = (30, 40, 60)
    tower_damage: int = 30
    attack_range: int = 2
    tower_range: int = 3
    skill_range: tuple[int, int, int] = (3, 4, 5)
    skill_cooldowns: tuple[int, int, int] = (20, 30, 60)
    flash_cooldown: int = 150
    restore_cooldown: int = 40
    restore_heal: int = 100
    flash_distance: int = 3
    purchase_cost: int = 100
    purchase_damage_bonus: int = 5
    kill_gold: int = 100
    minion_gold: int = 30
    passive_gold_per_tick: int = 0
    skill_point_period: int = 30
    respawn_delay: int = 30
    seed: int = 0

    def heroes_per_team(self) -> int:
        return 1 if self.mode == MODE_1V1 else 5

    def lane_count(self) -> int:
        return 1 if self.mode == MODE_1V1 else 3

    def validate(self) -> None:
        if self.mode not in (MODE_1V1, MODE_5V5):
            raise ValueError(f"unknown mode {self.mode!r}, expected '1v1' or '5v5'")
        if self.grid_width < 1 or self.grid_height < 1:
            raise ValueError("grid dimensions must be >= 1")
        if self.max_ticks <= 0:
            raise ValueError("max_ticks must be > 0")
        for name in ("minion_wave_period", "minion_wave_size", "respawn_delay",
                     "skill_point_period", "flash_distance"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        positive = [
            ("hero_base_hp", self.hero_base_hp),
            ("tower_hp", self.tower_hp),
            ("crystal_hp", self.crystal_hp),
            ("minion_hp", self.minion_hp),
            ("minion_damage", self.minion_damage),
            ("basic_attack_damage", self.basic_attack_damage),
            ("tower_damage", self.tower_damage),
            ("restore_heal", self.restore_heal),
        ]
        positive += [(f"skill_damage[{i}]", d) for i, d in enumerate(self.skill_damage)]
        for name, value in positive:
            if value <= 0:
                raise ValueError(f"{name} must be > 0, got {value}")
        max_dim = max(self.grid_width, self.grid_height)
        ranges = [("attack_range", self.attack_range), ("tower_range", self.tower_range)]
        ranges += [(f"skill_range[{i}]", r) for i, r in enumerate(self.skill_range)]
        for name, value in ranges:
            if not 1 <= value <= max_dim:
                raise ValueError(f"{name} must be in [1, {max_dim}], got {value}")
        for name in ("skill_cooldowns", "flash_cooldown", "restore_cooldown"):
            value = getattr(self, name)
            values = value if isinstance(value, tuple) else (value,)
            if any(v < 1 for v in values):
                raise ValueError(f"{name} entries must be >= 1")
        if min(self.purchase_cost, self.purchase_damage_bonus, self.kill_gold,
               self.minion_gold) < 1 or self.passive_gold_per_tick < 0:
            raise ValueError("gold parameters must be positive")


@dataclass
class RewardWeights:
    """Coefficients of the dense two-part reward.

    The per-tick reward is
    ``rho1 * (gold_delta * f_m + hp_delta * f_H)
      + rho2 * (tower_loss * f_t + player_death * f_d)``.
    Defaults put per-tick terms around 0.01-0.1 and tower/death events at
    order one.
    """

    rho1: float = 1.0
    rho2: float = 1.0
    f_m: float = 0.01
    f_h: float = 0.002
    f_t: float = 2.0
    f_d: float = 1.0

    def validate(self) -> None:
        import math

        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise ValueError(f"reward weight {f.name} must be finite")


def default_config(mode: str = MODE_1V1, seed: int = 0) -> GameConfig:
    """Preset config for a mode; 5v5 scales the map and episode length up."""
    if mode == MODE_1V1:
        cfg = GameConfig(mode=MODE_1V1, seed=seed)
    elif mode == MODE_5V5:
        cfg = GameConfig(
            mode=MODE_5V5,
            grid_width=33,
            grid_height=33,
            max_ticks=900,
            crystal_hp=150,
            seed=seed,
        )
    else:
        raise ValueError(f"unknown mode {mode!r}")
    cfg.validate()
    return cfg


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines into a string dict."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _coerce(raw: str, target: Any) -> Any:
    """Coerce a raw string to the type of an existing dataclass value."""
    if isinstance(target, bool):
        lowered = raw.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(target, int):
        return int(raw)
    if isinstance(target, float):
        return float(raw)
    if isinstance(target, tuple):
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        if len(parts) != len(target):
            raise ValueError(f"expected {len(target)} comma-separated values, got {raw!r}")
        return tuple(type(t)(p) for t, p in zip(target, parts))
    return raw


def apply_kv(obj: Any, kv: dict[str, str]) -> Any:
    """Apply parsed key/value overrides onto a dataclass instance."""
    names = {f.name for f in dataclasses.fields(obj)}
    for key, raw in kv.items():
        if key not in names:
            raise ValueError(f"unknown config key {key!r}")
        try:
            setattr(obj, key, _coerce(raw, getattr(obj, key)))
        except ValueError as exc:
            raise ValueError(f"config key {key!r}: {exc}") from exc
    return obj


def load_game_config(path: str | Path) -> GameConfig:
    """Load a GameConfig from a key-value file; ``mode`` selects the preset."""
    kv = parse_kv_text(Path(path).read_text())
    mode = kv.get("mode", MODE_1V1)
    cfg = default_config(mode)
    apply_kv(cfg, kv)
    cfg.validate()
    return cfg


def dump_kv(obj: Any) -> str:
    """Render a dataclass as a loadable key-value file."""
    lines = []
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, tuple):
            value = ", ".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
