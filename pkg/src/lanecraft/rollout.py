"""Experience collection across many environments plus the wire protocol.

Workers own independent environment instances and share one immutable
parameter snapshot per round (all controlled agents run the same network).
Rounds are synchronous: collect everywhere, then update once, so the
policy-ratio in the surrogate stays well defined. Workers are pure given
their seed and the snapshot, which makes parallel and sequential execution
produce identical batches.

The optional transport frames messages as: 4-byte big-endian payload length,
1-byte message type (0 = parameter snapshot, 1 = transition block,
2 = heartbeat, 3 = shutdown), then the payload. Transition blocks pack each
sample as fixed-width little-endian fields in the order documented on
``serialize_transitions``.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .actions import ActionPair, N_ATTACK, N_MOVE
from .config import GameConfig, RewardWeights
from .learner import Transition
from .macro import (
    MACRO_ADD_SKILL_POINT,
    MACRO_PURCHASE,
    MacroPolicy,
    SchedulerState,
    _lowest_upgradable_slot,
    macro_command,
    macro_to_mask,
    schedule,
    validity_masks,
)
from .net import PolicyParams, forward, masked_distribution, sample_action
from .sim import (
    MACRO_CMD_PURCHASE,
    MACRO_CMD_SKILL_POINT,
    GameState,
    compute_reward,
    observe_features,
    reset,
    scripted_commands,
    scripted_opponent,
    step,
)

MSG_PARAMS = 0
MSG_TRANSITIONS = 1
MSG_HEARTBEAT = 2
MSG_SHUTDOWN = 3
_VALID_TYPES = (MSG_PARAMS, MSG_TRANSITIONS, MSG_HEARTBEAT, MSG_SHUTDOWN)
MAX_PAYLOAD = 2**31 - 1


class FramingError(ValueError):
    """Raised when a byte stream does not parse as a frame."""


class ProtocolError(ValueError):
    """Raised when a frame is well-formed but semantically invalid."""


@dataclass
class WorkerConfig:
    env_config: GameConfig
    steps_per_worker_per_round: int
    seeds: tuple[int, ...]
    worker_count: int = 10
    opponent_level: str = "entry"
    reward_weights: RewardWeights = field(default_factory=RewardWeights)
    use_macro: bool = True
    replan_period: int = 10

    def validate(self) -> None:
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")
        if len(self.seeds) != self.worker_count:
            raise ValueError("need exactly one seed per worker")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("worker seeds must be distinct")
        if self.steps_per_worker_per_round < 1:
            raise ValueError("steps_per_worker_per_round must be >= 1")


@dataclass
class EpisodeStats:
    worker: int
    episode: int
    ticks: int
    reward: float  # mean over controlled agents of their episode return
    win: bool
    winner: Optional[int]


@dataclass
class SampleBatch:
    """Transitions from one synchronous round. ``version`` is the parameter
    snapshot every worker executed; mixing versions in one batch is
    impossible by construction since workers only swap snapshots between
    rounds."""

    version: int
    transitions: list[Transition]
    episode_stats: list[EpisodeStats]


def _auto_housekeeping(state: GameState, agent_id: int) -> Optional[tuple]:
    """Skill-point and purchase autopilot for the macro-free baseline, so the
    flat policy is not crippled by decisions outside its action space."""
    hero = state.hero(agent_id)
    slot = _lowest_upgradable_slot(hero)
    if hero.skill_points > 0 and slot is not None:
        return (MACRO_CMD_SKILL_POINT, slot)
    if hero.gold >= state.config.purchase_cost:
        return (MACRO_CMD_PURCHASE,)
    return None


class Worker:
    """One environment plus per-agent schedulers and an action-sampling rng.

    ``run_round`` advances ``steps`` environment ticks, recording one
    transition per controlled (team 0) living hero per tick. Episodes roll
    over automatically; trailing transitions are bootstrapped with the value
    of the observation after the last step.
    """

    def __init__(self, index: int, config: WorkerConfig,
                 params_for: Callable[[int], PolicyParams],
                 macro_policy: Optional[MacroPolicy]):
        config.validate()
        self.index = index
        self.config = config
        self.params_for = params_for
        self.macro_policy = macro_policy
        self.rng = np.random.default_rng(np.uint64(config.seeds[index]))
        self.episode_index = 0
        self._episode_counter = 0
        self.state: GameState = self._fresh_state()
        self.scheds: dict[int, SchedulerState] = {}
        self._episode_rewards: dict[int, float] = {}
        self._open: dict[int, Transition] = {}
        self._reset_episode_tracking()

    def _fresh_state(self) -> GameState:
        seed = self.config.seeds[self.index] * 1_000_003 + self._episode_counter
        self._episode_counter += 1
        return reset(replace(self.config.env_config, seed=seed))

    def _reset_episode_tracking(self) -> None:
        team0 = self.state.team_hero_ids(0)
        self.scheds = {a: SchedulerState(replan_period=self.config.replan_period)
                       for a in team0}
        self._episode_rewards = {a: 0.0 for a in team0}
        self._open = {}

    def _begin_new_episode(self) -> None:
        self.state = self._fresh_state()
        self.episode_index += 1
        self._reset_episode_tracking()

    def run_round(self, steps: int) -> tuple[list[Transition], list[EpisodeStats]]:
        out: list[Transition] = []
        stats: list[EpisodeStats] = []
        for _ in range(steps):
            if self.state.done:
                self._begin_new_episode()
            self._step_once(out, stats)
        # Bootstrap whatever is still open at the round boundary.
        for agent, trans in self._open.items():
            if trans.done:
                continue
            hero = self.state.hero(agent)
            if hero.alive and not self.state.done:
                feats = observe_features(self.state, agent)
                _, _, value = forward(self.params_for(agent), feats)
                trans.next_value = value
            else:
                trans.next_value = 0.0
        return out, stats

    def _step_once(self, out: list[Transition],
                   stats: list[EpisodeStats]) -> None:
        state = self.state
        cfg = self.config
        actions: dict[int, ActionPair] = {}
        commands: dict[int, tuple] = {}
        fresh: dict[int, Transition] = {}

        for agent in state.team_hero_ids(0):
            hero = state.hero(agent)
            if not hero.alive:
                continue
            feats = observe_features(state, agent)
            macro_kind = -1
            if cfg.use_macro:
                macro = schedule(self.scheds[agent], state, agent,
                                 self.macro_policy)
                macro_kind = macro.kind
                move_mask, attack_mask = macro_to_mask(state, agent, macro)
                if (macro.kind in (MACRO_PURCHASE, MACRO_ADD_SKILL_POINT)
                        and self.scheds[agent].ticks_in_macro == 1):
                    cmd = macro_command(macro)
                    if cmd is not None:
                        commands[agent] = cmd
            else:
                move_mask, attack_mask = validity_masks(state, agent)
                cmd = _auto_housekeeping(state, agent)
                if cmd is not None:
                    commands[agent] = cmd
            params = self.params_for(agent)
            move_logits, attack_logits, value = forward(params, feats)
            dist = masked_distribution(move_logits, attack_logits,
                                       move_mask, attack_mask)
            pair, logp_m, logp_a = sample_action(dist, self.rng)
            actions[agent] = pair
            fresh[agent] = Transition(
                features=feats, move_mask=move_mask,
                attack_mask=attack_mask, move=pair.move, attack=pair.attack,
                logp_move=logp_m, logp_attack=logp_a, value=value,
                reward=0.0, done=False, worker=self.index,
                episode=self.episode_index, agent=agent,
                macro_kind=macro_kind,
            )

        for agent in state.team_hero_ids(1):
            if state.hero(agent).alive:
                actions[agent] = scripted_opponent(state, agent,
                                                   cfg.opponent_level)
                cmd = scripted_commands(state, agent, cfg.opponent_level)
                if cmd is not None:
                    commands[agent] = cmd

        state, events = step(state, actions, commands)
        self.state = state

        for agent in state.team_hero_ids(0):
            reward = compute_reward(events[agent], cfg.reward_weights)
            self._episode_rewards[agent] += reward
            trans = fresh.get(agent)
            if trans is not None:
                trans.reward = reward
                prev = self._open.get(agent)
                if prev is not None and not prev.done:
                    prev.next_value = trans.value
                self._open[agent] = trans
                out.append(trans)
            elif agent in self._open:
                # Dead this tick: fold team rewards into the last decision.
                self._open[agent].reward += reward

        if state.done:
            for agent, trans in self._open.items():
                trans.done = True
                trans.next_value = 0.0
            rewards = list(self._episode_rewards.values())
            stats.append(EpisodeStats(
                worker=self.index, episode=self.episode_index,
                ticks=state.tick,
                reward=float(np.mean(rewards)) if rewards else 0.0,
                win=state.winner == 0, winner=state.winner,
            ))


def make_workers(config: WorkerConfig, params: PolicyParams,
                 macro_policy: Optional[MacroPolicy],
                 params_by_agent: Optional[dict[int, PolicyParams]] = None
                 ) -> list[Worker]:
    """Build one Worker per configured seed, all sharing one snapshot (or,
    without parameter sharing, per-agent snapshots)."""
    config.validate()
    if config.use_macro and macro_policy is None:
        raise ValueError("use_macro requires a macro policy")

    def lookup(agent_id: int) -> PolicyParams:
        if params_by_agent is not None:
            return params_by_agent[agent_id]
        return params

    return [Worker(i, config, lookup, macro_policy)
            for i in range(config.worker_count)]


def set_worker_params(workers: Sequence[Worker], params: PolicyParams,
                      params_by_agent: Optional[dict[int, PolicyParams]] = None
                      ) -> None:
    def lookup(agent_id: int) -> PolicyParams:
        if params_by_agent is not None:
            return params_by_agent[agent_id]
        return params

    for w in workers:
        w.params_for = lookup


def collect_round(workers: Sequence[Worker], version: int,
                  parallel: bool = False) -> SampleBatch:
    """Run every worker for its configured step budget and merge the results
    in worker order. Workers that raise are dropped (their partial data is
    discarded); if none survive the round fails."""
    steps = workers[0].config.steps_per_worker_per_round
    results: list[Optional[tuple]] = [None] * len(workers)

    def run(i: int) -> None:
        try:
            results[i] = workers[i].run_round(steps)
        except Exception:  # noqa: BLE001 - worker isolation by design
            results[i] = None

    if parallel and len(workers) > 1:
        with ThreadPoolExecutor(max_workers=len(workers)) as pool:
            list(pool.map(run, range(len(workers))))
    else:
        for i in range(len(workers)):
            run(i)

    transitions: list[Transition] = []
    stats: list[EpisodeStats] = []
    survivors = 0
    for result in results:
        if result is None:
            continue
        survivors += 1
        transitions.extend(result[0])
        stats.extend(result[1])
    if survivors == 0:
        raise RuntimeError("all workers failed during the round")
    return SampleBatch(version=version, transitions=transitions,
                       episode_stats=stats)


# ---------------------------------------------------------------------------
# Wire protocol


@dataclass(frozen=True)
class WireFrame:
    msg_type: int
    payload: bytes


def encode_frame(frame: WireFrame) -> bytes:
    if frame.msg_type not in _VALID_TYPES:
        raise ProtocolError(f"unknown message type {frame.msg_type}")
    if len(frame.payload) > MAX_PAYLOAD:
        raise ProtocolError("payload too large")
    return struct.pack(">IB", len(frame.payload), frame.msg_type) + frame.payload


def decode_frame(data: bytes, offset: int = 0) -> tuple[WireFrame, int]:
    """Decode one frame starting at ``offset``; returns (frame, next offset)."""
    if len(data) - offset < 5:
        raise FramingError("truncated frame header")
    length, msg_type = struct.unpack_from(">IB", data, offset)
    if msg_type not in _VALID_TYPES:
        raise ProtocolError(f"unknown message type {msg_type}")
    end = offset + 5 + length
    if len(data) < end:
        raise FramingError(
            f"declared payload of {length} bytes, only {len(data) - offset - 5} available")
    return WireFrame(msg_type, data[offset + 5:end]), end


def read_frame(stream) -> WireFrame:
    """Read one frame from a file-like object (socket makefile, BytesIO)."""
    header = stream.read(5)
    if len(header) < 5:
        raise FramingError("truncated frame header")
    length, msg_type = struct.unpack(">IB", header)
    if msg_type not in _VALID_TYPES:
        raise ProtocolError(f"unknown message type {msg_type}")
    payload = stream.read(length)
    if len(payload) < length:
        raise FramingError(
            f"declared payload of {length} bytes, only {len(payload)} available")
    return WireFrame(msg_type, payload)


_TRANS_FIXED = struct.Struct("<IIIBBBbHB5d")


def serialize_transitions(batch: SampleBatch, feature_dim: int) -> bytes:
    """Pack a batch as the type-1 payload.

    Header: version u64, count u32, feature_dim u32. Each record then holds,
    little-endian: worker u32, episode u32, agent u32, move u8, attack u8,
    done u8, macro_kind i8, move_mask u16 (bit per index), attack_mask u8,
    then float64 logp_move, logp_attack, value, next_value, reward, then
    feature_dim float64 features.
    """
    parts = [struct.pack("<QII", batch.version, len(batch.transitions), feature_dim)]
    for t in batch.transitions:
        move_bits = 0
        for i in range(N_MOVE):
            if t.move_mask[i]:
                move_bits |= 1 << i
        attack_bits = 0
        for i in range(N_ATTACK):
            if t.attack_mask[i]:
                attack_bits |= 1 << i
        parts.append(_TRANS_FIXED.pack(
            t.worker, t.episode, t.agent, t.move, t.attack, int(t.done),
            t.macro_kind, move_bits, attack_bits,
            t.logp_move, t.logp_attack, t.value, t.next_value, t.reward))
        parts.append(t.features.astype("<f8", copy=False).tobytes())
    return b"".join(parts)


def deserialize_transitions(payload: bytes) -> SampleBatch:
    if len(payload) < 16:
        raise FramingError("transition block too short")
    version, count, feature_dim = struct.unpack_from("<QII", payload, 0)
    offset = 16
    record = _TRANS_FIXED.size + feature_dim * 8
    if len(payload) != 16 + count * record:
        raise FramingError("transition block size mismatch")
    transitions: list[Transition] = []
    for _ in range(count):
        (worker, episode, agent, move, attack, done, macro_kind, move_bits,
         attack_bits, logp_m, logp_a, value, next_value, reward
         ) = _TRANS_FIXED.unpack_from(payload, offset)
        offset += _TRANS_FIXED.size
        features = np.frombuffer(payload, dtype="<f8", count=feature_dim,
                                 offset=offset).copy()
        offset += feature_dim * 8
        move_mask = np.array([(move_bits >> i) & 1 for i in range(N_MOVE)],
                             dtype=bool)
        attack_mask = np.array([(attack_bits >> i) & 1 for i in range(N_ATTACK)],
                               dtype=bool)
        transitions.append(Transition(
            features=features, move_mask=move_mask, attack_mask=attack_mask,
            move=move, attack=attack, logp_move=logp_m, logp_attack=logp_a,
            value=value, reward=reward, done=bool(done),
            next_value=next_value, worker=worker, episode=episode,
            agent=agent, macro_kind=macro_kind,
        ))
    return SampleBatch(version=version, transitions=transitions,
                       episode_stats=[])
