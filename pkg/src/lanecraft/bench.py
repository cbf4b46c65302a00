"""Training, evaluation and ablation drivers behind the command line.

Every run is deterministic given (config, seed): worker seeds, update
shuffles and evaluation games all derive from the run seed, and CSV floats
are formatted with a fixed precision so reruns are byte-identical.

Metrics CSV columns (one row per update):
    update, episodes_done, l_v, l_mp, l_ap, n_m, n_a, s_m, s_a,
    l_m, l_a, l_total, minimized, mean_episode_reward, memory_size
Episode CSV columns (one row per finished episode):
    episode, worker, ticks, reward, win
Checkpoint-eval CSV columns:
    round, episodes_done, win_rate
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .actions import ActionPair
from .config import (
    GameConfig,
    RewardWeights,
    apply_kv,
    default_config,
    parse_kv_text,
)
from .learner import (
    EpisodicMemory,
    HyperParams,
    annotate_memory,
    compute_returns_and_advantages,
    update,
)
from .macro import (
    MACRO_ADD_SKILL_POINT,
    MACRO_PURCHASE,
    BCMacroPolicy,
    BCModel,
    ExpertMacroPolicy,
    MacroPolicy,
    SchedulerState,
    greedy_micro,
    macro_command,
    macro_to_mask,
    schedule,
    validity_masks,
)
from .net import (
    NetConfig,
    PolicyParams,
    forward,
    greedy_action,
    init_params,
    load_checkpoint,
    masked_distribution,
    save_checkpoint,
)
from .rollout import (
    Worker,
    WorkerConfig,
    _auto_housekeeping,
    collect_round,
    make_workers,
    set_worker_params,
)
from .sim import (
    GameState,
    compute_reward,
    observation_layout,
    observe_features,
    reset,
    scripted_commands,
    scripted_opponent,
    step,
)

FLOAT_FMT = ".10g"


@dataclass
class RunConfig:
    """Knobs for one training / evaluation run, merged from file and flags."""

    mode: str = "1v1"
    opponent: str = "entry"
    seed: int = 0
    out_dir: str = "runs/out"
    use_macro: bool = True
    use_global_reward: bool = True
    use_self_learning: bool = True
    multi_agent: bool = True
    rounds: int = 60
    episodes: int = 0              # optional cap: stop once this many finish
    workers: int = 10
    steps_per_worker: int = 150
    replan_period: int = 10
    checkpoint_every: int = 15     # rounds between checkpoints + win-rate evals
    checkpoint_eval_games: int = 12
    eval_games: int = 100
    bc_model: str = ""
    dataset: str = ""
    bc_epochs: int = 30
    bc_lr: float = 0.05
    expert_episodes: int = 300
    games: int = 100
    learning_rate: float = 3e-4
    minibatch_size: int = 256
    gamma: float = 0.99
    lam: float = 0.95
    value_loss_mode: str = "standard_td"

    def validate(self) -> None:
        if self.mode not in ("1v1", "5v5"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.opponent not in ("entry", "easy", "medium"):
            raise ValueError(f"unknown opponent level {self.opponent!r}")
        if self.rounds < 1 or self.workers < 1 or self.steps_per_worker < 1:
            raise ValueError("rounds, workers and steps_per_worker must be >= 1")

    def hyper_params(self) -> HyperParams:
        return HyperParams(
            gamma=self.gamma, lam=self.lam,
            learning_rate=self.learning_rate,
            minibatch_size=self.minibatch_size,
            value_loss_mode=self.value_loss_mode,
            use_self_learning=self.use_self_learning,
        )

    def reward_weights(self) -> RewardWeights:
        weights = RewardWeights()
        if not self.use_global_reward:
            weights.rho2 = 0.0
        return weights


def load_run_config(path: Optional[str] = None, **overrides) -> RunConfig:
    run = RunConfig()
    if path:
        apply_kv(run, parse_kv_text(Path(path).read_text()))
    for key, value in overrides.items():
        if value is not None:
            setattr(run, key, value)
    run.validate()
    return run


def _fmt(x: float) -> str:
    return format(float(x), FLOAT_FMT)


@dataclass
class EvalReport:
    games: int
    wins: int
    win_rate: float
    ci_low: float
    ci_high: float
    mean_episode_reward: float
    mean_episode_length: float

    def to_csv(self) -> str:
        head = "games,wins,win_rate,ci_low,ci_high,mean_episode_reward,mean_episode_length"
        row = ",".join([str(self.games), str(self.wins), _fmt(self.win_rate),
                        _fmt(self.ci_low), _fmt(self.ci_high),
                        _fmt(self.mean_episode_reward),
                        _fmt(self.mean_episode_length)])
        return head + "\n" + row + "\n"


def wilson_interval(wins: int, games: int, z: float = 1.959963984540054
                    ) -> tuple[float, float]:
    """95% Wilson score interval for a binomial proportion."""
    if games == 0:
        return 0.0, 1.0
    p = wins / games
    denom = 1.0 + z * z / games
    center = (p + z * z / (2 * games)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / games + z * z / (4 * games * games))
    return max(0.0, center - half), min(1.0, center + half)


# ---------------------------------------------------------------------------
# Controllers (evaluation-time action selection)


class RLController:
    """Greedy (argmax) controller around a parameter snapshot."""

    def __init__(self, params_for, macro_policy: Optional[MacroPolicy],
                 replan_period: int = 10):
        self.params_for = params_for
        self.macro_policy = macro_policy
        self.replan_period = replan_period
        self.scheds: dict[int, SchedulerState] = {}

    def begin_episode(self, state: GameState, team: int) -> None:
        self.scheds = {a: SchedulerState(replan_period=self.replan_period)
                       for a in state.team_hero_ids(team)}

    def act(self, state: GameState, agent_id: int
            ) -> tuple[ActionPair, Optional[tuple]]:
        command = None
        if self.macro_policy is not None:
            macro = schedule(self.scheds[agent_id], state, agent_id,
                             self.macro_policy)
            move_mask, attack_mask = macro_to_mask(state, agent_id, macro)
            if (macro.kind in (MACRO_PURCHASE, MACRO_ADD_SKILL_POINT)
                    and self.scheds[agent_id].ticks_in_macro == 1):
                command = macro_command(macro)
        else:
            move_mask, attack_mask = validity_masks(state, agent_id)
            command = _auto_housekeeping(state, agent_id)
        feats = observe_features(state, agent_id)
        move_logits, attack_logits, _ = forward(self.params_for(agent_id),
                                                feats)
        dist = masked_distribution(move_logits, attack_logits,
                                   move_mask, attack_mask)
        return greedy_action(dist), command


class ExpertController:
    """Expert macro rules plus deterministic greedy micro; the strongest
    scripted play available, used for sanity baselines."""

    def __init__(self, replan_period: int = 10):
        self.replan_period = replan_period
        self.policy = ExpertMacroPolicy()
        self.scheds: dict[int, SchedulerState] = {}

    def begin_episode(self, state: GameState, team: int) -> None:
        self.scheds = {a: SchedulerState(replan_period=self.replan_period)
                       for a in state.team_hero_ids(team)}

    def act(self, state, agent_id):
        macro = schedule(self.scheds[agent_id], state, agent_id, self.policy)
        command = None
        if (macro.kind in (MACRO_PURCHASE, MACRO_ADD_SKILL_POINT)
                and self.scheds[agent_id].ticks_in_macro == 1):
            command = macro_command(macro)
        move_mask, attack_mask = macro_to_mask(state, agent_id, macro)
        return greedy_micro(state, agent_id, macro, move_mask, attack_mask), command


def play_game(env_config: GameConfig, controller, opponent_level: str,
              weights: RewardWeights) -> tuple[bool, float, int]:
    """One game: controller drives team 0 greedily, the scripted opponent
    drives team 1. Returns (win, mean episode reward, ticks)."""
    state = reset(env_config)
    controller.begin_episode(state, 0)
    team0 = state.team_hero_ids(0)
    totals = {a: 0.0 for a in team0}
    while not state.done:
        actions: dict[int, ActionPair] = {}
        commands: dict[int, tuple] = {}
        for agent in team0:
            if not state.hero(agent).alive:
                continue
            pair, command = controller.act(state, agent)
            actions[agent] = pair
            if command is not None:
                commands[agent] = command
        for agent in state.team_hero_ids(1):
            if state.hero(agent).alive:
                actions[agent] = scripted_opponent(state, agent, opponent_level)
                cmd = scripted_commands(state, agent, opponent_level)
                if cmd is not None:
                    commands[agent] = cmd
        state, events = step(state, actions, commands)
        for agent in team0:
            totals[agent] += compute_reward(events[agent], weights)
    mean_reward = float(np.mean(list(totals.values())))
    return state.winner == 0, mean_reward, state.tick


def evaluate_controller(controller, mode: str, opponent_level: str,
                        games: int, seed: int,
                        weights: Optional[RewardWeights] = None) -> EvalReport:
    weights = weights or RewardWeights()
    wins = 0
    rewards: list[float] = []
    lengths: list[int] = []
    for g in range(games):
        cfg = default_config(mode, seed=seed * 1_000_003 + 7 * g + 1)
        win, reward, ticks = play_game(cfg, controller, opponent_level, weights)
        wins += int(win)
        rewards.append(reward)
        lengths.append(ticks)
    low, high = wilson_interval(wins, games)
    return EvalReport(
        games=games, wins=wins, win_rate=wins / games if games else 0.0,
        ci_low=low, ci_high=high,
        mean_episode_reward=float(np.mean(rewards)) if rewards else 0.0,
        mean_episode_length=float(np.mean(lengths)) if lengths else 0.0,
    )


def _controller_for(run: RunConfig, params, params_by_agent,
                    macro_policy: Optional[MacroPolicy]):
    def lookup(agent_id: int):
        if params_by_agent is not None:
            return params_by_agent[agent_id]
        return params

    return RLController(lookup, macro_policy, replan_period=run.replan_period)


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainResult:
    out_dir: Path
    final_checkpoint: Path
    metrics_csv: Path
    episodes_csv: Path
    checkpoint_evals_csv: Path
    episodes_done: int
    final_eval: Optional[EvalReport] = None


def _net_config(env_config: GameConfig) -> NetConfig:
    layout = observation_layout(env_config)
    return NetConfig(feature_dim=layout.feature_dim)


def load_bc_policy(run: RunConfig) -> BCMacroPolicy:
    if not run.bc_model:
        raise ValueError(
            "use_macro requires a behaviour-cloned macro model; generate a "
            "dataset with 'gen-expert' and train one with 'train-bc', then "
            "pass --bc-model PATH (or use --no-macro for the flat baseline)")
    path = Path(run.bc_model)
    if not path.exists():
        raise ValueError(
            f"BC model {path} not found; run 'train-bc' first or pass --no-macro")
    return BCMacroPolicy(BCModel.load(path))


def train(run: RunConfig) -> TrainResult:
    """Synchronous rounds of collect + update with periodic checkpoints."""
    run.validate()
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)

    env_config = default_config(run.mode, seed=run.seed)
    hp = run.hyper_params()
    hp.validate()
    weights = run.reward_weights()
    macro_policy = load_bc_policy(run) if run.use_macro else None

    net_config = _net_config(env_config)
    share = run.multi_agent or run.mode == "1v1"
    controlled = list(range(env_config.heroes_per_team()))
    if share:
        params = init_params(net_config, seed=run.seed)
        params_by_agent = None
    else:
        params = None
        params_by_agent = {a: init_params(net_config, seed=run.seed * 97 + a)
                           for a in controlled}

    worker_config = WorkerConfig(
        env_config=env_config,
        steps_per_worker_per_round=run.steps_per_worker,
        seeds=tuple(run.seed * 10_007 + i for i in range(run.workers)),
        worker_count=run.workers,
        opponent_level=run.opponent,
        reward_weights=weights,
        use_macro=run.use_macro,
        replan_period=run.replan_period,
    )
    workers = make_workers(worker_config, params, macro_policy, params_by_agent)
    memory = EpisodicMemory(hp.memory_capacity)
    update_rng = np.random.default_rng(np.uint64(run.seed) + 0xBEEF)

    metrics_path = out / "metrics.csv"
    episodes_path = out / "episodes.csv"
    ckpt_eval_path = out / "checkpoint_evals.csv"
    meta_path = out / "run_meta.json"
    meta = dataclasses.asdict(run)
    meta["value_loss_mode"] = hp.value_loss_mode
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    metrics_rows = ["update,episodes_done,l_v,l_mp,l_ap,n_m,n_a,s_m,s_a,"
                    "l_m,l_a,l_total,minimized,mean_episode_reward,memory_size"]
    episode_rows = ["episode,worker,ticks,reward,win"]
    ckpt_rows = ["round,episodes_done,win_rate"]

    episodes_done = 0
    recent_rewards: list[float] = []
    versions = 0

    def current_version() -> int:
        if share:
            return params.version
        return params_by_agent[0].version

    def eval_now(games: int, eval_seed: int) -> EvalReport:
        controller = _controller_for(run, params, params_by_agent, macro_policy)
        return evaluate_controller(controller, run.mode, run.opponent,
                                   games, eval_seed, weights)

    for round_idx in range(1, run.rounds + 1):
        batch = collect_round(workers, current_version())
        for stat in batch.episode_stats:
            episodes_done += 1
            recent_rewards.append(stat.reward)
            episode_rows.append(f"{episodes_done},{stat.worker},{stat.ticks},"
                                f"{_fmt(stat.reward)},{int(stat.win)}")
        recent = recent_rewards[-20:]
        mean_reward = float(np.mean(recent)) if recent else 0.0

        if hp.use_self_learning and hp.w3 != 0.0:
            compute_returns_and_advantages(batch.transitions, hp)
            annotate_memory(batch.transitions, memory, hp)
        else:
            compute_returns_and_advantages(batch.transitions, hp)

        if share:
            params, breakdown = update(params, batch.transitions, hp, update_rng)
            set_worker_params(workers, params)
        else:
            breakdown = None
            for agent in controlled:
                subset = [t for t in batch.transitions if t.agent == agent]
                if not subset:
                    continue
                params_by_agent[agent], agent_breakdown = update(
                    params_by_agent[agent], subset, hp, update_rng)
                if breakdown is None:
                    breakdown = agent_breakdown
            set_worker_params(workers, None, params_by_agent)

        versions += 1
        row = [str(versions), str(episodes_done)]
        row += [_fmt(v) for v in breakdown.as_row()]
        row += [_fmt(mean_reward), str(len(memory))]
        metrics_rows.append(",".join(row))

        if run.checkpoint_every and round_idx % run.checkpoint_every == 0:
            ckpt = ckpt_dir / f"round_{round_idx:04d}.ckpt"
            save_checkpoint(params if share else params_by_agent[0], ckpt)
            report = eval_now(run.checkpoint_eval_games,
                              run.seed * 31 + round_idx)
            ckpt_rows.append(f"{round_idx},{episodes_done},{_fmt(report.win_rate)}")

        if run.episodes and episodes_done >= run.episodes:
            break

    final_ckpt = out / "final.ckpt"
    save_checkpoint(params if share else params_by_agent[0], final_ckpt)
    if not share:
        for agent in controlled:
            save_checkpoint(params_by_agent[agent],
                            out / f"final_agent{agent}.ckpt")

    metrics_path.write_text("\n".join(metrics_rows) + "\n")
    episodes_path.write_text("\n".join(episode_rows) + "\n")
    ckpt_eval_path.write_text("\n".join(ckpt_rows) + "\n")

    return TrainResult(
        out_dir=out, final_checkpoint=final_ckpt, metrics_csv=metrics_path,
        episodes_csv=episodes_path, checkpoint_evals_csv=ckpt_eval_path,
        episodes_done=episodes_done,
    )


def evaluate_checkpoint(run: RunConfig, checkpoint: str, games: int,
                        seed: int) -> EvalReport:
    params = load_checkpoint(checkpoint)
    expected = _net_config(default_config(run.mode))
    if params.net_config != expected:
        raise ValueError(
            f"checkpoint {checkpoint} was trained for a different observation "
            f"layout ({params.net_config.feature_dim} features, expected "
            f"{expected.feature_dim})")
    macro_policy = load_bc_policy(run) if run.use_macro else None
    by_agent = None
    ckpt_path = Path(checkpoint)
    if not run.multi_agent and run.mode == "5v5":
        by_agent = {}
        for agent in range(default_config(run.mode).heroes_per_team()):
            candidate = ckpt_path.parent / f"final_agent{agent}.ckpt"
            by_agent[agent] = (load_checkpoint(candidate)
                               if candidate.exists() else params)

    def lookup(agent_id: int):
        if by_agent is not None:
            return by_agent[agent_id]
        return params

    controller = RLController(lookup, macro_policy,
                              replan_period=run.replan_period)
    return evaluate_controller(controller, run.mode, run.opponent, games,
                               seed, run.reward_weights())


# ---------------------------------------------------------------------------
# Ablations


ABLATION_GRID_1V1 = (
    ("full", {}),
    ("no_macro", {"use_macro": False}),
    ("no_global_reward", {"use_global_reward": False}),
    ("no_self_learning", {"use_self_learning": False}),
)
ABLATION_GRID_5V5 = ABLATION_GRID_1V1 + (
    ("no_multi_agent", {"multi_agent": False}),
)


def ablate(run: RunConfig, seeds: Optional[list[int]] = None
           ) -> tuple[Path, dict[str, list[float]]]:
    """Train and evaluate the full method and each single-switch ablation
    with shared seeds; returns the table path and per-config win rates."""
    seeds = seeds or [run.seed]
    grid = ABLATION_GRID_1V1 if run.mode == "1v1" else ABLATION_GRID_5V5
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results: dict[str, list[float]] = {}

    for name, switches in grid:
        rates = []
        for seed in seeds:
            sub = replace(run, seed=seed,
                          out_dir=str(out / f"{name}_seed{seed}"), **switches)
            result = train(sub)
            report = evaluate_checkpoint(
                sub, str(result.final_checkpoint), run.eval_games,
                seed=seed + 5000)
            rates.append(report.win_rate)
        results[name] = rates

    table = out / "ablation_table.md"
    lines = [
        f"| configuration | win rate vs {run.opponent} (mean of {len(seeds)} seeds) | per-seed |",
        "|---|---|---|",
    ]
    csv_lines = ["configuration,mean_win_rate," +
                 ",".join(f"seed_{s}" for s in seeds)]
    for name, rates in results.items():
        mean = float(np.mean(rates))
        per_seed = ", ".join(_fmt(r) for r in rates)
        lines.append(f"| {name} | {_fmt(mean)} | {per_seed} |")
        csv_lines.append(f"{name},{_fmt(mean)}," + ",".join(_fmt(r) for r in rates))
    table.write_text("\n".join(lines) + "\n")
    (out / "ablation_table.csv").write_text("\n".join(csv_lines) + "\n")
    return table, results
