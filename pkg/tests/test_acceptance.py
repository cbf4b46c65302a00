"""Acceptance gate: every criterion prints one PASS/FAIL line.

Criteria 1-8 are exact or property-based and run in seconds. Criteria 9-12
train real agents at the default desk budgets (several minutes each, shared
across criteria through session fixtures), then check the directional
claims: hierarchical beats flat, rewards trend up and settle, 5v5 wins
big vs the entry team, and every single-switch ablation costs win rate.
"""

import csv
import io
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from lanecraft.bench import (
    RunConfig,
    evaluate_checkpoint,
    train,
)
from lanecraft.config import RewardWeights, default_config
from lanecraft.learner import (
    EpisodicMemory,
    HyperParams,
    Transition,
    annotate_memory,
    batch_arrays,
    clipped_surrogate,
    compute_returns_and_advantages,
    evaluate_batch,
    quantize_key,
    total_loss,
)
from lanecraft.macro import generate_dataset, train_bc
from lanecraft.net import (
    NetConfig,
    forward,
    gradient_check,
    init_params,
    mask_and_normalize,
    masked_log_softmax,
)
from lanecraft.pathing import PathQuery, astar
from lanecraft.sim import StepEvents, compute_reward, observation_layout

from test_pathing import dijkstra_cost

# Desk-scale default training budgets used by the directional criteria.
SEEDS = (1, 2, 3)
BUDGET_1V1 = dict(rounds=2200, workers=10, steps_per_worker=150)
BUDGET_5V5 = dict(rounds=450, workers=8, steps_per_worker=120)
EVAL_GAMES_1V1 = 100
EVAL_GAMES_5V5 = 50


def report(num: int, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {detail}")
    assert ok, f"criterion {num} failed: {detail}"


# ---------------------------------------------------------------------------
# 1. Masking suite


def test_criterion_1_masking_suite():
    rng = np.random.default_rng(1)
    t0 = time.time()
    for _ in range(10_000):
        size = int(rng.integers(2, 17))
        probs = rng.random(size)
        mask = rng.random(size) < 0.5
        if not mask.any():
            mask[int(rng.integers(size))] = True
        out = mask_and_normalize(probs, mask)
        assert abs(out.sum() - 1.0) <= 1e-6
        assert (out[~mask] == 0.0).all()
        again = mask_and_normalize(out, mask)
        assert np.max(np.abs(again - out)) <= 1e-12
        if probs[mask].sum() > 0:
            allowed = np.flatnonzero(mask)
            assert allowed[int(np.argmax(probs[mask]))] == int(np.argmax(out))
    elapsed = time.time() - t0
    report(1, elapsed < 1.0,
           f"10k masked renormalizations sum/zero/idempotent/argmax ok "
           f"in {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 2. Loss identities


def _sampled_batch(params, hp, n=32, seed=0, with_memory=True):
    rng = np.random.default_rng(seed)
    cfg = params.net_config
    out = []
    for i in range(n):
        feats = rng.random(cfg.feature_dim)
        move_mask = rng.random(9) < 0.7
        move_mask[8] = True
        attack_mask = rng.random(7) < 0.7
        attack_mask[0] = True
        lm, la, value = forward(params, feats)
        lpm, pm = masked_log_softmax(lm.reshape(1, -1), move_mask.reshape(1, -1))
        lpa, pa = masked_log_softmax(la.reshape(1, -1), attack_mask.reshape(1, -1))
        move = int(rng.choice(9, p=pm[0]))
        attack = int(rng.choice(7, p=pa[0]))
        out.append(Transition(
            features=feats, move_mask=move_mask, attack_mask=attack_mask,
            move=move, attack=attack, logp_move=float(lpm[0, move]),
            logp_attack=float(lpa[0, attack]), value=value,
            reward=float(rng.normal()), done=bool(i % 8 == 7),
            worker=0, episode=i // 8, agent=0))
    compute_returns_and_advantages(out, hp)
    if with_memory:
        memory = EpisodicMemory(hp.memory_capacity)
        annotate_memory(_sampled_batch(params, hp, n, seed + 999, False),
                        memory, hp)
        annotate_memory(out, memory, hp)
    return out


def test_criterion_2_loss_identities():
    hp = HyperParams()
    params = init_params(NetConfig(feature_dim=8, hidden=(12, 12)), seed=0)
    worst = 0.0
    for seed in range(8):
        batch = _sampled_batch(params, hp, seed=seed)
        b = total_loss(params, batch, hp)
        worst = max(
            worst,
            abs(hp.w1 * b.l_v + hp.w2 * b.n_m + b.l_mp + hp.w3 * b.s_m - b.l_m),
            abs(hp.w1 * b.l_v + hp.w2 * b.n_a + b.l_ap + hp.w3 * b.s_a - b.l_a),
            abs(b.l_m + b.l_a - b.l_total),
        )
    assert worst <= 1e-9

    # ratio = 1 -> surrogate equals the advantage exactly
    rng = np.random.default_rng(0)
    adv = rng.normal(size=1000)
    surr = clipped_surrogate(np.ones(1000), adv, hp.epsilon_clip)
    assert np.array_equal(surr, adv)

    # uniform-over-k entropy equals ln k
    ent_err = 0.0
    for k in (2, 4, 9, 7):
        mask = np.zeros((1, 9), dtype=bool)
        mask[0, :k] = True
        probs = np.where(mask, 1.0 / k, 0.0)
        from lanecraft.learner import entropy_loss

        ent_err = max(ent_err, abs(entropy_loss(probs, mask) - np.log(k)))
    assert ent_err <= 1e-9
    report(2, True,
           f"recomposition within {worst:.1e}, identity surrogate exact, "
           f"uniform entropy within {ent_err:.1e}")


# ---------------------------------------------------------------------------
# 3. Memory suite


def test_criterion_3_memory_suite():
    rng = np.random.default_rng(3)
    mem = EpisodicMemory(capacity=1_000_000)
    naive = {}
    for _ in range(20_000):
        key = int(rng.integers(0, 2_000))
        ret = float(rng.normal() * 10)
        expected = max(naive.get(key, ret), ret)
        assert mem.target(key, ret) == expected
        mem.insert(key, ret)
        naive[key] = expected
    assert len(mem) == len(naive)
    for key, value in naive.items():
        assert mem.get(key) == value

    # monotonicity under a fresh 1e5-insert stream
    mem2 = EpisodicMemory(capacity=200_000)
    best = {}
    for _ in range(100_000):
        key = int(rng.integers(0, 700))
        ret = float(rng.normal())
        mem2.insert(key, ret)
        prev = best.get(key, -np.inf)
        best[key] = max(prev, ret)
        assert mem2.get(key) >= prev
    report(3, True, "max-merge/otherwise semantics match the naive oracle on "
                    "20k ops; monotone under 1e5 inserts")


# ---------------------------------------------------------------------------
# 4. Gradient check


def test_criterion_4_gradient_check():
    t0 = time.time()
    hp = HyperParams()
    params = init_params(NetConfig(feature_dim=8, hidden=(12, 12)), seed=2)
    batch = batch_arrays(_sampled_batch(params, hp, n=24, seed=11))

    def loss_fn(p):
        b, grad = evaluate_batch(p, batch, hp)
        return b.minimized, grad

    err = gradient_check(params, loss_fn, np.random.default_rng(4),
                         n_coords=250, h=1e-4)
    elapsed = time.time() - t0
    report(4, err <= 1e-4 and elapsed < 60.0,
           f"composite-loss gradient vs central differences: max rel err "
           f"{err:.2e} over 250 coords in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 5. Reward oracle


def test_criterion_5_reward_oracle():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(10_000):
        ev = StepEvents(int(rng.integers(-500, 500)),
                        int(rng.integers(-300, 300)),
                        int(rng.integers(-3, 4)), int(rng.integers(-5, 6)))
        w = RewardWeights(*(float(rng.normal()) for _ in range(6)))
        independent = (w.rho1 * (ev.gold_delta * w.f_m + ev.hp_delta * w.f_h)
                       + w.rho2 * (ev.tower_loss * w.f_t
                                   + ev.player_death * w.f_d))
        worst = max(worst, abs(compute_reward(ev, w) - independent))
    report(5, worst <= 1e-12, f"10k random events, max deviation {worst:.1e}")


# ---------------------------------------------------------------------------
# 6. A* optimality


def test_criterion_6_astar_optimality():
    rng = np.random.default_rng(6)
    checked = 0
    worst = 0.0
    while checked < 200:
        w = int(rng.integers(5, 21))
        h = int(rng.integers(5, 21))
        grid = rng.random((h, w)) >= 0.2
        start = (int(rng.integers(w)), int(rng.integers(h)))
        goal = (int(rng.integers(w)), int(rng.integers(h)))
        if not grid[start[1], start[0]]:
            continue
        checked += 1
        path = astar(PathQuery(grid, start, goal))
        oracle = dijkstra_cost(grid, start, goal)
        if oracle is None:
            assert path is None
        else:
            assert path is not None
            worst = max(worst, abs(path.cost - oracle))
    report(6, worst <= 1e-9,
           f"200 random grids, max |A* - Dijkstra| = {worst:.1e}")


# ---------------------------------------------------------------------------
# Session pipeline fixtures for criteria 7-12


@pytest.fixture(scope="session")
def assets_1v1(tmp_path_factory):
    root = tmp_path_factory.mktemp("acc_1v1")
    data = generate_dataset(default_config("1v1"), episodes=300, seed=100)
    model, metrics = train_bc(data, epochs=30, lr=0.05, seed=0)
    assert metrics["test_accuracy"] >= 0.95
    path = root / "bc_1v1.npz"
    model.save(path)
    return {"bc_model": str(path), "root": root}


@pytest.fixture(scope="session")
def assets_5v5(tmp_path_factory):
    root = tmp_path_factory.mktemp("acc_5v5")
    data = generate_dataset(default_config("5v5"), episodes=60, seed=100)
    model, metrics = train_bc(data, epochs=20, lr=0.05, seed=0)
    assert metrics["test_accuracy"] >= 0.95
    path = root / "bc_5v5.npz"
    model.save(path)
    return {"bc_model": str(path), "root": root}


def _run_1v1(assets, name, seed, **switches):
    run = RunConfig(mode="1v1", opponent="entry", seed=seed,
                    out_dir=str(assets["root"] / f"{name}_s{seed}"),
                    bc_model=assets["bc_model"] if switches.get(
                        "use_macro", True) else "",
                    checkpoint_every=0, **BUDGET_1V1)
    for key, value in switches.items():
        setattr(run, key, value)
    result = train(run)
    rep = evaluate_checkpoint(run, str(result.final_checkpoint),
                              EVAL_GAMES_1V1, seed=seed + 5000)
    return run, result, rep


@pytest.fixture(scope="session")
def trained_1v1(assets_1v1):
    """Full method and the three single-switch ablations, three seeds each."""
    table = {}
    for name, switches in (
        ("full", {}),
        ("no_macro", {"use_macro": False}),
        ("no_global_reward", {"use_global_reward": False}),
        ("no_self_learning", {"use_self_learning": False}),
    ):
        rows = []
        for seed in SEEDS:
            rows.append(_run_1v1(assets_1v1, name, seed, **switches))
        table[name] = rows
    return table


def _mean_rate(rows):
    return float(np.mean([rep.win_rate for _, _, rep in rows]))


# ---------------------------------------------------------------------------
# 7. Determinism of a smoke train run


def test_criterion_7_train_determinism(assets_1v1):
    def smoke(name):
        run = RunConfig(mode="1v1", opponent="entry", seed=77,
                        out_dir=str(assets_1v1["root"] / name),
                        bc_model=assets_1v1["bc_model"], rounds=40,
                        workers=2, steps_per_worker=100, episodes=5,
                        checkpoint_every=0)
        return train(run)

    a = smoke("det_a")
    b = smoke("det_b")
    identical = (a.metrics_csv.read_bytes() == b.metrics_csv.read_bytes()
                 and a.episodes_csv.read_bytes() == b.episodes_csv.read_bytes())
    report(7, identical and a.episodes_done >= 5,
           f"two 5-episode smoke runs, byte-identical metrics "
           f"({a.episodes_done} episodes)")


# ---------------------------------------------------------------------------
# 8. Ablation wiring


def test_criterion_8_ablation_wiring(assets_1v1):
    hp_flag = HyperParams(use_self_learning=False)
    hp_w3 = HyperParams(use_self_learning=True, w3=0.0)
    params = init_params(NetConfig(feature_dim=8, hidden=(12, 12)), seed=8)
    batch = batch_arrays(_sampled_batch(params, hp_flag, n=24, seed=21,
                                        with_memory=False))
    b1, g1 = evaluate_batch(params, batch, hp_flag)
    b2, g2 = evaluate_batch(params, batch, hp_w3)
    ok = (b1.s_m == 0.0 and b1.s_a == 0.0 and b2.s_m == 0.0 and b2.s_a == 0.0
          and np.array_equal(g1, g2))

    # and the CSV surface: --no-self-learning leaves S columns at zero
    run = RunConfig(mode="1v1", opponent="entry", seed=5,
                    out_dir=str(assets_1v1["root"] / "wiring"),
                    bc_model=assets_1v1["bc_model"], rounds=3, workers=2,
                    steps_per_worker=60, use_self_learning=False,
                    checkpoint_every=0)
    result = train(run)
    rows = list(csv.DictReader(io.StringIO(result.metrics_csv.read_text())))
    csv_ok = all(float(r["s_m"]) == 0.0 and float(r["s_a"]) == 0.0
                 for r in rows)
    report(8, ok and csv_ok,
           "S-terms identically zero and gradients bit-identical to w3=0")


# ---------------------------------------------------------------------------
# 9-12. Directional reproductions


def test_criterion_9_hrl_beats_flat_ppo(trained_1v1):
    hrl = _mean_rate(trained_1v1["full"])
    flat = _mean_rate(trained_1v1["no_macro"])
    detail = (f"HRL {hrl:.2f} vs flat PPO {flat:.2f} over "
              f"{EVAL_GAMES_1V1} games x {len(SEEDS)} seeds")
    report(9, hrl >= 0.85 and (hrl - flat) >= 0.15, detail)


def test_criterion_10_reward_trend(trained_1v1):
    # The claim is about the training curve: the rolling mean episode reward
    # must end clearly above where it started and flatten out (smaller
    # spread of the rolling-mean series over the final tenth than the first).
    window = 50
    ok_all = True
    details = []
    for _, result, _ in trained_1v1["full"]:
        rewards = np.array([float(r["reward"]) for r in
                            csv.DictReader(open(result.episodes_csv))])
        rolling = np.convolve(rewards, np.ones(window) / window, mode="valid")
        n = len(rolling)
        k = max(1, n // 10)
        first = rolling[:k]
        last = rolling[-k:]
        gain = float(last.mean() - first.mean())
        calmer = float(last.std()) < float(first.std())
        ok_all = ok_all and gain >= 0.5 and calmer
        details.append(
            f"gain {gain:+.2f}, curve std {first.std():.2f}->{last.std():.2f}")
    report(10, ok_all, "; ".join(details))


def test_criterion_11_5v5_win_rate(assets_5v5):
    rates = []
    monotone = True
    for seed in SEEDS:
        run = RunConfig(mode="5v5", opponent="entry", seed=seed,
                        out_dir=str(assets_5v5["root"] / f"full5_s{seed}"),
                        bc_model=assets_5v5["bc_model"],
                        checkpoint_every=max(1, BUDGET_5V5["rounds"] // 4),
                        checkpoint_eval_games=12, **BUDGET_5V5)
        result = train(run)
        rep = evaluate_checkpoint(run, str(result.final_checkpoint),
                                  EVAL_GAMES_5V5, seed=seed + 9000)
        rates.append(rep.win_rate)
        ckpt_rates = [float(r["win_rate"]) for r in
                      csv.DictReader(open(result.checkpoint_evals_csv))]
        for prev, cur in zip(ckpt_rates, ckpt_rates[1:]):
            if cur < prev - 0.05:
                monotone = False
    mean_rate = float(np.mean(rates))
    report(11, mean_rate >= 0.90 and monotone,
           f"5v5 vs entry team: {mean_rate:.2f} over {EVAL_GAMES_5V5} games "
           f"x {len(SEEDS)} seeds, checkpoints monotone={monotone}")


def test_criterion_12_ablation_ordering(trained_1v1):
    full = _mean_rate(trained_1v1["full"])
    margins = {}
    ok = True
    for name in ("no_macro", "no_global_reward", "no_self_learning"):
        margin = full - _mean_rate(trained_1v1[name])
        margins[name] = margin
        ok = ok and margin >= 0.05
    detail = "full {:.2f}; margins: ".format(full) + ", ".join(
        f"{k} {v:+.2f}" for k, v in margins.items())
    report(12, ok, detail)
