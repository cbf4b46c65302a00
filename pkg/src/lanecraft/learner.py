"""Training core: advantages, composite losses, episodic memory, updates.

Sign convention. The loss breakdown records every term with its natural
sign: value and memory regressions are squared errors (>= 0), entropies are
Shannon entropies (>= 0), clipped surrogates are expectations of
min(ratio*adv, clip(ratio)*adv). The per-head composite is

    L_head = w1 * L_v + w2 * N_head + L_head_p + w3 * S_head

and the total is their sum. The optimizer, however, must MINIMIZE squared
errors while MAXIMIZING the surrogates, so the scalar actually descended is

    J = sum over heads of [ w1 * L_v + w2 * N_head - L_head_p
                            + w3 * (S_sq - S_surr_head) ]

(w2 is negative, so minimizing J already rewards entropy). The breakdown
exposes both views: the composed fields satisfy the additive identities,
``minimized`` is the scalar handed to the optimizer.

The self-learning term regresses the current value estimate toward the best
return ever recorded for the (quantized observation, action) key and adds a
clipped surrogate on the memory advantage A_H = V_H - V.
"""

from __future__ import annotations

import hashlib
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .net import (
    PolicyParams,
    backward_batch,
    forward_batch,
    masked_entropy,
    masked_log_softmax,
)

HEAD_MOVE = "move"
HEAD_ATTACK = "attack"

VALUE_LOSS_STANDARD = "standard_td"
VALUE_LOSS_PAPER = "paper_literal"


@dataclass
class HyperParams:
    gamma: float = 0.99
    lam: float = 0.95
    epsilon_clip: float = 0.2
    w1: float = 0.5
    w2: float = -0.01
    w3: float = 0.1
    learning_rate: float = 3e-4
    optimizer: str = "adam"  # adam | momentum; momentum needs far more steps
    momentum: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs_per_batch: int = 4
    minibatch_size: int = 128
    normalize_advantages: bool = True
    value_loss_mode: str = VALUE_LOSS_STANDARD
    memory_capacity: int = 100_000
    key_quantization: int = 8
    use_self_learning: bool = True

    def validate(self) -> None:
        if not 0.0 <= self.gamma <= 1.0 or not 0.0 <= self.lam <= 1.0:
            raise ValueError("gamma and lam must lie in [0, 1]")
        if self.epsilon_clip <= 0:
            raise ValueError("epsilon_clip must be > 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.value_loss_mode not in (VALUE_LOSS_STANDARD, VALUE_LOSS_PAPER):
            raise ValueError(f"unknown value_loss_mode {self.value_loss_mode!r}")
        if self.minibatch_size < 1 or self.epochs_per_batch < 1:
            raise ValueError("minibatch_size and epochs_per_batch must be >= 1")
        if self.memory_capacity < 1 or self.key_quantization < 1:
            raise ValueError("memory_capacity and key_quantization must be >= 1")
        if self.optimizer not in ("adam", "momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class Transition:
    """One learning sample, annotated in place by the return/advantage and
    memory passes before entering an update."""

    features: np.ndarray
    move_mask: np.ndarray
    attack_mask: np.ndarray
    move: int
    attack: int
    logp_move: float
    logp_attack: float
    value: float
    reward: float
    done: bool
    next_value: float = 0.0
    worker: int = 0
    episode: int = 0
    agent: int = 0
    macro_kind: int = -1
    ret: Optional[float] = None
    adv: Optional[float] = None
    v_h: Optional[float] = None
    adv_h: Optional[float] = None


@dataclass
class LossBreakdown:
    l_v: float
    l_mp: float
    l_ap: float
    n_m: float
    n_a: float
    s_m: float
    s_a: float
    l_m: float
    l_a: float
    l_total: float
    minimized: float

    FIELDS = ("l_v", "l_mp", "l_ap", "n_m", "n_a", "s_m", "s_a",
              "l_m", "l_a", "l_total", "minimized")

    def as_row(self) -> list[float]:
        return [getattr(self, name) for name in self.FIELDS]


# ---------------------------------------------------------------------------
# Episodic memory


def quantize_key(features: np.ndarray, move: int, attack: int, bins: int) -> int:
    """Hash the binned observation plus the action pair into a 64-bit key.

    Collisions are accepted: the max-merge makes them optimistic only.
    """
    q = np.clip((np.clip(features, 0.0, 1.0) * bins).astype(np.int64), 0, bins - 1)
    digest = hashlib.blake2b(
        q.astype(np.uint8).tobytes() + bytes([move, attack, bins & 0xFF]),
        digest_size=8,
    ).digest()
    return int.from_bytes(digest, "little")


class EpisodicMemory:
    """Best discounted return per (state, action) key with bounded size.

    Inserts max-merge, so a stored value never decreases; when full, the
    least recently updated key is evicted.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._store: "OrderedDict[int, float]" = OrderedDict()
        self.insertions = 0

    def __len__(self) -> int:
        return len(self._store)

    def __contains__(self, key: int) -> bool:
        return key in self._store

    def get(self, key: int) -> Optional[float]:
        return self._store.get(key)

    def insert(self, key: int, ret: float) -> None:
        if not np.isfinite(ret):
            raise ValueError("return must be finite")
        if key in self._store:
            self._store[key] = max(self._store[key], ret)
        else:
            self._store[key] = ret
        self._store.move_to_end(key)
        self.insertions += 1
        while len(self._store) > self.capacity:
            self._store.popitem(last=False)

    def target(self, key: int, ret: float) -> float:
        """Memory target: max of the stored best and the current return, or
        just the current return for unseen keys."""
        if not np.isfinite(ret):
            raise ValueError("return must be finite")
        stored = self._store.get(key)
        return ret if stored is None else max(stored, ret)


# ---------------------------------------------------------------------------
# Annotation passes


def _group_trajectories(transitions: Sequence[Transition]
                        ) -> list[list[Transition]]:
    groups: "OrderedDict[tuple, list[Transition]]" = OrderedDict()
    for t in transitions:
        groups.setdefault((t.worker, t.episode, t.agent), []).append(t)
    return list(groups.values())


def compute_returns_and_advantages(transitions: Sequence[Transition],
                                   hp: HyperParams) -> None:
    """Annotate ``ret`` and ``adv`` in place with GAE(gamma, lam).

    Bootstraps truncated trajectories through the stored next-state value;
    with lam = 1 the advantage reduces to discounted-return minus value.
    Both heads share the same advantage scalar.
    """
    if not transitions:
        raise ValueError("empty trajectory")
    for traj in _group_trajectories(transitions):
        running = 0.0
        for t in reversed(traj):
            not_done = 0.0 if t.done else 1.0
            delta = t.reward + hp.gamma * t.next_value * not_done - t.value
            running = delta + hp.gamma * hp.lam * not_done * running
            t.adv = running
            t.ret = running + t.value


def annotate_memory(transitions: Sequence[Transition], memory: EpisodicMemory,
                    hp: HyperParams) -> None:
    """Annotate ``v_h`` / ``adv_h`` from memory, then absorb the batch.

    All targets are read against the memory as of the start of the batch
    (past episodes only), then every (key, return) is inserted.
    """
    keyed = []
    for t in transitions:
        if t.ret is None:
            raise ValueError("returns must be computed before memory annotation")
        key = quantize_key(t.features, t.move, t.attack, hp.key_quantization)
        t.v_h = memory.target(key, t.ret)
        t.adv_h = t.v_h - t.value
        keyed.append((key, t.ret))
    for key, ret in keyed:
        memory.insert(key, ret)


# ---------------------------------------------------------------------------
# Loss terms on plain arrays (testable in isolation)


def value_loss(rewards: np.ndarray, values: np.ndarray, next_values: np.ndarray,
               dones: np.ndarray, hp: HyperParams) -> float:
    """Mean squared TD error. standard_td: (r + gamma*V(s')*(1-done) - V(s))^2.
    paper_literal keeps the printed ordering (r + V(s) - V(s'))^2."""
    if len(rewards) == 0:
        raise ValueError("empty batch")
    if hp.value_loss_mode == VALUE_LOSS_PAPER:
        resid = rewards + values - next_values
    else:
        resid = rewards + hp.gamma * next_values * (1.0 - dones) - values
    return float(np.mean(resid ** 2))


def clipped_surrogate(ratios: np.ndarray, advantages: np.ndarray,
                      epsilon: float) -> np.ndarray:
    """Per-sample min(r*A, clip(r, 1-eps, 1+eps)*A); maximized by the update."""
    clipped = np.clip(ratios, 1.0 - epsilon, 1.0 + epsilon)
    return np.minimum(ratios * advantages, clipped * advantages)


def clipped_policy_loss(ratios: np.ndarray, advantages: np.ndarray,
                        hp: HyperParams) -> float:
    return float(np.mean(clipped_surrogate(ratios, advantages, hp.epsilon_clip)))


def entropy_loss(probs: np.ndarray, mask: np.ndarray) -> float:
    """Mean Shannon entropy of masked distributions (rows)."""
    return float(np.mean(masked_entropy(probs, mask)))


def self_learning_loss(values: np.ndarray, v_h: np.ndarray, ratios: np.ndarray,
                       hp: HyperParams) -> float:
    """Memory regression plus clipped surrogate on A_H = V_H - V."""
    if np.any(~np.isfinite(v_h)):
        raise ValueError("memory targets missing or non-finite")
    adv_h = v_h - values
    sq = np.mean((values - v_h) ** 2)
    surr = np.mean(clipped_surrogate(ratios, adv_h, hp.epsilon_clip))
    return float(sq + surr)


# ---------------------------------------------------------------------------
# Batched evaluation against the network


@dataclass
class BatchArrays:
    features: np.ndarray
    spatial: Optional[np.ndarray]
    move_masks: np.ndarray
    attack_masks: np.ndarray
    moves: np.ndarray
    attacks: np.ndarray
    logp_move: np.ndarray
    logp_attack: np.ndarray
    values_old: np.ndarray
    next_values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    advs: np.ndarray
    v_h: Optional[np.ndarray]
    adv_h: Optional[np.ndarray]


def batch_arrays(transitions: Sequence[Transition]) -> BatchArrays:
    if not transitions:
        raise ValueError("empty batch")
    if any(t.adv is None for t in transitions):
        raise ValueError("advantages must be computed before building a batch")
    has_memory = all(t.v_h is not None for t in transitions)
    return BatchArrays(
        features=np.stack([t.features for t in transitions]),
        spatial=None,
        move_masks=np.stack([t.move_mask for t in transitions]),
        attack_masks=np.stack([t.attack_mask for t in transitions]),
        moves=np.array([t.move for t in transitions], dtype=np.int64),
        attacks=np.array([t.attack for t in transitions], dtype=np.int64),
        logp_move=np.array([t.logp_move for t in transitions]),
        logp_attack=np.array([t.logp_attack for t in transitions]),
        values_old=np.array([t.value for t in transitions]),
        next_values=np.array([t.next_value for t in transitions]),
        rewards=np.array([t.reward for t in transitions]),
        dones=np.array([1.0 if t.done else 0.0 for t in transitions]),
        advs=np.array([t.adv for t in transitions]),
        v_h=np.array([t.v_h for t in transitions]) if has_memory else None,
        adv_h=np.array([t.adv_h for t in transitions]) if has_memory else None,
    )


def _head_terms(logits, masks, acts, old_logp, advs, eps):
    n = len(acts)
    rows = np.arange(n)
    if not masks[rows, acts].all():
        raise ValueError("stored action falls outside its stored mask")
    logp, probs = masked_log_softmax(logits, masks)
    new_logp = logp[rows, acts]
    ratios = np.exp(new_logp - old_logp)
    surr = clipped_surrogate(ratios, advs, eps)
    entropy = masked_entropy(probs, masks)
    return logp, probs, new_logp, ratios, surr, entropy


def evaluate_batch(params: PolicyParams, batch: BatchArrays, hp: HyperParams,
                   want_grad: bool = True
                   ) -> tuple[LossBreakdown, Optional[np.ndarray]]:
    """Compute the loss breakdown under ``params`` and, optionally, the
    gradient of the minimized scalar with respect to the flat parameters."""
    hp.validate()
    n = len(batch.moves)
    rows = np.arange(n)
    eps = hp.epsilon_clip
    self_learning = hp.use_self_learning and hp.w3 != 0.0
    if self_learning and batch.v_h is None:
        raise ValueError("self-learning is enabled but the batch is missing "
                         "memory targets; run annotate_memory first")

    move_logits, attack_logits, values, cache = forward_batch(
        params, batch.features, batch.spatial)

    logp_m, probs_m, new_lp_m, ratio_m, surr_m, ent_m = _head_terms(
        move_logits, batch.move_masks, batch.moves, batch.logp_move,
        batch.advs, eps)
    logp_a, probs_a, new_lp_a, ratio_a, surr_a, ent_a = _head_terms(
        attack_logits, batch.attack_masks, batch.attacks, batch.logp_attack,
        batch.advs, eps)

    if hp.value_loss_mode == VALUE_LOSS_PAPER:
        value_resid = batch.rewards + values - batch.next_values
    else:
        targets = batch.rewards + hp.gamma * batch.next_values * (1.0 - batch.dones)
        value_resid = values - targets
    l_v = float(np.mean(value_resid ** 2))
    l_mp = float(surr_m.mean())
    l_ap = float(surr_a.mean())
    n_m = float(ent_m.mean())
    n_a = float(ent_a.mean())

    if self_learning:
        mem_resid = values - batch.v_h
        s_sq = float(np.mean(mem_resid ** 2))
        surr_hm = clipped_surrogate(ratio_m, batch.adv_h, eps)
        surr_ha = clipped_surrogate(ratio_a, batch.adv_h, eps)
        s_m = s_sq + float(surr_hm.mean())
        s_a = s_sq + float(surr_ha.mean())
    else:
        mem_resid = None
        s_sq, s_m, s_a = 0.0, 0.0, 0.0
        surr_hm = surr_ha = None

    l_m = hp.w1 * l_v + hp.w2 * n_m + l_mp + hp.w3 * s_m
    l_a = hp.w1 * l_v + hp.w2 * n_a + l_ap + hp.w3 * s_a
    minimized = (2.0 * hp.w1 * l_v + hp.w2 * (n_m + n_a) - (l_mp + l_ap))
    if self_learning:
        minimized += hp.w3 * (2.0 * s_sq
                              - float(surr_hm.mean()) - float(surr_ha.mean()))
    breakdown = LossBreakdown(
        l_v=l_v, l_mp=l_mp, l_ap=l_ap, n_m=n_m, n_a=n_a, s_m=s_m, s_a=s_a,
        l_m=l_m, l_a=l_a, l_total=l_m + l_a, minimized=minimized,
    )
    if not want_grad:
        return breakdown, None

    # d minimized / d logits. The surrogate gradient flows only where the
    # unclipped branch attains the min; the log-prob gradient of a masked
    # softmax is onehot(action) - probs (zero outside the mask).
    def logits_grad(probs, logp, masks, acts, ratios, ent, with_memory):
        clipped_r = np.clip(ratios, 1.0 - eps, 1.0 + eps)
        picked = ratios * batch.advs <= clipped_r * batch.advs
        coef = -(picked * ratios * batch.advs) / n
        if with_memory:
            picked_h = ratios * batch.adv_h <= clipped_r * batch.adv_h
            coef = coef - hp.w3 * (picked_h * ratios * batch.adv_h) / n
        onehot = np.zeros_like(probs)
        onehot[rows, acts] = 1.0
        d = coef[:, None] * (onehot - probs)
        # entropy: dH/dlogit_k = -q_k (log q_k + H); contributes with w2 / n.
        safe_logp = np.where(masks, logp, 0.0)
        d += (hp.w2 / n) * (-(probs * (safe_logp + ent[:, None])))
        return d

    d_move = logits_grad(probs_m, logp_m, batch.move_masks, batch.moves,
                         ratio_m, ent_m, self_learning)
    d_attack = logits_grad(probs_a, logp_a, batch.attack_masks, batch.attacks,
                           ratio_a, ent_a, self_learning)

    # Both value-loss modes differentiate to +1 w.r.t. V(s) through the
    # residual; the bootstrap term is held constant (semi-gradient TD).
    d_values = 2.0 * hp.w1 * 2.0 * value_resid / n
    if self_learning:
        d_values = d_values + 2.0 * hp.w3 * 2.0 * mem_resid / n

    grad = backward_batch(params, cache, d_move, d_attack, d_values)
    return breakdown, grad


def total_loss(params: PolicyParams, transitions: Sequence[Transition],
               hp: HyperParams) -> LossBreakdown:
    breakdown, _ = evaluate_batch(params, batch_arrays(transitions), hp,
                                  want_grad=False)
    return breakdown


def update(params: PolicyParams, transitions: Sequence[Transition],
           hp: HyperParams, rng: np.random.Generator
           ) -> tuple[PolicyParams, LossBreakdown]:
    """Minibatch gradient descent on the minimized scalar (Adam by default;
    plain momentum available for comparison).

    Returns a fresh params snapshot (version bumped) and the loss breakdown
    evaluated on the whole batch at entry. Non-finite losses or gradients
    abort the update and return the old snapshot unchanged. Optimizer state
    is local to one call, so updates stay deterministic functions of
    (params, batch, rng).
    """
    hp.validate()
    full = batch_arrays(transitions)
    if hp.normalize_advantages and len(full.advs) > 1:
        # Standard PPO batch normalization of the surrogate advantages; the
        # annotated per-transition values stay raw.
        spread = full.advs.std()
        if spread > 1e-8:
            full.advs = (full.advs - full.advs.mean()) / spread
    breakdown, _ = evaluate_batch(params, full, hp, want_grad=False)

    new_params = params.copy(bump_version=True)
    velocity = np.zeros_like(new_params.flat)
    m1 = np.zeros_like(new_params.flat)
    m2 = np.zeros_like(new_params.flat)
    steps = 0
    n = len(transitions)
    for _ in range(hp.epochs_per_batch):
        order = rng.permutation(n)
        for start in range(0, n, hp.minibatch_size):
            idx = order[start:start + hp.minibatch_size]
            mini = _slice_batch(full, idx)
            mini_breakdown, grad = evaluate_batch(new_params, mini, hp)
            if not np.isfinite(mini_breakdown.minimized) or not np.isfinite(grad).all():
                warnings.warn("non-finite loss or gradient; update aborted, "
                              "keeping previous parameters")
                return params, breakdown
            if hp.optimizer == "adam":
                steps += 1
                m1 = hp.momentum * m1 + (1.0 - hp.momentum) * grad
                m2 = hp.adam_beta2 * m2 + (1.0 - hp.adam_beta2) * grad * grad
                m1_hat = m1 / (1.0 - hp.momentum ** steps)
                m2_hat = m2 / (1.0 - hp.adam_beta2 ** steps)
                new_params.flat -= (hp.learning_rate * m1_hat
                                    / (np.sqrt(m2_hat) + hp.adam_eps))
            else:
                velocity = hp.momentum * velocity - hp.learning_rate * grad
                new_params.flat += velocity
    return new_params, breakdown


def _slice_batch(batch: BatchArrays, idx: np.ndarray) -> BatchArrays:
    pick = lambda a: None if a is None else a[idx]
    return BatchArrays(
        features=batch.features[idx],
        spatial=pick(batch.spatial),
        move_masks=batch.move_masks[idx],
        attack_masks=batch.attack_masks[idx],
        moves=batch.moves[idx],
        attacks=batch.attacks[idx],
        logp_move=batch.logp_move[idx],
        logp_attack=batch.logp_attack[idx],
        values_old=batch.values_old[idx],
        next_values=batch.next_values[idx],
        rewards=batch.rewards[idx],
        dones=batch.dones[idx],
        advs=batch.advs[idx],
        v_h=pick(batch.v_h),
        adv_h=pick(batch.adv_h),
    )
