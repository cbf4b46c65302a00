"""Dual-head policy/value network on plain numpy float64.

One shared encoder feeds three heads: 9-way move logits, 7-way attack logits
and a scalar state value. Weights live in a single flat float64 vector with a
shape manifest, which keeps checkpoints trivially bit-exact and lets the
finite-difference gradient check walk raw coordinates.

Masking operates on post-softmax probabilities: entries outside the allowed
set are set to exactly zero and the rest renormalized. That is equivalent to
a softmax over the allowed subset, which is how the backward pass treats it.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .actions import N_ATTACK, N_MOVE, ActionPair

CHECKPOINT_MAGIC = b"LCNETCKP"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    """Architecture description; fully determines the parameter manifest."""

    feature_dim: int
    hidden: tuple[int, int] = (128, 128)
    use_spatial: bool = False
    spatial_dim: int = 0
    spatial_hidden: int = 32

    def trunk_dim(self) -> int:
        return self.hidden[1] + (self.spatial_hidden if self.use_spatial else 0)

    def manifest(self) -> tuple[tuple[str, tuple[int, ...]], ...]:
        h0, h1 = self.hidden
        entries: list[tuple[str, tuple[int, ...]]] = [
            ("w0", (self.feature_dim, h0)), ("b0", (h0,)),
            ("w1", (h0, h1)), ("b1", (h1,)),
        ]
        if self.use_spatial:
            entries += [("ws", (self.spatial_dim, self.spatial_hidden)),
                        ("bs", (self.spatial_hidden,))]
        trunk = self.trunk_dim()
        entries += [
            ("wm", (trunk, N_MOVE)), ("bm", (N_MOVE,)),
            ("wa", (trunk, N_ATTACK)), ("ba", (N_ATTACK,)),
            ("wv", (trunk, 1)), ("bv", (1,)),
        ]
        return tuple(entries)


class PolicyParams:
    """Flat float64 parameter vector plus named views per the manifest.

    Snapshots are treated as immutable once published to rollout workers;
    updates produce a fresh instance with a bumped version.
    """

    def __init__(self, net_config: NetConfig, flat: np.ndarray, version: int = 0):
        expected = sum(int(np.prod(shape)) for _, shape in net_config.manifest())
        if flat.dtype != np.float64 or flat.ndim != 1 or flat.size != expected:
            raise ValueError(
                f"flat parameter vector must be float64[{expected}], "
                f"got {flat.dtype}[{flat.shape}]")
        self.net_config = net_config
        self.flat = flat
        self.version = version
        self.views: dict[str, np.ndarray] = {}
        offset = 0
        for name, shape in net_config.manifest():
            size = int(np.prod(shape))
            self.views[name] = self.flat[offset:offset + size].reshape(shape)
            offset += size

    def copy(self, bump_version: bool = False) -> "PolicyParams":
        return PolicyParams(self.net_config, self.flat.copy(),
                            self.version + (1 if bump_version else 0))


def init_params(net_config: NetConfig, seed: int, zero: bool = False) -> PolicyParams:
    """Seeded init: weights uniform in +-1/sqrt(fan_in), biases zero."""
    rng = np.random.default_rng(np.uint64(seed))
    chunks = []
    for name, shape in net_config.manifest():
        if zero or name.startswith("b"):
            chunks.append(np.zeros(int(np.prod(shape)), dtype=np.float64))
        else:
            bound = 1.0 / np.sqrt(shape[0])
            chunks.append(rng.uniform(-bound, bound, int(np.prod(shape))))
    return PolicyParams(net_config, np.concatenate(chunks))


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def forward_batch(
    params: PolicyParams,
    features: np.ndarray,
    spatial: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, tuple]:
    """Run the network on a (N, feature_dim) batch.

    Returns (move logits (N,9), attack logits (N,7), values (N,), cache).
    """
    cfg = params.net_config
    if features.ndim != 2 or features.shape[1] != cfg.feature_dim:
        raise ValueError(
            f"expected features of shape (N, {cfg.feature_dim}), got {features.shape}")
    v = params.views
    h0 = _relu(features @ v["w0"] + v["b0"])
    h1 = _relu(h0 @ v["w1"] + v["b1"])
    hs = None
    if cfg.use_spatial:
        if spatial is None or spatial.shape != (features.shape[0], cfg.spatial_dim):
            raise ValueError("spatial input missing or mis-shaped")
        hs = _relu(spatial @ v["ws"] + v["bs"])
        trunk = np.concatenate([h1, hs], axis=1)
    else:
        trunk = h1
    move_logits = trunk @ v["wm"] + v["bm"]
    attack_logits = trunk @ v["wa"] + v["ba"]
    values = (trunk @ v["wv"] + v["bv"])[:, 0]
    cache = (features, spatial, h0, h1, hs, trunk)
    return move_logits, attack_logits, values, cache


def forward(params: PolicyParams, features: np.ndarray,
            spatial: Optional[np.ndarray] = None):
    """Single-observation forward pass: (move logits, attack logits, value)."""
    sp = spatial.reshape(1, -1) if spatial is not None else None
    lm, la, val, _ = forward_batch(params, features.reshape(1, -1), sp)
    return lm[0], la[0], float(val[0])


def backward_batch(
    params: PolicyParams,
    cache: tuple,
    d_move_logits: np.ndarray,
    d_attack_logits: np.ndarray,
    d_values: np.ndarray,
) -> np.ndarray:
    """Chain upstream head gradients back to a flat parameter gradient."""
    cfg = params.net_config
    v = params.views
    features, spatial, h0, h1, hs, trunk = cache
    grad = np.zeros_like(params.flat)
    g = PolicyParams(cfg, grad).views  # named views over the gradient vector

    dv = d_values.reshape(-1, 1)
    g["wm"][:] = trunk.T @ d_move_logits
    g["bm"][:] = d_move_logits.sum(axis=0)
    g["wa"][:] = trunk.T @ d_attack_logits
    g["ba"][:] = d_attack_logits.sum(axis=0)
    g["wv"][:] = trunk.T @ dv
    g["bv"][:] = dv.sum(axis=0)

    d_trunk = (d_move_logits @ v["wm"].T
               + d_attack_logits @ v["wa"].T
               + dv @ v["wv"].T)
    if cfg.use_spatial:
        h1_dim = cfg.hidden[1]
        d_h1 = d_trunk[:, :h1_dim]
        d_hs = d_trunk[:, h1_dim:] * (hs > 0)
        g["ws"][:] = spatial.T @ d_hs
        g["bs"][:] = d_hs.sum(axis=0)
    else:
        d_h1 = d_trunk
    d_h1 = d_h1 * (h1 > 0)
    g["w1"][:] = h0.T @ d_h1
    g["b1"][:] = d_h1.sum(axis=0)
    d_h0 = (d_h1 @ v["w1"].T) * (h0 > 0)
    g["w0"][:] = features.T @ d_h0
    g["b0"][:] = d_h0.sum(axis=0)
    return grad


# ---------------------------------------------------------------------------
# Masked distributions


def _as_mask(allowed, size: int) -> np.ndarray:
    if isinstance(allowed, np.ndarray) and allowed.dtype == bool:
        if allowed.shape != (size,):
            raise ValueError(f"mask must have shape ({size},)")
        return allowed
    mask = np.zeros(size, dtype=bool)
    mask[list(allowed)] = True
    return mask


def mask_and_normalize(probs: np.ndarray, allowed) -> np.ndarray:
    """Zero probability outside the allowed set and renormalize the rest.

    When the allowed set carries no mass the result falls back to uniform
    over the allowed set.
    """
    probs = np.asarray(probs, dtype=np.float64)
    mask = _as_mask(allowed, probs.shape[0])
    if not mask.any():
        raise ValueError("allowed set must not be empty")
    if (probs < 0).any():
        raise ValueError("probabilities must be nonnegative")
    out = np.where(mask, probs, 0.0)
    total = out.sum()
    if total <= 0.0:
        out = mask.astype(np.float64)
        total = out.sum()
    return out / total


@dataclass
class MaskedDistribution:
    """Joint masked action distribution for both heads."""

    move_probs: np.ndarray
    attack_probs: np.ndarray
    move_mask: np.ndarray
    attack_mask: np.ndarray


def softmax(x: np.ndarray) -> np.ndarray:
    z = x - np.max(x)
    e = np.exp(z)
    return e / e.sum()


def masked_distribution(move_logits: np.ndarray, attack_logits: np.ndarray,
                        move_mask: np.ndarray, attack_mask: np.ndarray
                        ) -> MaskedDistribution:
    return MaskedDistribution(
        move_probs=mask_and_normalize(softmax(move_logits), move_mask),
        attack_probs=mask_and_normalize(softmax(attack_logits), attack_mask),
        move_mask=_as_mask(move_mask, N_MOVE),
        attack_mask=_as_mask(attack_mask, N_ATTACK),
    )


def sample_action(dist: MaskedDistribution, rng: np.random.Generator
                  ) -> tuple[ActionPair, float, float]:
    """Sample both heads independently; returns the pair and its log-probs."""
    move = int(rng.choice(N_MOVE, p=dist.move_probs))
    attack = int(rng.choice(N_ATTACK, p=dist.attack_probs))
    return (ActionPair(move, attack),
            float(np.log(dist.move_probs[move])),
            float(np.log(dist.attack_probs[attack])))


def greedy_action(dist: MaskedDistribution) -> ActionPair:
    """Argmax per head; ties resolve to the lowest index."""
    return ActionPair(int(np.argmax(dist.move_probs)),
                      int(np.argmax(dist.attack_probs)))


def masked_log_softmax(logits: np.ndarray, mask: np.ndarray
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise masked log-softmax.

    Returns (log-probs, probs); entries outside the mask are -inf / exactly 0.
    Equivalent to softmax restricted to the allowed subset, which is the same
    distribution as mask_and_normalize applied after a full softmax.
    """
    neg = np.where(mask, logits, -np.inf)
    peak = neg.max(axis=1, keepdims=True)
    z = neg - peak
    e = np.where(mask, np.exp(np.where(mask, z, 0.0)), 0.0)
    total = e.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        logp = z - np.log(total)
    return logp, e / total


def masked_entropy(probs: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise Shannon entropy over masked support, with 0*log0 := 0."""
    safe = np.where((probs > 0) & mask, probs, 1.0)
    return -(np.where(mask, probs, 0.0) * np.log(safe)).sum(axis=1)


# ---------------------------------------------------------------------------
# Gradient checking


def gradient_check(
    params: PolicyParams,
    loss_fn: Callable[[PolicyParams], tuple[float, np.ndarray]],
    rng: np.random.Generator,
    n_coords: int = 200,
    h: float = 1e-4,
) -> float:
    """Compare the analytic gradient of ``loss_fn`` against central finite
    differences on a sample of coordinates; returns the max relative error.

    Relative error per coordinate is |a - n| / max(|a| + |n|, 1e-8).
    """
    _, analytic = loss_fn(params)
    if analytic.shape != params.flat.shape:
        raise ValueError("loss_fn gradient has wrong shape")
    coords = rng.choice(params.flat.size, size=min(n_coords, params.flat.size),
                        replace=False)
    worst = 0.0
    work = params.copy()
    for i in coords:
        original = work.flat[i]
        work.flat[i] = original + h
        up, _ = loss_fn(work)
        work.flat[i] = original - h
        down, _ = loss_fn(work)
        work.flat[i] = original
        numeric = (up - down) / (2.0 * h)
        denom = max(abs(analytic[i]) + abs(numeric), 1e-8)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(params: PolicyParams, path) -> None:
    """Write magic, version, manifest and the raw little-endian float64 data."""
    meta = {
        "feature_dim": params.net_config.feature_dim,
        "hidden": list(params.net_config.hidden),
        "use_spatial": params.net_config.use_spatial,
        "spatial_dim": params.net_config.spatial_dim,
        "spatial_hidden": params.net_config.spatial_hidden,
        "version": params.version,
        "manifest": [[name, list(shape)] for name, shape in params.net_config.manifest()],
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    data = params.flat.astype("<f8", copy=False).tobytes()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<Q", params.flat.size))
        fh.write(data)


def load_checkpoint(path) -> PolicyParams:
    """Read a checkpoint; validates magic, version, manifest and size."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a policy checkpoint (bad magic)")
    fmt_version = struct.unpack_from("<I", raw, 8)[0]
    if fmt_version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format {fmt_version}")
    meta_len = struct.unpack_from("<I", raw, 12)[0]
    meta = json.loads(raw[16:16 + meta_len].decode("utf-8"))
    count = struct.unpack_from("<Q", raw, 16 + meta_len)[0]
    flat = np.frombuffer(raw, dtype="<f8", count=count,
                         offset=16 + meta_len + 8).copy()
    net_config = NetConfig(
        feature_dim=int(meta["feature_dim"]),
        hidden=tuple(meta["hidden"]),
        use_spatial=bool(meta["use_spatial"]),
        spatial_dim=int(meta["spatial_dim"]),
        spatial_hidden=int(meta["spatial_hidden"]),
    )
    expected = [[name, list(shape)] for name, shape in net_config.manifest()]
    if meta["manifest"] != expected:
        raise ValueError(f"{path}: manifest does not match architecture")
    return PolicyParams(net_config, flat, version=int(meta["version"]))
