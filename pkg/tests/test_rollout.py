import io

import numpy as np
import pytest

from lanecraft.config import RewardWeights, default_config
from lanecraft.macro import ExpertMacroPolicy
from lanecraft.net import NetConfig, init_params
from lanecraft.rollout import (
    MSG_HEARTBEAT,
    MSG_PARAMS,
    MSG_SHUTDOWN,
    MSG_TRANSITIONS,
    FramingError,
    ProtocolError,
    SampleBatch,
    WireFrame,
    WorkerConfig,
    collect_round,
    decode_frame,
    deserialize_transitions,
    encode_frame,
    make_workers,
    read_frame,
    serialize_transitions,
)
from lanecraft.sim import observation_layout


def worker_config(n_workers=2, steps=40, use_macro=True, seed=0):
    env = default_config("1v1", seed=seed)
    return WorkerConfig(
        env_config=env,
        steps_per_worker_per_round=steps,
        seeds=tuple(seed * 1000 + i for i in range(n_workers)),
        worker_count=n_workers,
        opponent_level="entry",
        reward_weights=RewardWeights(),
        use_macro=use_macro,
    )


def net_config():
    env = default_config("1v1")
    return NetConfig(feature_dim=observation_layout(env).feature_dim)


def build(n_workers=2, steps=40, seed=0):
    cfg = worker_config(n_workers=n_workers, steps=steps, seed=seed)
    params = init_params(net_config(), seed=seed)
    workers = make_workers(cfg, params, ExpertMacroPolicy())
    return cfg, params, workers


# --- worker config -----------------------------------------------------------

def test_worker_config_validation():
    cfg = worker_config()
    cfg.seeds = (1, 1)
    with pytest.raises(ValueError, match="distinct"):
        cfg.validate()
    cfg = worker_config()
    cfg.worker_count = 0
    with pytest.raises(ValueError):
        cfg.validate()
    cfg = worker_config()
    cfg.seeds = (1,)
    with pytest.raises(ValueError, match="one seed per worker"):
        cfg.validate()


def test_use_macro_requires_policy():
    cfg = worker_config()
    params = init_params(net_config(), seed=0)
    with pytest.raises(ValueError, match="macro policy"):
        make_workers(cfg, params, None)


# --- collection ---------------------------------------------------------------

def test_collect_round_counts():
    _, params, workers = build(n_workers=1, steps=100)
    batch = collect_round(workers, version=params.version)
    assert 0 < len(batch.transitions) <= 100
    assert batch.version == params.version
    for t in batch.transitions:
        assert t.move_mask[t.move]
        assert t.attack_mask[t.attack]
        assert t.logp_move <= 0 and t.logp_attack <= 0


def test_collect_round_deterministic():
    _, params, workers_a = build(seed=11)
    _, _, workers_b = build(seed=11)
    batch_a = collect_round(workers_a, version=0)
    batch_b = collect_round(workers_b, version=0)
    dim = batch_a.transitions[0].features.shape[0]
    assert serialize_transitions(batch_a, dim) == serialize_transitions(batch_b, dim)


def test_parallel_matches_sequential():
    _, params, workers_seq = build(n_workers=4, steps=30, seed=5)
    _, _, workers_par = build(n_workers=4, steps=30, seed=5)
    batch_seq = collect_round(workers_seq, version=0, parallel=False)
    batch_par = collect_round(workers_par, version=0, parallel=True)
    dim = batch_seq.transitions[0].features.shape[0]
    assert serialize_transitions(batch_seq, dim) == \
        serialize_transitions(batch_par, dim)


def test_worker_crash_drops_partial_data():
    _, params, workers = build(n_workers=3, steps=20, seed=2)

    def explode(steps):
        raise RuntimeError("worker crashed")

    workers[1].run_round = explode
    batch = collect_round(workers, version=0)
    assert len(batch.transitions) > 0
    assert {t.worker for t in batch.transitions} == {0, 2}


def test_all_workers_failing_raises():
    _, params, workers = build(n_workers=2, steps=10, seed=3)
    for w in workers:
        w.run_round = lambda steps: (_ for _ in ()).throw(RuntimeError())
    with pytest.raises(RuntimeError, match="all workers failed"):
        collect_round(workers, version=0)


def test_flat_mode_collects_without_macro():
    cfg = worker_config(use_macro=False, steps=30)
    params = init_params(net_config(), seed=0)
    workers = make_workers(cfg, params, None)
    batch = collect_round(workers, version=0)
    assert len(batch.transitions) > 0
    for t in batch.transitions:
        assert t.macro_kind == -1
        assert t.move_mask.all()


def test_episode_stats_progress():
    # enough steps to finish at least one episode
    _, params, workers = build(n_workers=1, steps=700, seed=7)
    batch = collect_round(workers, version=0)
    assert len(batch.episode_stats) >= 1
    stat = batch.episode_stats[0]
    assert stat.ticks > 0
    assert stat.winner in (0, 1, None)


# --- wire protocol ---------------------------------------------------------------

def test_heartbeat_is_five_bytes():
    data = encode_frame(WireFrame(MSG_HEARTBEAT, b""))
    assert len(data) == 5
    assert data == b"\x00\x00\x00\x00\x02"


def test_frame_roundtrip():
    payload = bytes(range(256)) * 3
    for msg_type in (MSG_PARAMS, MSG_TRANSITIONS, MSG_HEARTBEAT, MSG_SHUTDOWN):
        data = encode_frame(WireFrame(msg_type, payload))
        frame, offset = decode_frame(data)
        assert frame.msg_type == msg_type
        assert frame.payload == payload
        assert offset == len(data)


def test_truncated_frame_rejected():
    data = encode_frame(WireFrame(MSG_TRANSITIONS, b"0123456789"))
    with pytest.raises(FramingError, match="only 6"):
        decode_frame(data[:11])  # 5 header + 6 of 10 payload bytes
    with pytest.raises(FramingError):
        decode_frame(b"\x00\x00")


def test_unknown_type_rejected():
    with pytest.raises(ProtocolError, match="unknown message type"):
        decode_frame(b"\x00\x00\x00\x00\x09")
    with pytest.raises(ProtocolError):
        encode_frame(WireFrame(9, b""))


def test_read_frame_from_stream():
    payload = b"hello"
    stream = io.BytesIO(encode_frame(WireFrame(MSG_PARAMS, payload)))
    frame = read_frame(stream)
    assert frame.payload == payload
    stream = io.BytesIO(b"\x00\x00\x00\x08\x01abc")
    with pytest.raises(FramingError):
        read_frame(stream)


def test_transition_block_roundtrip():
    _, params, workers = build(n_workers=1, steps=25, seed=13)
    batch = collect_round(workers, version=3)
    dim = batch.transitions[0].features.shape[0]
    blob = serialize_transitions(batch, dim)
    redecoded = deserialize_transitions(blob)
    assert redecoded.version == 3
    assert len(redecoded.transitions) == len(batch.transitions)
    for a, b in zip(batch.transitions, redecoded.transitions):
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.move_mask, b.move_mask)
        assert np.array_equal(a.attack_mask, b.attack_mask)
        assert (a.move, a.attack, a.done) == (b.move, b.attack, b.done)
        assert a.logp_move == b.logp_move
        assert a.value == b.value
        assert a.reward == b.reward
        assert (a.worker, a.episode, a.agent) == (b.worker, b.episode, b.agent)


def test_transition_block_size_validation():
    with pytest.raises(FramingError):
        deserialize_transitions(b"short")
    _, params, workers = build(n_workers=1, steps=5, seed=17)
    batch = collect_round(workers, version=0)
    dim = batch.transitions[0].features.shape[0]
    blob = serialize_transitions(batch, dim)
    with pytest.raises(FramingError, match="size mismatch"):
        deserialize_transitions(blob[:-3])
