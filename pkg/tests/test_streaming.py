"""Live streaming engine: ordering, causality, accounting, determinism, and
bounded memory. Sessions here run unpaced so the suite stays fast."""

import numpy as np
import pytest

from ftlk.diffusion import SamplerPlan
from ftlk.errors import ConfigError
from ftlk.net import Denoiser
from ftlk.streaming import (PACING_MODES, StreamConfig, StreamSession,
                            run_longform, start_stream)
from ftlk.world import sample_driving_signal, sample_identity


@pytest.fixture(scope="module")
def store(tiny_net_cfg):
    return Denoiser(tiny_net_cfg).init_params(0)


@pytest.fixture(scope="module")
def reference(tiny_world):
    return tiny_world.P @ sample_identity(1, tiny_world.spec.identity_dim)


@pytest.fixture()
def session(store, tiny_net_cfg, tiny_codec, reference):
    cfg = StreamConfig(seed=3, pacing="unpaced",
                       sampler=SamplerPlan(steps=2, timesteps=(1.0, 0.5)))
    sess = start_stream(store, tiny_net_cfg, tiny_codec, reference, cfg)
    yield sess
    sess.close()


SIG = sample_driving_signal(11, 2000).samples


def _feed(sess, n_chunks, offset=0):
    stride = sess.cfg.stride
    sess.push_signal(list(enumerate(
        SIG[offset * stride:(offset + n_chunks) * stride], offset * stride)))


def _drain(sess, n_frames):
    out = []
    while len(out) < n_frames:
        frames, _ = sess.next_frames(wait=True, timeout=2.0)
        out.extend(frames)
        if not frames:
            break
    return out


def test_config_validates():
    with pytest.raises(ConfigError):
        StreamConfig(chunk_len=2, motion_len=2).validate()
    with pytest.raises(ConfigError):
        StreamConfig(pacing="warp").validate()
    assert set(PACING_MODES) == {"realtime", "unpaced"}


def test_reference_shape_checked(store, tiny_net_cfg, tiny_codec):
    with pytest.raises(ConfigError):
        StreamSession(store, tiny_net_cfg, tiny_codec, np.zeros(3),
                      StreamConfig())


def test_no_frames_before_first_window(session):
    frames, stats = session.next_frames()
    assert frames == []
    assert stats.frames_emitted == 0
    assert stats.chunks_emitted == 0


def test_partial_window_emits_nothing(session):
    session.push_signal(list(enumerate(SIG[:3])))
    frames, stats = session.next_frames(wait=True, timeout=0.2)
    assert frames == []
    assert stats.frames_emitted == 0


def test_frames_in_order_exactly_once(session):
    _feed(session, 12)
    frames = _drain(session, 12 * session.cfg.stride)
    assert [f.index for f in frames] == list(range(12 * session.cfg.stride))
    assert [f.chunk for f in frames] == \
        [i // session.cfg.stride for i in range(len(frames))]
    stats = session.stats()
    assert stats.frames_emitted == stats.chunks_emitted * session.cfg.stride


def test_out_of_order_sample_rejected(session):
    session.push_signal([(0, 0.1)])
    with pytest.raises(ConfigError):
        session.push_signal([(2, 0.3)])


def test_nonfinite_sample_rejected(session):
    with pytest.raises(ConfigError):
        session.push_signal([(0, np.nan)])


def test_closed_session_rejects_pushes(store, tiny_net_cfg, tiny_codec, reference):
    sess = start_stream(store, tiny_net_cfg, tiny_codec, reference,
                        StreamConfig(pacing="unpaced"))
    sess.close()
    with pytest.raises(ConfigError):
        sess.push_signal([(0, 0.0)])


def test_cold_start_motion_is_reference(session, tiny_codec, reference):
    ref_latent = tiny_codec.encode(reference[None, :])[0]
    assert np.allclose(session._motion,
                       np.repeat(ref_latent[None, :], session.cfg.motion_len,
                                 axis=0))


def test_replay_bit_identical(store, tiny_net_cfg, tiny_codec, reference):
    def run():
        sess = start_stream(store, tiny_net_cfg, tiny_codec, reference,
                            StreamConfig(seed=9, pacing="unpaced"))
        _feed(sess, 8)
        frames = _drain(sess, 8 * sess.cfg.stride)
        sess.close()
        return frames

    a, b = run(), run()
    assert len(a) == len(b) == 8 * 7
    for x, y in zip(a, b):
        assert x.index == y.index and np.array_equal(x.state, y.state)


def test_future_samples_do_not_change_past_chunks(store, tiny_net_cfg,
                                                  tiny_codec, reference):
    # Bit-exact causality: perturbing driving samples that belong to later
    # chunks must leave already-computable chunks untouched.
    def first_chunks(perturb):
        sess = start_stream(store, tiny_net_cfg, tiny_codec, reference,
                            StreamConfig(seed=4, pacing="unpaced"))
        sig = SIG[:4 * sess.cfg.stride].copy()
        if perturb:
            sig[2 * sess.cfg.stride:] += 0.25
            sig = np.clip(sig, -1.0, 1.0)
        sess.push_signal(list(enumerate(sig)))
        frames = _drain(sess, 4 * sess.cfg.stride)
        sess.close()
        return frames

    base = first_chunks(False)
    bent = first_chunks(True)
    stride = 7
    for x, y in zip(base[: 2 * stride], bent[: 2 * stride]):
        assert np.array_equal(x.state, y.state)
    assert any(not np.array_equal(x.state, y.state)
               for x, y in zip(base[2 * stride:], bent[2 * stride:]))


def test_last_sample_in_window_matters(store, tiny_net_cfg, tiny_codec,
                                       reference):
    # Intra-chunk bidirectionality: the final driving sample of a window
    # influences every frame of that chunk, including the first.
    def chunk0(last):
        sess = start_stream(store, tiny_net_cfg, tiny_codec, reference,
                            StreamConfig(seed=5, pacing="unpaced"))
        sig = SIG[:7].copy()
        sig[-1] = last
        sess.push_signal(list(enumerate(sig)))
        frames = _drain(sess, 7)
        sess.close()
        return np.stack([f.state for f in frames])

    a = chunk0(0.9)
    b = chunk0(-0.9)
    assert not np.allclose(a[0], b[0])


def test_cycle_accounting(store, tiny_net_cfg, tiny_codec, reference):
    import time

    sess = start_stream(store, tiny_net_cfg, tiny_codec, reference,
                        StreamConfig(seed=6, pacing="unpaced"))
    stride = sess.cfg.stride
    for c in range(5):
        t_push = time.perf_counter()
        sess.push_signal(list(enumerate(SIG[c * stride:(c + 1) * stride],
                                        c * stride)))
        got = 0
        while got < stride:
            frames, stats = sess.next_frames(wait=True, timeout=2.0)
            got += len(frames)
        t_recv = time.perf_counter()
        cycle = stats.cycle
        assert set(cycle) == {"signal_ms", "denoise_ms", "decode_ms",
                              "motion_encode_ms", "misc_ms"}
        assert all(v >= 0.0 for v in cycle.values())
        # chunk-synchronous: the recorded categories cannot exceed the
        # push-to-receive makespan observed from outside
        assert sum(cycle.values()) <= (t_recv - t_push) * 1000.0 + 1.0
    stats = sess.stats()
    assert stats.fps > 0
    assert stats.startup_ms > 0
    sess.close()


def test_memory_flat_over_stream(store, tiny_net_cfg, tiny_codec, reference):
    sess = start_stream(store, tiny_net_cfg, tiny_codec, reference,
                        StreamConfig(seed=7, pacing="unpaced"))
    stride = sess.cfg.stride

    def at_chunk(target, start, done):
        for c in range(start, target):
            sess.push_signal(list(enumerate(SIG[c * stride:(c + 1) * stride],
                                            c * stride)))
            need = (c + 1) * stride
            while done[0] < need:
                frames, _ = sess.next_frames(wait=True, timeout=2.0)
                done[0] += len(frames)
        prev = sess.persistent_state_nbytes()
        for _ in range(50):
            cur = sess.persistent_state_nbytes()
            if cur == prev:
                return cur
            prev = cur
        return prev

    done = [0]
    early = at_chunk(10, 0, done)
    late = at_chunk(200, 10, done)
    assert early == late
    sess.close()


def test_run_longform_single_bucket(store, tiny_net_cfg, tiny_codec,
                                    tiny_world, reference):
    cfg = StreamConfig(seed=8, pacing="unpaced")
    sess = start_stream(store, tiny_net_cfg, tiny_codec, reference, cfg)
    seconds = cfg.stride / cfg.target_fps   # exactly one chunk
    rep = run_longform(sess, seconds, SIG[:cfg.stride], world=tiny_world)
    sess.close()
    assert rep["frames"] == cfg.stride
    assert len(rep["buckets"]) == 1
    assert rep["buckets"][0]["drift_from_start"] == 0.0
    assert rep["stats"].chunks_emitted >= 1


def test_run_longform_reports_buckets_and_memory(store, tiny_net_cfg,
                                                 tiny_codec, tiny_world,
                                                 reference):
    ident = sample_identity(1, tiny_world.spec.identity_dim)
    cfg = StreamConfig(seed=9, pacing="unpaced")
    sess = start_stream(store, tiny_net_cfg, tiny_codec, reference, cfg)
    rep = run_longform(sess, 8.0, SIG, world=tiny_world, identity=ident,
                       bucket_s=2.0)
    sess.close()
    assert rep["frames"] == 200
    assert len(rep["buckets"]) == 4
    assert rep["buckets"][0]["drift_from_start"] == 0.0
    for entry in rep["buckets"]:
        assert {"consistency", "toy_sync", "identity_drift",
                "drift_from_start"} <= set(entry)
    assert 10 in rep["memory_nbytes"]


def test_run_longform_requires_enough_signal(store, tiny_net_cfg, tiny_codec,
                                             reference):
    sess = start_stream(store, tiny_net_cfg, tiny_codec, reference,
                        StreamConfig(pacing="unpaced"))
    with pytest.raises(ConfigError):
        run_longform(sess, 10.0, SIG[:5])
    sess.close()
