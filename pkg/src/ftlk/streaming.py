"""Real-time chunked autoregressive streaming engine.

Three pipeline stages run on their own worker threads — signal ingest, chunk
denoising, decode/emit — joined by bounded single-producer single-consumer
queues of capacity 2, so decoding chunk n overlaps denoising chunk n+1. The
denoise stage owns the only cross-chunk state (the carried motion frames), so
emitted frames are a deterministic function of (checkpoint, seed, driving
samples) no matter how the wall clock slices the stages.

Chunk geometry: chunk c emits frames [c*S, (c+1)*S) with S = L_c - L_m; its
conditioning window covers frame indices [c*S - L_m, c*S + S). Indices below
zero are cold-start pseudo-frames: encoded reference frames with zero driving
signal. A chunk starts denoising only once every real driving sample in its
window has arrived, and the generator never reads a sample beyond the window.

All rolling statistics live in fixed-capacity ring buffers, so a session's
persistent footprint is flat for the lifetime of the stream; the
`persistent_state_nbytes` introspection deep-sizes the live session object so
any accidentally growing structure shows up in the number.
"""

import collections
from dataclasses import dataclass, field
import queue
import sys
import threading
import time
import types

import numpy as np

from .diffusion import SamplerPlan, few_step_sample
from .errors import ConfigError
from .net import Denoiser, NetConfig, ParamStore
from .seeding import STREAM_NOISE, rng_for
from .world import Codec

PACING_MODES = ("realtime", "unpaced")
_RECENT = 64  # rolling-window capacity for cycle statistics
_CYCLE_KEYS = ("signal_ms", "denoise_ms", "decode_ms", "motion_encode_ms", "misc_ms")


@dataclass(frozen=True)
class StreamConfig:
    chunk_len: int = 9
    motion_len: int = 2
    target_fps: float = 25.0
    sampler: SamplerPlan = field(default_factory=SamplerPlan)
    seed: int = 0
    pacing: str = "unpaced"

    def validate(self) -> list:
        problems = []
        if not (0 <= self.motion_len < self.chunk_len):
            problems.append("stream.motion_len must satisfy 0 <= L_m < L_c")
        if self.target_fps <= 0:
            problems.append("stream.target_fps must be > 0")
        if self.pacing not in PACING_MODES:
            problems.append(f"stream.pacing must be one of {PACING_MODES}")
        return problems

    def __post_init__(self):
        problems = self.validate()
        if problems:
            raise ConfigError(problems)

    @property
    def stride(self) -> int:
        return self.chunk_len - self.motion_len


@dataclass
class StreamStats:
    startup_ms: float
    fps: float
    frames_emitted: int
    chunks_emitted: int
    generate_ms: float
    cycle: dict


@dataclass
class EmittedFrame:
    index: int
    chunk: int
    state: np.ndarray


_SIZE_OPAQUE = (type, types.ModuleType, types.FunctionType, types.MethodType,
                types.BuiltinFunctionType, threading.Thread)


def _deep_nbytes(obj, seen=None) -> int:
    """Recursive size of a live object graph; ndarray buffers included.

    Immutable primitives are counted per reference, not per object — whether
    CPython interned a particular int is an interpreter accident, not session
    state, and must not show up in the number.
    """
    if isinstance(obj, (int, float, complex, bool, str, bytes, type(None))):
        return sys.getsizeof(obj)
    if seen is None:
        seen = set()
    oid = id(obj)
    if oid in seen:
        return 0
    seen.add(oid)
    if isinstance(obj, np.ndarray):
        return int(obj.nbytes) + sys.getsizeof(obj)
    if isinstance(obj, _SIZE_OPAQUE):
        return 0
    size = sys.getsizeof(obj)
    if isinstance(obj, dict):
        size += sum(_deep_nbytes(k, seen) + _deep_nbytes(v, seen)
                    for k, v in obj.items())
    elif isinstance(obj, (list, tuple, set, frozenset, collections.deque)):
        size += sum(_deep_nbytes(x, seen) for x in obj)
    elif hasattr(obj, "__dict__"):
        size += _deep_nbytes(obj.__dict__, seen)
    return size


class StreamSession:
    """One live stream. Command it from a single controller thread."""

    def __init__(self, store: ParamStore, net_cfg: NetConfig, codec: Codec,
                 reference_frame: np.ndarray, cfg: StreamConfig):
        reference_frame = np.asarray(reference_frame, dtype=np.float64)
        if reference_frame.shape != (net_cfg.latent_dim,):
            raise ConfigError("reference frame dimension does not match the net")
        self.cfg = cfg
        self.codec = codec
        self._net = Denoiser(net_cfg)
        self._store = store
        self._reference = codec.encode(reference_frame[None, :])[0]
        # Cold start: the first chunk's motion rows are encoded reference copies.
        self._motion = np.repeat(self._reference[None, :], cfg.motion_len, axis=0)

        self._pending = {}          # driving samples awaiting their chunk
        self._next_sample = 0       # count of samples received (indices are dense)
        self._next_window = 0       # next chunk to assemble
        self._inbox = queue.Queue()  # controller -> ingest
        self._to_denoise = queue.Queue(maxsize=2)
        self._to_decode = queue.Queue(maxsize=2)
        self._out = collections.deque()
        self._out_cond = threading.Condition()
        self._lock = threading.Lock()
        self._closed = threading.Event()
        self._error = None

        self._t_start = time.perf_counter()
        self._startup_ms = -1.0
        self._last_emit_t = -1.0
        self._cycle_ring = np.zeros(_RECENT)
        self._cycle_count = 0
        self._frames_emitted = 0
        self._chunks_emitted = 0
        self._last_generate_ms = 0.0
        self._last_cycle = {k: 0.0 for k in _CYCLE_KEYS}

        self._workers = [
            threading.Thread(target=self._ingest_loop, daemon=True, name="ftlk-ingest"),
            threading.Thread(target=self._denoise_loop, daemon=True, name="ftlk-denoise"),
            threading.Thread(target=self._decode_loop, daemon=True, name="ftlk-decode"),
        ]
        for w in self._workers:
            w.start()

    # -- controller API ------------------------------------------------------

    def push_signal(self, samples) -> int:
        """samples: iterable of (frame_index, value). Returns count accepted."""
        if self._closed.is_set():
            raise ConfigError("session is closed")
        self._raise_pending_error()
        batch = [(int(i), float(v)) for i, v in samples]
        for i, v in batch:
            if i != self._next_sample:
                raise ConfigError(
                    f"driving sample index {i} out of order (expected {self._next_sample})")
            if not np.isfinite(v):
                raise ConfigError(f"driving sample {i} is not finite")
            self._next_sample += 1
        self._inbox.put(batch)
        return len(batch)

    def next_frames(self, wait: bool = False, timeout: float = 0.05):
        """Drain currently emitted frames (in order, exactly once) and return
        (frames, stats snapshot). With wait=True, blocks up to `timeout` for
        at least one frame."""
        self._raise_pending_error()
        with self._out_cond:
            if wait and not self._out and not self._closed.is_set():
                self._out_cond.wait(timeout)
            frames = list(self._out)
            self._out.clear()
        self._raise_pending_error()
        return frames, self.stats()

    def stats(self) -> StreamStats:
        with self._lock:
            n = min(self._cycle_count, _RECENT)
            mean_cycle = float(np.mean(self._cycle_ring[:n])) if n else 0.0
            fps = (self.cfg.stride * 1000.0 / mean_cycle) if mean_cycle > 0 else 0.0
            return StreamStats(
                startup_ms=max(self._startup_ms, 0.0),
                fps=fps,
                frames_emitted=self._frames_emitted,
                chunks_emitted=self._chunks_emitted,
                generate_ms=self._last_generate_ms,
                cycle=dict(self._last_cycle),
            )

    def persistent_state_nbytes(self) -> int:
        """Deep size of the live session state. With a quiesced pipeline this
        is flat over the stream's lifetime — growth means a leak."""
        for _ in range(50):
            try:
                return _deep_nbytes(self.__dict__)
            except RuntimeError:  # a worker mutated a dict mid-walk; retry
                time.sleep(0.002)
        return _deep_nbytes(self.__dict__)

    def close(self) -> None:
        if self._closed.is_set():
            return
        self._closed.set()
        self._inbox.put(None)
        with self._out_cond:
            self._out_cond.notify_all()
        for w in self._workers:
            w.join(timeout=5.0)

    # -- worker loops --------------------------------------------------------

    def _fail(self, exc) -> None:
        self._error = exc
        self._closed.set()
        with self._out_cond:
            self._out_cond.notify_all()

    def _raise_pending_error(self):
        if self._error is not None:
            raise self._error

    def _ingest_loop(self) -> None:
        cfg = self.cfg
        received = 0
        try:
            while not self._closed.is_set():
                batch = self._inbox.get()
                if batch is None:
                    break
                t0 = time.perf_counter()
                for i, v in batch:
                    self._pending[i] = v
                received += len(batch)
                signal_ms = (time.perf_counter() - t0) * 1000.0
                while received >= (self._next_window + 1) * cfg.stride:
                    c = self._next_window
                    t1 = time.perf_counter()
                    lo = c * cfg.stride - cfg.motion_len
                    window = np.array([self._pending.get(j, 0.0) if j >= 0 else 0.0
                                       for j in range(lo, lo + cfg.chunk_len)])
                    keep_from = (c + 1) * cfg.stride - cfg.motion_len
                    # Rebuild instead of deleting in place: a fresh dict's
                    # footprint depends only on what it holds, so the session's
                    # byte count can't creep with stream age.
                    self._pending = {j: v for j, v in self._pending.items()
                                     if j >= keep_from}
                    self._next_window += 1
                    signal_ms += (time.perf_counter() - t1) * 1000.0
                    # Cycle origin backdated to cover the ingest span, so the
                    # recorded categories can never sum past the true makespan.
                    t_origin = time.perf_counter() - signal_ms / 1000.0
                    self._to_denoise.put((c, window, signal_ms, t_origin))
                    signal_ms = 0.0
        except Exception as exc:  # propagate to the controller
            self._fail(exc)
        finally:
            self._to_denoise.put(None)

    def _denoise_loop(self) -> None:
        cfg = self.cfg
        fn = self._net.as_denoise_fn(self._store)
        try:
            while True:
                item = self._to_denoise.get()
                if item is None:
                    break
                c, window, signal_ms, t_ready = item
                t0 = time.perf_counter()
                rng = rng_for(cfg.seed, STREAM_NOISE, c)
                chunk = few_step_sample(fn, cfg.sampler, self._motion,
                                        self._reference, window, rng)
                denoise_ms = (time.perf_counter() - t0) * 1000.0
                t1 = time.perf_counter()
                if cfg.motion_len:
                    self._motion = chunk.latents[-cfg.motion_len:].copy()
                motion_encode_ms = (time.perf_counter() - t1) * 1000.0
                self._to_decode.put((c, chunk.targets, signal_ms, denoise_ms,
                                     motion_encode_ms, t_ready))
        except Exception as exc:
            self._fail(exc)
        finally:
            self._to_decode.put(None)

    def _decode_loop(self) -> None:
        cfg = self.cfg
        chunk_period = cfg.stride / cfg.target_fps
        next_due = None
        try:
            while True:
                item = self._to_decode.get()
                if item is None:
                    break
                c, targets, signal_ms, denoise_ms, motion_encode_ms, t_ready = item
                if cfg.pacing == "realtime":
                    now = time.perf_counter()
                    if next_due is None:
                        next_due = now
                    if next_due > now:
                        time.sleep(next_due - now)
                    next_due += chunk_period
                t0 = time.perf_counter()
                frames = self.codec.decode(targets)
                decode_ms = (time.perf_counter() - t0) * 1000.0
                emitted = [EmittedFrame(c * cfg.stride + j, c, frames[j])
                           for j in range(len(frames))]
                t_emit = time.perf_counter()
                total_ms = (t_emit - t_ready) * 1000.0
                misc_ms = max(0.0, total_ms - signal_ms - denoise_ms
                              - decode_ms - motion_encode_ms)
                with self._lock:
                    if self._startup_ms < 0:
                        self._startup_ms = (t_emit - self._t_start) * 1000.0
                    if self._last_emit_t >= 0:
                        self._cycle_ring[self._cycle_count % _RECENT] = \
                            (t_emit - self._last_emit_t) * 1000.0
                        self._cycle_count += 1
                    self._last_emit_t = t_emit
                    self._frames_emitted += len(emitted)
                    self._chunks_emitted += 1
                    self._last_generate_ms = denoise_ms + decode_ms
                    self._last_cycle = {
                        "signal_ms": signal_ms,
                        "denoise_ms": denoise_ms,
                        "decode_ms": decode_ms,
                        "motion_encode_ms": motion_encode_ms,
                        "misc_ms": misc_ms,
                    }
                with self._out_cond:
                    self._out.extend(emitted)
                    self._out_cond.notify_all()
        except Exception as exc:
            self._fail(exc)


def start_stream(store: ParamStore, net_cfg: NetConfig, codec: Codec,
                 reference_frame: np.ndarray, cfg: StreamConfig) -> StreamSession:
    return StreamSession(store, net_cfg, codec, reference_frame, cfg)


def run_longform(session: StreamSession, total_seconds: float, signal: np.ndarray,
                 *, world=None, identity=None, bucket_s: float = 60.0) -> dict:
    """Feed a scripted signal through a live session and report per-bucket
    drift/sync plus a persistent-memory trajectory sampled at chunk marks."""
    from .metrics import consistency as metric_consistency
    from .metrics import identity_drift as metric_drift
    from .metrics import toy_sync as metric_sync

    cfg = session.cfg
    n_frames = int(round(total_seconds * cfg.target_fps))
    signal = np.asarray(signal, dtype=np.float64)
    if len(signal) < n_frames:
        raise ConfigError(f"scripted signal covers {len(signal)} frames; "
                          f"{n_frames} required for {total_seconds}s")
    n_chunks = int(np.ceil(n_frames / cfg.stride))
    need = n_chunks * cfg.stride
    if len(signal) < need:
        signal = np.concatenate([signal, np.zeros(need - len(signal))])
    frames = []
    memory = {}
    fed = 0
    deadline = time.monotonic() + max(60.0, total_seconds * 20)
    while len(frames) < need:
        feed_target = min(need, (len(frames) // cfg.stride + 3) * cfg.stride)
        if fed < feed_target:
            session.push_signal((i, signal[i]) for i in range(fed, feed_target))
            fed = feed_target
        got, _ = session.next_frames(wait=True, timeout=0.1)
        frames.extend(got)
        # One drain can span several chunk boundaries when the producer runs
        # ahead, so check every frame, not just the last one.
        for f in got:
            done = f.chunk + 1
            if done in (10, n_chunks) or done % 100 == 0:
                memory.setdefault(done, session.persistent_state_nbytes())
        if time.monotonic() > deadline:
            raise TimeoutError("stream stalled")
    states = np.stack([f.state for f in frames[:n_frames]])
    bucket = max(2, int(round(bucket_s * cfg.target_fps)))
    buckets = []
    anchor = None
    for bi, lo in enumerate(range(0, n_frames, bucket)):
        hi = min(lo + bucket, n_frames)
        mean = states[lo:hi].mean(axis=0)
        if anchor is None:
            anchor = mean
        entry = {"bucket": bi, "start_frame": lo,
                 "consistency": metric_consistency(states[lo:hi]),
                 "drift_from_start": float(np.linalg.norm(mean - anchor))}
        if world is not None:
            entry["toy_sync"] = metric_sync(signal[lo:hi], world.mouth(states[lo:hi]))
            if identity is not None:
                entry["identity_drift"] = metric_drift(states[lo:hi], signal[lo:hi],
                                                       world, identity)
        buckets.append(entry)
    return {"total_seconds": total_seconds, "frames": n_frames,
            "buckets": buckets, "memory_nbytes": memory,
            "stats": session.stats()}
