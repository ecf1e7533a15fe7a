"""Toy metric suite and the two ablation harnesses.

toy_sync: lag-maximized Pearson correlation between tanh(driving signal) and
the mouth channel of decoded frames — the stand-in for perceptual lip-sync
scores. identity_drift: distance between a bucket's mean frame and the
drive-and-identity-conditioned fixed point of the dynamics. consistency:
inverse of mean squared frame-to-frame jerk.

The evaluation harness mirrors the streaming engine's chunk geometry exactly
(cold-start reference motion, stride L_c - L_m, per-chunk seeded noise), so
metrics measured here transfer to streamed output.
"""

from dataclasses import dataclass
import time

import numpy as np

from .diffusion import LatentChunk, NoiseSchedule, SamplerPlan, assemble_input, few_step_sample
from .distill import DistillConfig, distill
from .errors import ConfigError
from .net import Denoiser, NetConfig, ParamStore
from .seeding import EVAL, STREAM_NOISE, rng_for
from .world import Codec, World, sample_driving_signal, sample_identity, simulate_sequence

MAX_SYNC_LAG = 3


def toy_sync(signal: np.ndarray, mouth: np.ndarray, max_lag: int = MAX_SYNC_LAG):
    """Max over lags 0..max_lag of Pearson corr(tanh(signal), mouth shifted).

    Returns None when either series is constant (correlation undefined).
    """
    drive = np.tanh(np.asarray(signal, dtype=np.float64))
    mouth = np.asarray(mouth, dtype=np.float64)
    n = min(len(drive), len(mouth))
    if n < 2:
        return None
    drive, mouth = drive[:n], mouth[:n]
    if np.ptp(drive) == 0.0 or np.ptp(mouth) == 0.0:
        return None
    best = None
    for lag in range(0, max_lag + 1):
        a = drive[: n - lag]
        b = mouth[lag:]
        if len(a) < 2 or np.std(a) == 0.0 or np.std(b) == 0.0:
            continue
        r = float(np.corrcoef(a, b)[0, 1])
        if best is None or r > best:
            best = r
    return best


def consistency(frames: np.ndarray) -> float:
    """1 / (1 + mean squared second difference); 1.0 for constant output."""
    frames = np.asarray(frames, dtype=np.float64)
    if len(frames) < 3:
        return 1.0
    jerk = frames[2:] - 2.0 * frames[1:-1] + frames[:-2]
    return float(1.0 / (1.0 + np.mean(jerk * jerk)))


def identity_drift(frames: np.ndarray, signal: np.ndarray, world: World,
                   identity: np.ndarray) -> float:
    """Distance from the bucket-mean frame to the conditioned fixed point
    (I - A)^-1 (b * mean tanh(a) + P * identity)."""
    frames = np.asarray(frames, dtype=np.float64)
    mean_tanh = float(np.mean(np.tanh(np.asarray(signal, dtype=np.float64))))
    rhs = world.b * mean_tanh + world.P @ np.asarray(identity, dtype=np.float64)
    target = np.linalg.solve(np.eye(world.spec.state_dim) - world.A, rhs)
    return float(np.linalg.norm(np.mean(frames, axis=0) - target))


@dataclass
class StreamContext:
    """Everything a generator needs to know about one evaluation stream."""
    index: int
    seed: int
    identity: np.ndarray
    signal: np.ndarray
    reference_frame: np.ndarray
    reference_latent: np.ndarray


class NetGenerator:
    """Few-step sampling generator backed by a checkpointed denoiser."""

    def __init__(self, store: ParamStore, net_cfg: NetConfig, plan: SamplerPlan):
        self.net = Denoiser(net_cfg)
        self.store = store
        self.plan = plan

    def chunk(self, ctx: StreamContext, chunk_index: int, motion: np.ndarray,
              sig: np.ndarray, rng) -> LatentChunk:
        return few_step_sample(self.net.as_denoise_fn(self.store), self.plan,
                               motion, ctx.reference_latent, sig, rng)


class OracleGenerator:
    """Emits encoded ground-truth frames for the stream's own dynamics —
    the exact-metric reference point for the evaluation harness."""

    def __init__(self, world: World, codec: Codec):
        self.world = world
        self.codec = codec
        self._cache = {}

    def _latents(self, ctx: StreamContext):
        key = (ctx.index, ctx.seed)
        if key not in self._cache:
            from .world import DrivingSignal
            seq = simulate_sequence(self.world, DrivingSignal(ctx.signal),
                                    ctx.identity, ctx.seed)
            self._cache[key] = self.codec.encode(seq.frames)
        return self._cache[key]

    def chunk(self, ctx: StreamContext, chunk_index: int, motion: np.ndarray,
              sig: np.ndarray, rng) -> LatentChunk:
        lm = len(motion)
        lc = len(sig)
        stride = lc - lm
        gt = self._latents(ctx)
        targets = gt[chunk_index * stride: chunk_index * stride + stride]
        return LatentChunk(np.concatenate([np.atleast_2d(motion).reshape(lm, -1),
                                           targets], axis=0), lm)


def rollout_stream(generator, ctx: StreamContext, n_frames: int, *,
                   chunk_len: int = 9, motion_len: int = 2):
    """Chunked autoregressive generation mirroring the streaming engine:
    cold-start motion = encoded reference, signal index j drives frame j,
    motion-row pseudo-signal before frame 0 is zero. Returns target latents
    (n_frames, D) plus the per-chunk conditioning motions."""
    stride = chunk_len - motion_len
    n_chunks = int(np.ceil(n_frames / stride))
    motion = np.repeat(ctx.reference_latent[None, :], motion_len, axis=0)
    out = []
    motions = []
    n_sig = len(ctx.signal)
    for c in range(n_chunks):
        lo = c * stride - motion_len
        sig = np.array([ctx.signal[j] if 0 <= j < n_sig else 0.0
                        for j in range(lo, lo + chunk_len)])
        rng = rng_for(ctx.seed, STREAM_NOISE, c)
        chunk = generator.chunk(ctx, c, motion, sig, rng)
        motions.append(motion)
        out.append(chunk.targets)
        motion = chunk.latents[-motion_len:] if motion_len else motion
    return np.concatenate(out, axis=0)[:n_frames], motions


def make_stream_context(world: World, codec: Codec, seed, index: int,
                        n_frames: int) -> StreamContext:
    stream_seed = int(rng_for(seed, EVAL, index).integers(0, 2 ** 63))
    identity = sample_identity(stream_seed, world.spec.identity_dim)
    signal = sample_driving_signal(stream_seed, n_frames).samples
    reference = world.P @ identity
    return StreamContext(index, stream_seed, identity, signal, reference,
                         codec.encode(reference[None, :])[0])


def evaluate(generator, world: World, codec: Codec, *, horizon_s: float,
             seed, fps: float = 25.0, chunk_len: int = 9, motion_len: int = 2,
             bucket_s: float = 10.0, n_streams: int = 2) -> dict:
    """SyncReport + DriftReport per bucket, averaged over eval streams."""
    n_frames = int(round(horizon_s * fps))
    if n_frames < 2:
        raise ConfigError("evaluation horizon must cover at least 2 frames")
    bucket = max(2, int(round(bucket_s * fps)))
    starts = list(range(0, n_frames, bucket))
    acc = [{"toy_sync": [], "identity_drift": [], "consistency": []} for _ in starts]
    for i in range(n_streams):
        ctx = make_stream_context(world, codec, seed, i, n_frames)
        latents, _ = rollout_stream(generator, ctx, n_frames,
                                    chunk_len=chunk_len, motion_len=motion_len)
        frames = codec.decode(latents)
        mouth = world.mouth(frames)
        for bi, lo in enumerate(starts):
            hi = min(lo + bucket, n_frames)
            s = toy_sync(ctx.signal[lo:hi], mouth[lo:hi])
            if s is not None:
                acc[bi]["toy_sync"].append(s)
            acc[bi]["identity_drift"].append(
                identity_drift(frames[lo:hi], ctx.signal[lo:hi], world, ctx.identity))
            acc[bi]["consistency"].append(consistency(frames[lo:hi]))
    per_bucket = []
    for bi, lo in enumerate(starts):
        vals = acc[bi]
        per_bucket.append({
            "bucket": bi,
            "start_frame": lo,
            "toy_sync": float(np.mean(vals["toy_sync"])) if vals["toy_sync"] else None,
            "identity_drift": float(np.mean(vals["identity_drift"])),
            "consistency": float(np.mean(vals["consistency"])),
        })
    syncs = [b["toy_sync"] for b in per_bucket if b["toy_sync"] is not None]
    return {
        "horizon_s": horizon_s,
        "n_streams": n_streams,
        "per_bucket": per_bucket,
        "toy_sync": float(np.mean(syncs)) if syncs else None,
        "last_bucket_sync": per_bucket[-1]["toy_sync"],
        "identity_drift": float(np.mean([b["identity_drift"] for b in per_bucket])),
        "consistency": float(np.mean([b["consistency"] for b in per_bucket])),
    }


def generated_stream_quality(gen_store: ParamStore, judge_store: ParamStore,
                             net_cfg: NetConfig, world: World, codec: Codec,
                             plan: SamplerPlan, seed, *, n_frames: int = 140,
                             chunk_len: int = 9, motion_len: int = 2,
                             t: float = 0.5, n_streams: int = 2) -> float:
    """Quality of generated streams = negated held-out denoising MSE of a
    frozen judge on the generated chunks (chunks further off the judge's
    manifold denoise worse)."""
    gen = NetGenerator(gen_store, net_cfg, plan)
    judge = Denoiser(net_cfg)
    sched = NoiseSchedule()
    stride = chunk_len - motion_len
    total, count = 0.0, 0
    for i in range(n_streams):
        ctx = make_stream_context(world, codec, (seed, 101), i, n_frames)
        latents, motions = rollout_stream(gen, ctx, n_frames,
                                          chunk_len=chunk_len, motion_len=motion_len)
        rng = rng_for(ctx.seed, EVAL, 202)
        for c, motion in enumerate(motions):
            targets = latents[c * stride: (c + 1) * stride]
            if len(targets) < stride:
                break
            lo = c * stride - motion_len
            sig = np.array([ctx.signal[j] if 0 <= j < len(ctx.signal) else 0.0
                            for j in range(lo, lo + chunk_len)])
            noise = rng.standard_normal(targets.shape)
            comp = assemble_input(sched, motion, targets, ctx.reference_latent,
                                  sig, t, noise)
            pred = judge.forward(judge_store, comp)
            resid = pred[motion_len:] - targets
            total += float(np.mean(resid * resid))
            count += 1
    return -total / max(count, 1)


CHUNK_SCHEDULE_TABLE = (
    ("fixed_1", "fixed", 1),
    ("fixed_3", "fixed", 3),
    ("fixed_5", "fixed", 5),
    ("random_1_5", "random_uniform", 5),
)


def ablate_chunks(sft: ParamStore, net_cfg: NetConfig, base_cfg: DistillConfig,
                  dataset, codec: Codec, world: World, seeds, *, budget_steps: int,
                  chunk_len: int = 9, motion_len: int = 2,
                  short_s: float = 10.0, long_s: float = 120.0) -> dict:
    """Distill under each chunk schedule with shared seeds; report training
    wall-clock and short/long-horizon metrics (paired medians)."""
    from dataclasses import replace
    rows = []
    for name, schedule, k in CHUNK_SCHEDULE_TABLE:
        cfg = replace(base_cfg, chunk_schedule=schedule,
                      fixed_k=(k if schedule == "fixed" else base_cfg.fixed_k),
                      k_max=max(k, base_cfg.k_max if schedule != "fixed" else k),
                      steps=budget_steps)
        walls, shorts, longs, drifts = [], [], [], []
        for seed in seeds:
            t0 = time.perf_counter()
            gen, _ = distill(sft, net_cfg, cfg, dataset, codec, seed,
                             chunk_len=chunk_len, motion_len=motion_len)
            walls.append(time.perf_counter() - t0)
            g = NetGenerator(gen, net_cfg, cfg.sampler)
            short = evaluate(g, world, codec, horizon_s=short_s, seed=(seed, 11),
                             chunk_len=chunk_len, motion_len=motion_len)
            long = evaluate(g, world, codec, horizon_s=long_s, seed=(seed, 12),
                            chunk_len=chunk_len, motion_len=motion_len)
            shorts.append(short["toy_sync"])
            longs.append(long["last_bucket_sync"])
            drifts.append(long["identity_drift"])
        rows.append({
            "schedule": name,
            "wall_clock_s": float(np.median(walls)),
            "short_sync": _median(shorts),
            "long_sync": _median(longs),
            "identity_drift": float(np.median(drifts)),
        })
    return {"budget_steps": budget_steps, "seeds": list(map(int, _seed_ints(seeds))),
            "rows": rows}


MOTION_CELLS = tuple(
    {"motion_source": src, "motion_noise": noise, "motion_in_loss": loss}
    for src in ("ground_truth", "predicted")
    for noise in (True, False)
    for loss in (True, False)
)


def ablate_motion(sft: ParamStore, net_cfg: NetConfig, base_cfg: DistillConfig,
                  dataset, codec: Codec, world: World, seeds, *, budget_steps: int,
                  chunk_len: int = 9, motion_len: int = 2) -> dict:
    """Distill once per motion-conditioning cell (2 sources x noise on/off x
    loss on/off); quality = negated held-out judge denoising MSE of the
    resulting generator's streams."""
    from dataclasses import replace
    rows = []
    for cell in MOTION_CELLS:
        cfg = replace(base_cfg, steps=budget_steps, **cell)
        qualities, syncs = [], []
        for seed in seeds:
            gen, _ = distill(sft, net_cfg, cfg, dataset, codec, seed,
                             chunk_len=chunk_len, motion_len=motion_len)
            qualities.append(generated_stream_quality(
                gen, sft, net_cfg, world, codec, cfg.sampler, (seed, 21),
                chunk_len=chunk_len, motion_len=motion_len))
            g = NetGenerator(gen, net_cfg, cfg.sampler)
            rep = evaluate(g, world, codec, horizon_s=10.0, seed=(seed, 22),
                           chunk_len=chunk_len, motion_len=motion_len)
            syncs.append(rep["toy_sync"])
        rows.append({
            **cell,
            "quality": float(np.median(qualities)),
            "toy_sync": _median(syncs),
        })
    return {"budget_steps": budget_steps, "seeds": list(map(int, _seed_ints(seeds))),
            "rows": rows}


def _median(values):
    vals = [v for v in values if v is not None]
    return float(np.median(vals)) if vals else None


def _seed_ints(seeds):
    for s in seeds:
        yield s if isinstance(s, int) else hash(tuple(s)) & 0xFFFFFFFF
