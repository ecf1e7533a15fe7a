"""Training procedures: teacher pretraining, multi-length adaptation, and the
distribution-matching distillation loop with K-chunk retrospective rollout and
stochastic truncation.

The distillation step draws a rollout depth k and a ladder index t', generates
k chunks autoregressively (chunk j > 1 conditioned on chunk j-1's own output
tail), then recomputes only the t'-th denoising step of chunk k with gradient
tracking. The update direction is the difference of two score estimates on a
re-noised copy of that step's prediction; everything upstream is a constant.

Randomness discipline: the (k, t') draw, the per-chunk rollout noise, and the
re-noising draws all come from separate named substreams, so forcing (k, t')
leaves every other draw unchanged. The estimator-enumeration tests rely on
this: averaging forced runs over the (k, t') support reproduces the
expectation of the stochastic estimator exactly.
"""

from dataclasses import dataclass, field
import time

import numpy as np

from .diffusion import (CompositeInput, LatentChunk, NoiseSchedule, SamplerPlan,
                        assemble_input, composite_from_state, few_step_sample,
                        forward_diffuse, score_from_x0)
from .errors import ConfigError, NumericError
from .net import Denoiser, NetConfig, ParamStore, make_optimizer
from .seeding import DMD, EVAL, TRAIN, rng_for
from .world import Dataset

CHUNK_SCHEDULES = ("fixed", "random_uniform")
MOTION_SOURCES = ("ground_truth", "predicted")


@dataclass(frozen=True)
class DistillConfig:
    k_max: int = 5
    chunk_schedule: str = "random_uniform"
    fixed_k: int = 1
    generator_lr: float = 2e-4
    fake_lr: float = 4e-5
    update_ratio: int = 5
    sampler: SamplerPlan = field(default_factory=SamplerPlan)
    t_min: float = 0.02
    motion_source: str = "predicted"
    motion_noise: bool = True
    t_m_max: float = 0.25
    motion_in_loss: bool = False
    steps: int = 200
    batch_size: int = 8
    normalize_d: bool = False
    optimizer: str = "sgd"

    def validate(self) -> list:
        problems = []
        if self.k_max < 1:
            problems.append("distill.k_max must be >= 1")
        if self.batch_size < 1:
            problems.append("distill.batch_size must be >= 1")
        if self.chunk_schedule not in CHUNK_SCHEDULES:
            problems.append(f"distill.chunk_schedule must be one of {CHUNK_SCHEDULES}")
        if not (1 <= self.fixed_k <= self.k_max):
            problems.append("distill.fixed_k must lie in 1..k_max")
        if self.update_ratio < 1:
            problems.append("distill.update_ratio must be >= 1")
        if not (0.0 < self.t_min < 1.0):
            problems.append("distill.t_min must lie in (0, 1)")
        if self.motion_source not in MOTION_SOURCES:
            problems.append(f"distill.motion_source must be one of {MOTION_SOURCES}")
        if not (0.0 <= self.t_m_max < 1.0):
            problems.append("distill.t_m_max must lie in [0, 1)")
        if self.steps < 0:
            problems.append("distill.steps must be >= 0")
        if self.generator_lr < 0 or self.fake_lr < 0:
            problems.append("distill learning rates must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            problems.append("distill.optimizer must be 'sgd' or 'adam'")
        return problems

    def __post_init__(self):
        problems = self.validate()
        if problems:
            raise ConfigError(problems)


@dataclass
class RolloutTrace:
    chunks: list
    sampled_k: int
    sampled_t_prime_index: int
    provenance: list  # one of {"ground_truth", "self_generated"} per chunk


@dataclass
class StepReport:
    k: int
    t_prime_index: int
    trace: RolloutTrace
    d: np.ndarray
    cotangent: np.ndarray
    d_norm: float
    grad_norm: float
    wall_ms: float


@dataclass
class FakeStepReport:
    k: int
    t: float
    loss: float
    wall_ms: float


def draw_window(dataset: Dataset, codec, rng, chunk_len: int, motion_len: int,
                horizon_chunks: int = 1) -> dict:
    """One training batch: encoded ground-truth latents spanning
    horizon_chunks overlapping chunks, the driving signal, and a reference
    latent drawn from outside the window."""
    stride = chunk_len - motion_len
    n = horizon_chunks * stride + motion_len
    frames, signal, ref_frame = dataset.sample_window(rng, n)
    return {
        "latents": codec.encode(frames),
        "signal": np.asarray(signal, dtype=np.float64),
        "reference": codec.encode(ref_frame[None, :])[0],
    }


def draw_batch(dataset: Dataset, codec, rng, n: int, chunk_len: int,
               motion_len: int, horizon_chunks: int = 1) -> list:
    return [draw_window(dataset, codec, rng, chunk_len, motion_len,
                        horizon_chunks) for _ in range(n)]


def _as_windows(batch) -> list:
    if isinstance(batch, dict):
        return [batch]
    windows = list(batch) if batch is not None else []
    if not windows:
        raise ConfigError("empty batch")
    return windows


def _window_checked(batch: dict, chunk_len: int, motion_len: int, k: int) -> None:
    if batch is None or len(batch.get("latents", ())) == 0:
        raise ConfigError("empty batch")
    stride = chunk_len - motion_len
    need = (k - 1) * stride + chunk_len
    if len(batch["latents"]) < need or len(batch["signal"]) < need:
        raise ConfigError(f"batch holds {len(batch['latents'])} frames; "
                          f"{need} required for a {k}-chunk rollout")


def denoising_step(store: ParamStore, net: Denoiser, comp: CompositeInput,
                   clean_targets: np.ndarray, opt=None) -> float:
    """Standard x0 regression over target rows; accumulates grads, optionally
    steps. Returns the scalar loss."""
    pred, cache = net.forward_with_cache(store, comp)
    lm = comp.motion_len
    resid = pred[lm:] - clean_targets
    n = resid.size
    loss = float(np.sum(resid * resid) / n)
    cot = np.zeros_like(pred)
    cot[lm:] = 2.0 * resid / n
    store.zero_grads()
    net.backward(store, comp, cot, cache=cache)
    if not np.isfinite(loss):
        raise NumericError(f"denoising loss diverged ({loss})")
    if opt is not None:
        opt.step(store)
    return loss


def pretrain_teacher(dataset: Dataset, codec, net_cfg: NetConfig, steps: int, seed: int,
                     *, chunk_len: int = 9, motion_len: int = 2,
                     lr: float = 1e-3, optimizer: str = "adam",
                     log_every: int = 0) -> ParamStore:
    """Stage-0 plumbing: denoising regression on data windows."""
    net = Denoiser(net_cfg)
    store = net.init_params(seed)
    opt = make_optimizer(optimizer, lr)
    rng = rng_for(seed, TRAIN)
    sched = NoiseSchedule()
    for step in range(steps):
        frames, signal, ref_frame = dataset.sample_window(rng, chunk_len)
        latents = codec.encode(frames)
        ref = codec.encode(ref_frame[None, :])[0]
        t = float(rng.uniform(0.0, 1.0))
        noise = rng.standard_normal((chunk_len - motion_len, latents.shape[1]))
        comp = assemble_input(sched, latents[:motion_len], latents[motion_len:],
                              ref, signal, t, noise)
        loss = denoising_step(store, net, comp, latents[motion_len:], opt)
        if log_every and step % log_every == 0:
            print(f"pretrain step {step}: loss {loss:.5f}")
    return store


def stage1_adapt(teacher: ParamStore, dataset: Dataset, codec, net_cfg: NetConfig,
                 buckets, steps: int, seed: int, *, motion_len: int = 2,
                 lr: float = 5e-4, optimizer: str = "adam") -> ParamStore:
    """Stage-1 adaptation: same regression, batches drawn per chunk-length
    bucket (one uniformly random bucket per step)."""
    buckets = [int(b) for b in buckets]
    if not buckets:
        raise ConfigError("stage1_adapt needs at least one bucket")
    for b in buckets:
        if b < motion_len + 1:
            raise ConfigError(f"bucket length {b} < motion window {motion_len} + 1")
    net = Denoiser(net_cfg)
    store = teacher.clone()
    opt = make_optimizer(optimizer, lr)
    rng = rng_for(seed, TRAIN)
    sched = NoiseSchedule()
    for _ in range(steps):
        lc = buckets[int(rng.integers(0, len(buckets)))]
        frames, signal, ref_frame = dataset.sample_window(rng, lc)
        latents = codec.encode(frames)
        ref = codec.encode(ref_frame[None, :])[0]
        t = float(rng.uniform(0.0, 1.0))
        noise = rng.standard_normal((lc - motion_len, latents.shape[1]))
        comp = assemble_input(sched, latents[:motion_len], latents[motion_len:],
                              ref, signal, t, noise)
        denoising_step(store, net, comp, latents[motion_len:], opt)
    return store


def dmd_direction(schedule: NoiseSchedule, z_tilde: np.ndarray, t: float,
                  x0_real: np.ndarray, x0_fake: np.ndarray,
                  normalize: bool = False) -> np.ndarray:
    """Score difference s_real - s_fake at the re-noised sample."""
    d = (score_from_x0(schedule, z_tilde, t, x0_real)
         - score_from_x0(schedule, z_tilde, t, x0_fake))
    if not np.all(np.isfinite(d)):
        raise NumericError("score difference contains non-finite values")
    if normalize:
        d = d / (np.mean(np.abs(d)) + 1e-8)
    return d


def dmd_cotangent(schedule: NoiseSchedule, d: np.ndarray, t: float) -> np.ndarray:
    """Loss cotangent on the generator sample: the distribution-matching
    gradient is -(s_real - s_fake) * d(z_tilde)/d(sample), and the re-noising
    map contributes the chain factor alpha(t)."""
    return -float(schedule.alpha(t)) * d


def _rollout(net: Denoiser, gen: ParamStore, plan: SamplerPlan, batch: dict,
             k: int, chunk_len: int, motion_len: int, seed, noise_key: tuple):
    """Autoregressive k-chunk generation; chunk 1 from ground-truth motion,
    later chunks from the previous chunk's own output tail. Chunk j's noise
    comes from the substream (seed, DMD, *noise_key, j)."""
    stride = chunk_len - motion_len
    denoise_fn = net.as_denoise_fn(gen)
    chunks, traces, provenance, motions = [], [], [], []
    motion = batch["latents"][:motion_len]
    for j in range(k):
        sig = batch["signal"][j * stride: j * stride + chunk_len]
        trace = []
        rng = rng_for(seed, DMD, noise_key, j)
        chunk = few_step_sample(denoise_fn, plan, motion, batch["reference"],
                                sig, rng, trace=trace)
        chunks.append(chunk)
        traces.append(trace)
        provenance.append("ground_truth" if j == 0 else "self_generated")
        motions.append(motion)
        motion = chunk.latents[-motion_len:] if motion_len else motion[:0]
    return chunks, traces, provenance, motions


def _score_composite(batch: dict, z_state: np.ndarray, sig: np.ndarray, t: float,
                     k: int, rollout_motion: np.ndarray, cfg: DistillConfig,
                     chunk_len: int, motion_len: int, rng) -> CompositeInput:
    """Composite fed to both score networks: target rows are the re-noised
    sample, motion rows follow motion_source with optional extra noise."""
    stride = chunk_len - motion_len
    if cfg.motion_source == "ground_truth":
        base = (k - 1) * stride
        motion = batch["latents"][base: base + motion_len]
    else:
        motion = rollout_motion
    # Draw unconditionally so the stream layout does not depend on the flags.
    t_m = float(rng.uniform(0.0, max(cfg.t_m_max, 1e-12)))
    eps_m = rng.standard_normal((motion_len, z_state.shape[1]))
    if cfg.motion_noise and motion_len:
        motion = forward_diffuse(cfg.sampler.schedule, motion, t_m, eps_m)
        motion_t = np.full(motion_len, t_m)
    else:
        motion_t = np.zeros(motion_len)
    return composite_from_state(motion, z_state, batch["reference"], sig, t,
                                motion_t=motion_t)


def dmd_generator_step(gen: ParamStore, real: ParamStore, fake: ParamStore,
                       batch, cfg: DistillConfig, net_cfg: NetConfig,
                       seed, step: int = 0, *, chunk_len: int = 9,
                       motion_len: int = 2, force_k=None, force_t_prime=None,
                       opt=None, apply: bool = True) -> StepReport:
    """One distribution-matching update of the generator.

    `batch` is one window dict or a list of them; gradients are averaged over
    the list before the single parameter update. The truncation draw (k, t')
    and the re-noising level t are shared across the batch; rollout noise and
    re-noising epsilon are per-window substreams.

    `force_k` / `force_t_prime` pin the truncation draw while every other
    random draw stays identical (dedicated substreams); the estimator tests
    enumerate the support this way. With apply=False the gradient is left in
    `gen.grads` and no parameter moves.
    """
    t0 = time.perf_counter()
    windows = _as_windows(batch)
    plan = cfg.sampler
    net = Denoiser(net_cfg)
    rng_choice = rng_for(seed, DMD, step, 0)
    if cfg.chunk_schedule == "fixed":
        k = cfg.fixed_k
    else:
        k = int(rng_choice.integers(1, cfg.k_max + 1))
    t_idx = int(rng_choice.integers(0, plan.steps))
    if force_k is not None:
        k = int(force_k)
        if not (1 <= k <= cfg.k_max):
            raise ConfigError(f"forced k={k} outside 1..{cfg.k_max}")
    if force_t_prime is not None:
        t_idx = int(force_t_prime)
        if not (0 <= t_idx < plan.steps):
            raise ConfigError(f"forced t' index {t_idx} outside the ladder")
    for w in windows:
        _window_checked(w, chunk_len, motion_len, k)

    stride = chunk_len - motion_len
    rows = slice(0, chunk_len) if cfg.motion_in_loss else slice(motion_len, chunk_len)
    t = cfg.t_min + (1.0 - cfg.t_min) * float(rng_for(seed, DMD, step, 2).uniform())

    gen.zero_grads()
    rep_trace = rep_d = rep_cot = None
    d_norms = []
    for b, w in enumerate(windows):
        chunks, traces, provenance, motions = _rollout(
            net, gen, plan, w, k, chunk_len, motion_len, seed, (step, 1, b))

        # Recompute the t'-th denoising step of chunk k with gradient tracking.
        sig = w["signal"][(k - 1) * stride: (k - 1) * stride + chunk_len]
        t_step, z_step, _ = traces[k - 1][t_idx]
        comp = composite_from_state(motions[k - 1], z_step, w["reference"], sig, t_step)
        x0_full, cache = net.forward_with_cache(gen, comp)
        sample = x0_full[rows]

        rng_b = rng_for(seed, DMD, step, 2, b)
        eps = rng_b.standard_normal(sample.shape)
        z_tilde = forward_diffuse(plan.schedule, sample, t, eps)
        z_targets = z_tilde[motion_len:] if cfg.motion_in_loss else z_tilde

        comp_score = _score_composite(w, z_targets, sig, t, k, motions[k - 1],
                                      cfg, chunk_len, motion_len, rng_b)
        x0_real = net.forward(real, comp_score)
        x0_fake = net.forward(fake, comp_score)
        d = dmd_direction(plan.schedule, z_tilde, t, x0_real[rows], x0_fake[rows],
                          normalize=cfg.normalize_d)

        cot = np.zeros_like(x0_full)
        cot[rows] = dmd_cotangent(plan.schedule, d, t)
        net.backward(gen, comp, cot, cache=cache)
        d_norms.append(float(np.linalg.norm(d)))
        if b == 0:
            rep_trace = RolloutTrace(chunks, k, t_idx, provenance)
            rep_d, rep_cot = d, cot

    if len(windows) > 1:
        gen.scale_grads(1.0 / len(windows))
    grad_norm = gen.grad_norm()
    if not np.isfinite(grad_norm):
        raise NumericError("generator gradient diverged")
    if apply:
        (opt or make_optimizer("sgd", cfg.generator_lr)).step(gen)
    wall_ms = (time.perf_counter() - t0) * 1000.0
    return StepReport(k, t_idx, rep_trace, rep_d, rep_cot,
                      float(np.mean(d_norms)), grad_norm, wall_ms)


def fake_score_step(fake: ParamStore, gen: ParamStore, batch,
                    cfg: DistillConfig, net_cfg: NetConfig, seed,
                    step: int = 0, *, chunk_len: int = 9, motion_len: int = 2,
                    opt=None, apply: bool = True) -> FakeStepReport:
    """Denoising regression of the fake score net on fresh generator samples
    (no gradient reaches the generator), under the same motion-conditioning
    protocol the distillation step uses to query it. Like the generator step,
    `batch` may be one window or a list; gradients average over the list."""
    t0 = time.perf_counter()
    windows = _as_windows(batch)
    plan = cfg.sampler
    net = Denoiser(net_cfg)
    rng_choice = rng_for(seed, DMD, step, 3)
    if cfg.chunk_schedule == "fixed":
        k = cfg.fixed_k
    else:
        k = int(rng_choice.integers(1, cfg.k_max + 1))
    for w in windows:
        _window_checked(w, chunk_len, motion_len, k)

    stride = chunk_len - motion_len
    t = cfg.t_min + (1.0 - cfg.t_min) * float(rng_for(seed, DMD, step, 5).uniform())

    fake.zero_grads()
    loss_sum = 0.0
    for b, w in enumerate(windows):
        chunks, _, _, motions = _rollout(net, gen, plan, w, k, chunk_len,
                                         motion_len, seed, (step, 4, b))
        sample = chunks[-1].targets
        sig = w["signal"][(k - 1) * stride: (k - 1) * stride + chunk_len]

        rng_b = rng_for(seed, DMD, step, 5, b)
        eps = rng_b.standard_normal(sample.shape)
        z_t = forward_diffuse(plan.schedule, sample, t, eps)
        comp = _score_composite(w, z_t, sig, t, k, motions[-1], cfg,
                                chunk_len, motion_len, rng_b)

        pred, cache = net.forward_with_cache(fake, comp)
        resid = pred[motion_len:] - sample
        targets_clean = None
        if cfg.motion_in_loss and motion_len:
            if cfg.motion_source == "ground_truth":
                base = (k - 1) * stride
                targets_clean = w["latents"][base: base + motion_len]
            else:
                targets_clean = motions[-1]
        n = resid.size + (targets_clean.size if targets_clean is not None else 0)
        loss = float(np.sum(resid * resid))
        cot = np.zeros_like(pred)
        cot[motion_len:] = 2.0 * resid / n
        if targets_clean is not None:
            resid_m = pred[:motion_len] - targets_clean
            loss += float(np.sum(resid_m * resid_m))
            cot[:motion_len] = 2.0 * resid_m / n
        loss /= n
        if not np.isfinite(loss):
            raise NumericError(f"fake-score loss diverged ({loss})")
        net.backward(fake, comp, cot, cache=cache)
        loss_sum += loss

    if len(windows) > 1:
        fake.scale_grads(1.0 / len(windows))
    if apply:
        (opt or make_optimizer("sgd", cfg.fake_lr)).step(fake)
    return FakeStepReport(k, t, loss_sum / len(windows),
                          (time.perf_counter() - t0) * 1000.0)


def distill(sft: ParamStore, net_cfg: NetConfig, cfg: DistillConfig,
            dataset: Dataset, codec, seed, *, chunk_len: int = 9,
            motion_len: int = 2, log_fn=None):
    """Full stage-2 loop. Returns (generator store, list of log dicts).

    Per generator update: cfg.update_ratio fake-score updates first (the fake
    net must drift off the frozen real net before the score difference is
    informative), then one generator update.
    """
    gen = sft.clone()
    fake = sft.clone()
    real = sft.clone()  # frozen; never stepped
    gen_opt = make_optimizer(cfg.optimizer, cfg.generator_lr)
    fake_opt = make_optimizer(cfg.optimizer, cfg.fake_lr)
    batch_rng = rng_for(seed, DMD, 6)
    log = []
    for step in range(cfg.steps):
        for sub in range(cfg.update_ratio):
            batch = draw_batch(dataset, codec, batch_rng, cfg.batch_size,
                               chunk_len, motion_len, horizon_chunks=cfg.k_max)
            fake_score_step(fake, gen, batch, cfg, net_cfg, seed,
                            step=(step, 7, sub), chunk_len=chunk_len,
                            motion_len=motion_len, opt=fake_opt)
        batch = draw_batch(dataset, codec, batch_rng, cfg.batch_size,
                           chunk_len, motion_len, horizon_chunks=cfg.k_max)
        rep = dmd_generator_step(gen, real, fake, batch, cfg, net_cfg, seed,
                                 step=step, chunk_len=chunk_len,
                                 motion_len=motion_len, opt=gen_opt)
        line = {"step": step, "k": rep.k, "t_prime": rep.t_prime_index,
                "grad_norm": rep.grad_norm, "d_norm": rep.d_norm,
                "wall_ms": rep.wall_ms}
        log.append(line)
        if log_fn is not None:
            log_fn(line)
    return gen, log


def heldout_denoising_mse(store: ParamStore, net_cfg: NetConfig, dataset: Dataset,
                          codec, *, t: float, n: int, seed, chunk_len: int = 9,
                          motion_len: int = 2) -> float:
    """Mean squared x0-prediction error on held-out windows at fixed t."""
    net = Denoiser(net_cfg)
    sched = NoiseSchedule()
    rng = rng_for(seed, EVAL)
    total = 0.0
    for _ in range(n):
        frames, signal, ref_frame = dataset.sample_window(rng, chunk_len)
        latents = codec.encode(frames)
        ref = codec.encode(ref_frame[None, :])[0]
        noise = rng.standard_normal((chunk_len - motion_len, latents.shape[1]))
        comp = assemble_input(sched, latents[:motion_len], latents[motion_len:],
                              ref, signal, t, noise)
        pred = net.forward(store, comp)
        resid = pred[motion_len:] - latents[motion_len:]
        total += float(np.mean(resid * resid))
    return total / n
