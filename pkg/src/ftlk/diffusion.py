"""Noise schedule, composite input assembly, few-step sampler, score identity.

The schedule is rectified-linear (alpha = 1 - t, sigma = t), so both endpoints
are exact: t=0 returns the clean input, t=1 returns pure noise. The sampler is
a deterministic DDIM-style recursion over a strictly decreasing timestep
ladder; all stochasticity lives in the initial noise draw.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str = "rectified_linear"

    def __post_init__(self):
        if self.kind != "rectified_linear":
            raise ConfigError(f"unknown schedule kind: {self.kind!r}")

    def alpha(self, t):
        return 1.0 - np.asarray(t, dtype=np.float64)

    def sigma(self, t):
        return np.asarray(t, dtype=np.float64) + 0.0


@dataclass(frozen=True)
class SamplerPlan:
    """Discrete few-step timestep ladder, first entry pinned at t=1."""

    steps: int = 4
    timesteps: tuple = (1.0, 0.75, 0.5, 0.25)
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)

    def validate(self) -> list:
        problems = []
        ts = tuple(self.timesteps)
        if self.steps < 1:
            problems.append("sampler.steps must be >= 1")
        if len(ts) != self.steps:
            problems.append("sampler.timesteps length must equal steps")
        if len(ts) > 0 and ts[0] != 1.0:
            problems.append("sampler.timesteps must start at exactly 1.0")
        if any(b >= a for a, b in zip(ts, ts[1:])):
            problems.append("sampler.timesteps must be strictly decreasing")
        if len(ts) > 0 and (ts[-1] < 0.0 or any(t <= 0.0 for t in ts[:-1])):
            problems.append("sampler.timesteps must stay in (0, 1] (last may be 0)")
        return problems

    def __post_init__(self):
        object.__setattr__(self, "timesteps", tuple(float(t) for t in self.timesteps))
        problems = self.validate()
        if problems:
            raise ConfigError(problems)


@dataclass(frozen=True)
class LatentChunk:
    """A fixed window of per-frame latents; the first L_m rows are carried
    motion frames, the remaining rows are generation targets."""

    latents: np.ndarray
    motion_len: int

    def __post_init__(self):
        object.__setattr__(self, "latents", np.asarray(self.latents, dtype=np.float64))
        if self.latents.ndim != 2:
            raise ConfigError("chunk latents must be 2-d (frames, dim)")
        if not (0 <= self.motion_len < len(self.latents)):
            raise ConfigError("motion_len must satisfy 0 <= L_m < L_c")

    @property
    def chunk_len(self) -> int:
        return len(self.latents)

    @property
    def motion(self) -> np.ndarray:
        return self.latents[: self.motion_len]

    @property
    def targets(self) -> np.ndarray:
        return self.latents[self.motion_len:]


@dataclass(frozen=True)
class CompositeInput:
    """Denoiser input: channel-stacked (z_noise, z_mask, z_cond) plus aux
    conditioning. Channel order is part of the checkpoint contract.

    z_noise  (L_c, D)  motion rows clean, target rows noised
    z_mask   (L_c,)    exactly [1, 0, ..., 0]
    z_cond   (L_c, D)  row 0 = encoded reference frame, rows 1.. all zero
    signal   (L_c,)    per-frame driving value
    reference (D,)     encoded reference frame (cross-attention token)
    frame_t  (L_c,)    per-frame diffusion time fed to the conditioner
    """

    z_noise: np.ndarray
    z_mask: np.ndarray
    z_cond: np.ndarray
    signal: np.ndarray
    reference: np.ndarray
    frame_t: np.ndarray
    motion_len: int

    def __post_init__(self):
        for name in ("z_noise", "z_mask", "z_cond", "signal", "reference", "frame_t"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.z_noise.ndim != 2:
            raise ConfigError("z_noise must be 2-d (frames, dim)")
        lc, d = self.z_noise.shape
        if self.z_cond.shape != (lc, d):
            raise ConfigError("z_cond shape must match z_noise")
        if self.z_mask.shape != (lc,) or self.signal.shape != (lc,) or self.frame_t.shape != (lc,):
            raise ConfigError("per-frame vectors must have length L_c")
        if self.reference.shape != (d,):
            raise ConfigError("reference must be a single latent row")
        if not (0 <= self.motion_len < lc):
            raise ConfigError("motion_len must satisfy 0 <= L_m < L_c")

    @property
    def chunk_len(self) -> int:
        return len(self.z_noise)

    @property
    def latent_dim(self) -> int:
        return self.z_noise.shape[1]

    def stacked(self) -> np.ndarray:
        """(L_c, 2D+1) channel concatenation in contract order."""
        return np.concatenate([self.z_noise, self.z_mask[:, None], self.z_cond], axis=1)


def forward_diffuse(schedule: NoiseSchedule, z: np.ndarray, t: float,
                    noise: np.ndarray) -> np.ndarray:
    """alpha(t) * z + sigma(t) * noise."""
    if not (0.0 <= t <= 1.0):
        raise ConfigError(f"diffusion time {t} outside [0, 1]")
    z = np.asarray(z, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != z.shape:
        raise ConfigError("noise shape must match input")
    return schedule.alpha(t) * z + schedule.sigma(t) * noise


def composite_from_state(motion: np.ndarray, z_state: np.ndarray, reference: np.ndarray,
                         signal: np.ndarray, t: float, motion_t=None) -> CompositeInput:
    """Build the composite for an already-noised target state.

    Motion rows carry frame_t = 0 unless `motion_t` gives explicit times
    (noised conditioning frames announce their own noise level).
    """
    motion = np.atleast_2d(np.asarray(motion, dtype=np.float64))
    z_state = np.atleast_2d(np.asarray(z_state, dtype=np.float64))
    if motion.size == 0:
        motion = motion.reshape(0, z_state.shape[1])
    if motion.shape[1] != z_state.shape[1]:
        raise ConfigError("motion/target latent dims differ")
    lm = len(motion)
    lc = lm + len(z_state)
    signal = np.asarray(signal, dtype=np.float64)
    if signal.shape != (lc,):
        raise ConfigError(f"signal must supply one value per frame ({lc})")
    z_noise = np.concatenate([motion, z_state], axis=0)
    z_mask = np.zeros(lc)
    z_mask[0] = 1.0
    z_cond = np.zeros_like(z_noise)
    z_cond[0] = reference
    frame_t = np.full(lc, float(t))
    if motion_t is None:
        frame_t[:lm] = 0.0
    else:
        frame_t[:lm] = np.asarray(motion_t, dtype=np.float64)
    return CompositeInput(z_noise, z_mask, z_cond, signal,
                          np.asarray(reference, dtype=np.float64), frame_t, lm)


def assemble_input(schedule: NoiseSchedule, motion: np.ndarray, target: np.ndarray,
                   reference: np.ndarray, signal: np.ndarray, t: float,
                   noise: np.ndarray, motion_t=None) -> CompositeInput:
    """Composite assembly for one clean chunk at denoising time t:
    target rows are noised with the supplied draw, motion rows stay clean."""
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    return composite_from_state(motion, forward_diffuse(schedule, target, t, noise),
                                reference, signal, t, motion_t=motion_t)


def score_from_x0(schedule: NoiseSchedule, z_t: np.ndarray, t: float,
                  x0_hat: np.ndarray) -> np.ndarray:
    """Gaussian score estimate -(z_t - alpha x0_hat) / sigma^2 at time t."""
    if not (0.0 < t <= 1.0):
        raise ConfigError(f"score undefined at t={t}: sigma vanishes")
    a = float(schedule.alpha(t))
    s = float(schedule.sigma(t))
    return -(np.asarray(z_t) - a * np.asarray(x0_hat)) / (s * s)


def few_step_sample(denoise_fn, plan: SamplerPlan, motion: np.ndarray,
                    reference: np.ndarray, signal: np.ndarray,
                    rng: np.random.Generator, trace: list = None) -> LatentChunk:
    """Deterministic DDIM-style few-step recursion.

    denoise_fn(CompositeInput) -> full-chunk x0 prediction (L_c, D). At each
    ladder step the target rows are re-derived from the predicted x0 and the
    implied noise; the final output takes the last x0 prediction. `trace`, if
    given, collects (t_i, z_i, x0_i) per step so a training loop can replay
    exactly one step with gradients.
    """
    motion = np.atleast_2d(np.asarray(motion, dtype=np.float64))
    reference = np.asarray(reference, dtype=np.float64)
    signal = np.asarray(signal, dtype=np.float64)
    d = reference.shape[0]
    if motion.size == 0:
        motion = motion.reshape(0, d)
    lm = len(motion)
    lc = len(signal)
    n_targets = lc - lm
    if n_targets < 1:
        raise ConfigError("chunk must contain at least one target frame")
    sched = plan.schedule
    z = rng.standard_normal((n_targets, d))
    x0 = np.zeros((n_targets, d))
    for i, t_i in enumerate(plan.timesteps):
        comp = composite_from_state(motion, z, reference, signal, t_i)
        pred = denoise_fn(comp)
        x0 = pred[lm:]
        if trace is not None:
            trace.append((float(t_i), z.copy(), x0.copy()))
        if i + 1 < plan.steps:
            t_next = plan.timesteps[i + 1]
            eps_hat = (z - sched.alpha(t_i) * x0) / sched.sigma(t_i)
            z = sched.alpha(t_next) * x0 + sched.sigma(t_next) * eps_hat
    return LatentChunk(np.concatenate([motion, x0], axis=0), lm)
