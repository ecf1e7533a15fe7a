"""Synthetic talking-dot world: driving signal -> latent frame dynamics.

The world is a seeded linear system with a tanh-shaped drive input. A unit
"identity" vector enters both the initial condition and the per-step drift, so
long-horizon identity drift is observable. An orthogonal codec plays the role
of a lossless frame encoder/decoder: all generation happens on encoded frames.
"""

from dataclasses import dataclass, field
import json

import numpy as np

from .errors import ConfigError
from . import seeding


@dataclass(frozen=True)
class WorldSpec:
    state_dim: int = 8
    identity_dim: int = 4
    dynamics_seed: int = 1234
    process_noise_sigma: float = 0.02
    spectral_radius: float = 0.9

    def validate(self) -> list:
        problems = []
        if self.state_dim < 1:
            problems.append("world.state_dim must be >= 1")
        if self.identity_dim < 1:
            problems.append("world.identity_dim must be >= 1")
        if self.process_noise_sigma < 0:
            problems.append("world.process_noise_sigma must be >= 0")
        if not (0.0 < self.spectral_radius < 1.0):
            problems.append("world.spectral_radius must be in (0, 1)")
        return problems


@dataclass(frozen=True)
class DrivingSignal:
    """Per-frame scalar drive in [-1, 1]."""

    samples: np.ndarray
    frame_rate: float = 25.0

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        if self.samples.ndim != 1 or len(self.samples) == 0:
            raise ConfigError("driving signal must be a nonempty 1-d sequence")
        if not np.all(np.isfinite(self.samples)):
            raise ConfigError("driving signal must be finite")
        if np.max(np.abs(self.samples)) > 1.0 + 1e-12:
            raise ConfigError("driving signal must be bounded by 1 in absolute value")

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class FrameSequence:
    """Frames (N, D) plus the unit identity vector that produced them."""

    frames: np.ndarray
    identity: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "frames", np.asarray(self.frames, dtype=np.float64))
        object.__setattr__(self, "identity", np.asarray(self.identity, dtype=np.float64))
        if abs(np.linalg.norm(self.identity) - 1.0) > 1e-9:
            raise ConfigError("identity must have unit Euclidean norm")

    def __len__(self):
        return len(self.frames)


class World:
    """Derived constants of a WorldSpec; all pure functions of dynamics_seed.

    A  (D, D)  transition matrix, spectral radius == spec.spectral_radius
    b  (D,)    unit drive input direction
    P  (D, I)  orthonormal identity injection
    w  (D,)    mouth readout, aligned with the steady-state drive response
    Q  (D, D)  orthogonal codec matrix
    """

    def __init__(self, spec: WorldSpec):
        problems = spec.validate()
        if problems:
            raise ConfigError(problems)
        self.spec = spec
        d = spec.state_dim
        rng = seeding.rng_for(spec.dynamics_seed, seeding.DYNAMICS)
        m = rng.standard_normal((d, d)) / np.sqrt(d)
        radius = np.max(np.abs(np.linalg.eigvals(m)))
        self.A = m * (spec.spectral_radius / radius)
        b = rng.standard_normal(d)
        self.b = b / np.linalg.norm(b)
        p = rng.standard_normal((d, spec.identity_dim))
        q_p, r_p = np.linalg.qr(p)
        self.P = q_p * np.sign(np.diag(r_p))
        # Mouth channel: direction the state moves when the drive is held on.
        response = np.linalg.solve(np.eye(d) - self.A, self.b)
        self.w = response / np.linalg.norm(response)
        q_m = rng.standard_normal((d, d))
        q_q, r_q = np.linalg.qr(q_m)
        self.Q = q_q * np.sign(np.diag(r_q))

    @property
    def state_dim(self) -> int:
        return self.spec.state_dim

    def fixed_point(self, drive: float, identity: np.ndarray) -> np.ndarray:
        """Noiseless equilibrium under a constant drive value."""
        d = self.spec.state_dim
        rhs = self.b * np.tanh(drive) + self.P @ identity
        return np.linalg.solve(np.eye(d) - self.A, rhs)

    def mouth(self, frames: np.ndarray) -> np.ndarray:
        return np.asarray(frames, dtype=np.float64) @ self.w


def sample_identity(seed: int, identity_dim: int = 4) -> np.ndarray:
    rng = seeding.rng_for(seed, seeding.IDENTITY)
    v = rng.standard_normal(identity_dim)
    return v / np.linalg.norm(v)


def sample_driving_signal(seed: int, length: int, frame_rate: float = 25.0) -> DrivingSignal:
    """Two random-phase sinusoids plus low-pass noise, rescaled into [-1, 1].

    Periods are drawn uniformly from 8..40 frames. Deterministic given seed.
    """
    if length < 1:
        raise ConfigError("signal length must be >= 1")
    rng = seeding.rng_for(seed, seeding.SIGNAL)
    t = np.arange(length, dtype=np.float64)
    raw = np.zeros(length)
    for _ in range(2):
        period = rng.uniform(8.0, 40.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        raw += np.sin(2.0 * np.pi * t / period + phase)
    # One-pole low-pass over white noise, mild amplitude.
    white = rng.standard_normal(length)
    lp = np.empty(length)
    acc = 0.0
    for i in range(length):
        acc = 0.9 * acc + 0.1 * white[i]
        lp[i] = acc
    raw += 0.5 * lp / 0.1  # undo the filter's amplitude loss roughly
    peak = np.max(np.abs(raw))
    if peak > 0:
        raw = raw / peak
    return DrivingSignal(np.clip(raw, -1.0, 1.0), frame_rate=frame_rate)


def simulate_sequence(world: World, signal: DrivingSignal, identity: np.ndarray,
                      seed: int) -> FrameSequence:
    """Ground-truth rollout: x_{t+1} = A x_t + b tanh(a_t) + P id + sigma eps_t.

    frames[0] is the identity base frame P id; output length equals the signal
    length. With sigma == 0 the rollout is seed-independent.
    """
    identity = np.asarray(identity, dtype=np.float64)
    if abs(np.linalg.norm(identity) - 1.0) > 1e-9:
        raise ConfigError("identity must have unit Euclidean norm")
    n = len(signal)
    d = world.spec.state_dim
    sigma = world.spec.process_noise_sigma
    rng = seeding.rng_for(seed, seeding.DATA)
    base = world.P @ identity
    frames = np.empty((n, d))
    frames[0] = base
    if n > 1:
        noise = rng.standard_normal((n - 1, d)) if sigma > 0 else np.zeros((n - 1, d))
        drive = np.tanh(signal.samples)
        for i in range(n - 1):
            frames[i + 1] = world.A @ frames[i] + world.b * drive[i] + base + sigma * noise[i]
    return FrameSequence(frames, identity)


class Codec:
    """Orthogonal per-frame codec; decode(encode(x)) == x to machine precision."""

    def __init__(self, Q: np.ndarray):
        Q = np.asarray(Q, dtype=np.float64)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ConfigError("codec matrix must be square")
        if np.max(np.abs(Q.T @ Q - np.eye(Q.shape[0]))) > 1e-9:
            raise ConfigError("codec matrix must be orthogonal")
        self.Q = Q

    @classmethod
    def for_world(cls, world: World) -> "Codec":
        return cls(world.Q)

    @classmethod
    def identity(cls, dim: int) -> "Codec":
        return cls(np.eye(dim))

    def encode(self, frames: np.ndarray) -> np.ndarray:
        frames = np.asarray(frames, dtype=np.float64)
        if frames.shape[-1] != self.Q.shape[0]:
            raise ConfigError("frame dimension does not match codec")
        return frames @ self.Q.T

    def decode(self, latents: np.ndarray) -> np.ndarray:
        latents = np.asarray(latents, dtype=np.float64)
        if latents.shape[-1] != self.Q.shape[0]:
            raise ConfigError("latent dimension does not match codec")
        return latents @ self.Q


@dataclass
class SequenceRecord:
    seed: int
    identity: np.ndarray
    signal: DrivingSignal
    frames: np.ndarray


@dataclass
class Dataset:
    """A bag of simulated sequences with window sampling for training."""

    world: World
    records: list = field(default_factory=list)

    @classmethod
    def generate(cls, world: World, n_sequences: int, length: int, seed: int) -> "Dataset":
        records = []
        for i in range(n_sequences):
            rec_seed = int(seeding.rng_for(seed, seeding.DATA, i).integers(0, 2**63))
            identity = sample_identity(rec_seed, world.spec.identity_dim)
            signal = sample_driving_signal(rec_seed, length)
            frames = simulate_sequence(world, signal, identity, rec_seed)
            records.append(SequenceRecord(rec_seed, identity, signal, frames.frames))
        return cls(world, records)

    def sample_window(self, rng: np.random.Generator, window: int):
        """Uniform (sequence, offset) window: returns (frames, signal, ref_frame)."""
        rec = self.records[int(rng.integers(0, len(self.records)))]
        n = len(rec.frames)
        if n < window + 1:
            raise ConfigError(f"sequences of length {n} cannot host windows of {window}")
        start = int(rng.integers(0, n - window + 1))
        frames = rec.frames[start:start + window]
        sig = rec.signal.samples[start:start + window]
        # Reference frame is drawn from outside the window.
        outside = int(rng.integers(0, n - window))
        if outside >= start:
            outside += window
        return frames, sig, rec.frames[outside]

    def export_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps({
                    "seed": rec.seed,
                    "identity": rec.identity.tolist(),
                    "signal": rec.signal.samples.tolist(),
                    "frames": rec.frames.tolist(),
                }, separators=(",", ":")) + "\n")

    @classmethod
    def load_jsonl(cls, world: World, path) -> "Dataset":
        records = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                records.append(SequenceRecord(
                    int(obj["seed"]),
                    np.asarray(obj["identity"], dtype=np.float64),
                    DrivingSignal(obj["signal"]),
                    np.asarray(obj["frames"], dtype=np.float64),
                ))
        return cls(world, records)
