"""Analytical and discrete-event latency model of the 8-GPU inference pipeline.

Component model: each parallelizable component (DiT step, VAE encode, VAE
decode) costs compute_1gpu * compile_speedup / g plus a communication constant
that is zero at g = 1 (sequence-parallel all-to-all / slice-halo exchange is
only paid when work is actually split). The steady-state cycle is the serial
sum of signal processing, denoising, decode, motion encode, and a residual
miscellaneous bucket; startup is one warm cycle plus an optional cold-start
surcharge.

The bundled `data/paper_h800.json` pins the measured single-GPU costs, the
calibrated communication constants, and the measured 8-GPU cycle breakdown
this model is validated against.
"""

from dataclasses import dataclass, asdict, replace
import importlib.resources
import json

import numpy as np

from .errors import ConfigError

BREAKDOWN_KEYS = ("signal_ms", "denoise_ms", "decode_ms", "motion_encode_ms", "misc_ms")
OVERLAP_MODES = ("none", "decode_overlaps_denoise")


@dataclass(frozen=True)
class PipelineSpec:
    gpu_count: int = 8
    dit_step_ms_1gpu: float = 1070.0
    vae_encode_ms_1gpu: float = 97.0
    vae_decode_ms_1gpu: float = 988.0
    audio_ms: float = 33.0
    misc_ms: float = 26.0
    denoise_steps: int = 4
    frames_per_chunk_new: int = 28
    dit_comm_ms: float = 59.25
    vae_encode_comm_ms: float = 8.875
    vae_decode_comm_ms: float = 68.5
    compile_speedup: float = 1.0
    cold_start_ms: float = 0.0

    def validate(self) -> list:
        problems = []
        if self.gpu_count < 1:
            problems.append("pipeline.gpu_count must be >= 1")
        if self.denoise_steps < 1:
            problems.append("pipeline.denoise_steps must be >= 1")
        if self.frames_per_chunk_new < 1:
            problems.append("pipeline.frames_per_chunk_new must be >= 1")
        for name in ("dit_step_ms_1gpu", "vae_encode_ms_1gpu", "vae_decode_ms_1gpu",
                     "audio_ms", "misc_ms", "dit_comm_ms", "vae_encode_comm_ms",
                     "vae_decode_comm_ms", "cold_start_ms"):
            if getattr(self, name) < 0:
                problems.append(f"pipeline.{name} must be >= 0")
        if not (0.0 < self.compile_speedup <= 1.0):
            problems.append("pipeline.compile_speedup must lie in (0, 1]")
        return problems

    def __post_init__(self):
        problems = self.validate()
        if problems:
            raise ConfigError(problems)

    def _component(self, compute_1gpu: float, comm: float, g: int = None) -> float:
        g = self.gpu_count if g is None else g
        return compute_1gpu * self.compile_speedup / g + (comm if g > 1 else 0.0)

    def dit_step_ms(self, g: int = None) -> float:
        return self._component(self.dit_step_ms_1gpu, self.dit_comm_ms, g)

    def vae_encode_ms(self, g: int = None) -> float:
        return self._component(self.vae_encode_ms_1gpu, self.vae_encode_comm_ms, g)

    def vae_decode_ms(self, g: int = None) -> float:
        return self._component(self.vae_decode_ms_1gpu, self.vae_decode_comm_ms, g)


@dataclass(frozen=True)
class LatencyReport:
    gpu_count: int
    dit_step_ms: float
    denoise_ms: float
    vae_encode_ms: float
    vae_decode_ms: float
    audio_ms: float
    misc_ms: float
    cycle_ms: float
    fps: float
    startup_ms: float
    cycle_speedup: float
    dit_speedup: float

    def to_dict(self) -> dict:
        return asdict(self)


def predict(spec: PipelineSpec) -> LatencyReport:
    g = spec.gpu_count
    dit = spec.dit_step_ms(g)
    enc = spec.vae_encode_ms(g)
    dec = spec.vae_decode_ms(g)
    denoise = spec.denoise_steps * dit
    cycle = spec.audio_ms + denoise + dec + enc + spec.misc_ms
    cycle_1 = (spec.audio_ms + spec.denoise_steps * spec.dit_step_ms(1)
               + spec.vae_decode_ms(1) + spec.vae_encode_ms(1) + spec.misc_ms)
    return LatencyReport(
        gpu_count=g,
        dit_step_ms=dit,
        denoise_ms=denoise,
        vae_encode_ms=enc,
        vae_decode_ms=dec,
        audio_ms=spec.audio_ms,
        misc_ms=spec.misc_ms,
        cycle_ms=cycle,
        fps=spec.frames_per_chunk_new * 1000.0 / cycle,
        startup_ms=cycle + spec.cold_start_ms,
        cycle_speedup=cycle_1 / cycle,
        dit_speedup=spec.dit_step_ms(1) / dit,
    )


def compose_cycle(breakdown: dict, frames_per_chunk_new: int = 28) -> dict:
    """Cycle/fps/startup composed directly from a measured per-cycle
    breakdown (the validation target for the analytical model)."""
    missing = [k for k in BREAKDOWN_KEYS if k not in breakdown]
    if missing:
        raise ConfigError(f"breakdown missing keys: {missing}")
    cycle = float(sum(breakdown[k] for k in BREAKDOWN_KEYS))
    return {
        "cycle_ms": cycle,
        "fps": frames_per_chunk_new * 1000.0 / cycle,
        "startup_ms": cycle,
    }


def calibrate(measurements, base_ms_1gpu: float = None) -> dict:
    """Least-squares fit of ms(g) = compute/g + comm*[g>1] for one component.

    `measurements` is a sequence of (gpu_count, ms). Returns the fitted
    compute term, the comm constant, per-point residuals, and — when the
    spec's nominal 1-GPU cost is supplied — the implied compile_speedup.
    """
    pts = [(int(g), float(ms)) for g, ms in measurements]
    if len({g for g, _ in pts}) < 2:
        raise ConfigError("calibration needs measurements at >= 2 GPU counts")
    a = np.array([[1.0 / g, 1.0 if g > 1 else 0.0] for g, _ in pts])
    y = np.array([ms for _, ms in pts])
    if len(pts) == 2:
        # Exactly determined: solve in closed form so two-point tables
        # reproduce their constants without least-squares rounding.
        (g1, ms1), (g2, ms2) = sorted(pts)
        if g1 == 1:
            compute = ms1
            comm = ms2 - compute / g2
        else:
            compute = (ms1 - ms2) / (1.0 / g1 - 1.0 / g2)
            comm = ms1 - compute / g1
        sol = np.array([compute, comm])
    else:
        sol, *_ = np.linalg.lstsq(a, y, rcond=None)
    compute, comm = float(sol[0]), float(sol[1])
    residuals = (y - a @ sol).tolist()
    out = {"compute_ms_1gpu": compute, "comm_ms": comm, "residuals": residuals}
    if base_ms_1gpu:
        out["compile_speedup"] = compute / base_ms_1gpu
    return out


def calibrate_spec(spec: PipelineSpec, table) -> PipelineSpec:
    """Refit the three comm constants from component measurements, given
    either {component: {gpus: ms}} or an iterable of (g, component, ms)."""
    if not isinstance(table, dict):
        grouped = {}
        for g, component, ms in table:
            grouped.setdefault(component, {})[g] = ms
        table = grouped
    fits = {}
    for component in ("dit_step", "vae_encode", "vae_decode"):
        if component not in table:
            raise ConfigError(f"calibration table missing component {component!r}")
        pts = [(int(g), float(ms)) for g, ms in table[component].items()]
        fits[component] = calibrate(pts)
    return replace(
        spec,
        dit_comm_ms=fits["dit_step"]["comm_ms"],
        vae_encode_comm_ms=fits["vae_encode"]["comm_ms"],
        vae_decode_comm_ms=fits["vae_decode"]["comm_ms"],
    )


def simulate_pipeline(spec: PipelineSpec, n_cycles: int, overlap: str = "none"):
    """Discrete-event trace of the per-cycle stages.

    overlap="none" runs every stage serially, so the steady state equals the
    analytical cycle exactly. overlap="decode_overlaps_denoise" hands decode
    to a second worker: cycle n's decode runs concurrently with cycle n+1's
    signal/denoise/encode work, and emission is paced by whichever path is
    longer. Returns (events, steady_state_cycle_ms); each event is a dict
    {cycle, stage, start_ms, end_ms}.
    """
    if n_cycles < 1:
        raise ConfigError("simulate_pipeline needs n_cycles >= 1")
    if overlap not in OVERLAP_MODES:
        raise ConfigError(f"overlap must be one of {OVERLAP_MODES}")
    g = spec.gpu_count
    durations = {
        "signal": spec.audio_ms,
        "denoise": spec.denoise_steps * spec.dit_step_ms(g),
        "decode": spec.vae_decode_ms(g),
        "motion_encode": spec.vae_encode_ms(g),
        "misc": spec.misc_ms,
    }
    events = []
    emit_times = []
    main_free = 0.0
    decode_free = 0.0
    for c in range(n_cycles):
        t = main_free
        for stage in ("signal", "denoise"):
            events.append({"cycle": c, "stage": stage, "start_ms": t,
                           "end_ms": t + durations[stage]})
            t += durations[stage]
        denoise_done = t
        if overlap == "none":
            events.append({"cycle": c, "stage": "decode", "start_ms": t,
                           "end_ms": t + durations["decode"]})
            t += durations["decode"]
            decode_done = t
        else:
            start = max(denoise_done, decode_free)
            decode_done = start + durations["decode"]
            events.append({"cycle": c, "stage": "decode", "start_ms": start,
                           "end_ms": decode_done})
            decode_free = decode_done
        for stage in ("motion_encode", "misc"):
            events.append({"cycle": c, "stage": stage, "start_ms": t,
                           "end_ms": t + durations[stage]})
            t += durations[stage]
        main_free = t
        emit_times.append(max(decode_done, t) if overlap == "none" else decode_done)
    if n_cycles == 1:
        steady = emit_times[0]
    else:
        steady = emit_times[-1] - emit_times[-2]
    return events, steady


def load_bundled_spec():
    """(PipelineSpec, measured dict) from the bundled calibration file."""
    ref = importlib.resources.files("ftlk").joinpath("data/paper_h800.json")
    payload = json.loads(ref.read_text(encoding="utf-8"))
    return PipelineSpec(**payload["spec"]), payload.get("measured", {})


def spec_from_file(path) -> tuple:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if "spec" not in payload:
        raise ConfigError("pipeline spec file must hold a top-level 'spec' object")
    return PipelineSpec(**payload["spec"]), payload.get("measured", {})
