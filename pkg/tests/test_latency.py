"""Pipeline latency model: component arithmetic, calibration fits, cycle
composition, and the discrete-event simulator."""

import json

import numpy as np
import pytest

from ftlk.errors import ConfigError
from ftlk.latency import (BREAKDOWN_KEYS, LatencyReport, PipelineSpec,
                          calibrate, calibrate_spec, compose_cycle,
                          load_bundled_spec, predict, simulate_pipeline,
                          spec_from_file)


def test_single_gpu_has_no_comm():
    spec = PipelineSpec(gpu_count=1)
    assert spec.dit_step_ms(1) == spec.dit_step_ms_1gpu
    assert spec.vae_decode_ms(1) == spec.vae_decode_ms_1gpu


def test_components_scale_with_gpus():
    spec = PipelineSpec()
    assert spec.dit_step_ms(8) == pytest.approx(1070 / 8 + 59.25)
    assert spec.vae_encode_ms(8) == pytest.approx(97 / 8 + 8.875)
    assert spec.vae_decode_ms(8) == pytest.approx(988 / 8 + 68.5)


def test_cycle_limit_is_comm_floor():
    # g -> infinity: compute vanishes, comm constants and fixed costs remain.
    spec = PipelineSpec(gpu_count=10_000_000)
    rep = predict(spec)
    floor = (spec.audio_ms + spec.denoise_steps * spec.dit_comm_ms
             + spec.vae_encode_comm_ms + spec.vae_decode_comm_ms + spec.misc_ms)
    assert rep.cycle_ms == pytest.approx(floor, abs=0.01)


def test_fps_identity():
    rep = predict(PipelineSpec())
    assert rep.fps == pytest.approx(28 * 1000.0 / rep.cycle_ms, rel=1e-12)


def test_cycle_monotone_in_gpus():
    cycles = [predict(PipelineSpec(gpu_count=g)).cycle_ms for g in range(1, 17)]
    assert all(b <= a + 1e-9 for a, b in zip(cycles, cycles[1:]))


def test_report_round_trips_to_dict():
    rep = predict(PipelineSpec())
    d = rep.to_dict()
    assert d["cycle_ms"] == rep.cycle_ms
    assert d["gpu_count"] == 8


def test_calibrate_two_point_exact():
    fit = calibrate([(1, 1070.0), (8, 193.0)])
    assert fit["comm_ms"] == 59.25
    assert fit["compute_ms_1gpu"] == 1070.0
    assert fit["residuals"] == [0.0, 0.0]


def test_calibrate_synthetic_linear_exact():
    # points generated from the model itself fit back with zero residual
    truth_comp, truth_comm = 800.0, 40.0
    pts = [(g, truth_comp / g + (truth_comm if g > 1 else 0.0))
           for g in (1, 2, 4, 8)]
    fit = calibrate(pts)
    assert fit["compute_ms_1gpu"] == pytest.approx(truth_comp, abs=1e-9)
    assert fit["comm_ms"] == pytest.approx(truth_comm, abs=1e-9)
    assert max(abs(r) for r in fit["residuals"]) < 1e-9


def test_calibrate_needs_two_gpu_counts():
    with pytest.raises(ConfigError):
        calibrate([(8, 193.0), (8, 200.0)])


def test_calibrate_spec_refits_comm():
    spec = PipelineSpec(dit_comm_ms=0.0, vae_encode_comm_ms=0.0,
                        vae_decode_comm_ms=0.0)
    table = {"dit_step": {1: 1070.0, 8: 193.0},
             "vae_encode": {1: 97.0, 8: 21.0},
             "vae_decode": {1: 988.0, 8: 192.0}}
    fitted = calibrate_spec(spec, table)
    assert fitted.dit_comm_ms == 59.25
    assert fitted.vae_encode_comm_ms == 8.875
    assert fitted.vae_decode_comm_ms == 68.5


def test_compose_cycle_arithmetic():
    parts = {"signal_ms": 33.0, "denoise_ms": 616.0, "decode_ms": 187.0,
             "motion_encode_ms": 14.0, "misc_ms": 26.0}
    out = compose_cycle(parts)
    assert out["cycle_ms"] == pytest.approx(876.0, abs=1e-9)
    assert out["fps"] == pytest.approx(28 / 0.876, rel=1e-12)
    assert out["startup_ms"] == pytest.approx(876.0, abs=1e-9)


def test_compose_cycle_requires_all_keys():
    parts = {k: 1.0 for k in BREAKDOWN_KEYS}
    parts.pop("misc_ms")
    with pytest.raises(ConfigError):
        compose_cycle(parts)


def test_simulate_serial_matches_predict():
    spec = PipelineSpec()
    events, steady = simulate_pipeline(spec, 4, overlap="none")
    assert steady == pytest.approx(predict(spec).cycle_ms, abs=1e-9)
    assert all(e["cycle"] in range(4) for e in events)
    # events are time-ordered
    starts = [e["start_ms"] for e in events]
    assert starts == sorted(starts)


def test_simulate_single_cycle():
    events, _ = simulate_pipeline(PipelineSpec(), 1)
    assert {e["cycle"] for e in events} == {0}


def test_simulate_overlap_shortens_cycle():
    spec = PipelineSpec()
    _, serial = simulate_pipeline(spec, 6, overlap="none")
    _, overlapped = simulate_pipeline(spec, 6, overlap="decode_overlaps_denoise")
    assert overlapped < serial
    # with decode fully hidden behind denoise, the steady cycle drops by the
    # decode term (critical path on the two-stage pipeline)
    assert overlapped == pytest.approx(serial - spec.vae_decode_ms(8), abs=1e-6)


def test_simulate_rejects_bad_args():
    with pytest.raises(ConfigError):
        simulate_pipeline(PipelineSpec(), 0)
    with pytest.raises(ConfigError):
        simulate_pipeline(PipelineSpec(), 2, overlap="everything")


def test_bundled_spec_loads():
    spec, measured = load_bundled_spec()
    assert spec.gpu_count == 8
    assert spec.dit_step_ms_1gpu == 1070.0
    assert "table_component_ms" in measured
    assert "cycle_breakdown_8gpu_ms" in measured


def test_spec_from_file(tmp_path):
    spec, measured = load_bundled_spec()
    path = tmp_path / "h.json"
    blob = {"spec": {"gpu_count": 4, "dit_step_ms_1gpu": 500.0},
            "measured": {}}
    path.write_text(json.dumps(blob))
    loaded, meas = spec_from_file(path)
    assert loaded.gpu_count == 4
    assert loaded.dit_step_ms_1gpu == 500.0
    assert meas == {}


def test_spec_validation():
    with pytest.raises(ConfigError):
        PipelineSpec(gpu_count=0).validate()
    with pytest.raises(ConfigError):
        PipelineSpec(compile_speedup=1.5).validate()
