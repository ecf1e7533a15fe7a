"""WebSocket wire protocol: message shapes, ordering, validation errors, and
clean shutdown. The app is exercised through Starlette's test client."""

import json

import numpy as np
import pytest
from starlette.testclient import TestClient

from ftlk.diffusion import SamplerPlan
from ftlk.net import Denoiser
from ftlk.server import WS_PATH, build_app
from ftlk.world import sample_identity

STRIDE = 7


@pytest.fixture(scope="module")
def app(tiny_net_cfg, tiny_world, tiny_codec):
    store = Denoiser(tiny_net_cfg).init_params(0)
    return build_app(store, tiny_net_cfg, tiny_world, tiny_codec,
                     sampler=SamplerPlan(steps=2, timesteps=(1.0, 0.5)),
                     pacing="unpaced")


@pytest.fixture()
def ws(app):
    client = TestClient(app)
    with client.websocket_connect(WS_PATH) as sock:
        yield sock


def _start(sock, tiny_world_dim=2, seed=1):
    ident = sample_identity(seed, tiny_world_dim)
    sock.send_text(json.dumps({"type": "start", "seed": seed,
                               "identity": list(ident), "fps": 25.0}))
    return ident


def _drive(sock, values, offset=0):
    for j, v in enumerate(values, offset):
        sock.send_text(json.dumps({"type": "drive", "index": j,
                                   "value": float(v)}))


def _recv(sock):
    return json.loads(sock.receive_text())


def test_frames_flow_in_order(ws, tiny_world):
    _start(ws)
    _drive(ws, np.linspace(-0.5, 0.5, 2 * STRIDE))
    got = []
    while len(got) < 2 * STRIDE:
        msg = _recv(ws)
        if msg["type"] == "frame":
            got.append(msg)
    assert [m["index"] for m in got] == list(range(2 * STRIDE))
    assert [m["chunk"] for m in got] == [i // STRIDE for i in range(2 * STRIDE)]
    for m in got:
        state = np.array(m["state"])
        assert state.shape == (tiny_world.spec.state_dim,)
        assert m["mouth"] == pytest.approx(float(tiny_world.mouth(state)))
    ws.send_text(json.dumps({"type": "stop"}))


def test_stats_shape_exact(ws):
    _start(ws)
    _drive(ws, np.zeros(STRIDE))
    stats = None
    for _ in range(STRIDE + 5):
        msg = _recv(ws)
        if msg["type"] == "stats":
            stats = msg
            break
    assert stats is not None
    assert set(stats) == {"type", "startup_ms", "fps", "cycle"}
    assert set(stats["cycle"]) == {"signal_ms", "denoise_ms", "decode_ms",
                                   "motion_encode_ms", "misc_ms"}
    assert stats["startup_ms"] >= 0.0
    ws.send_text(json.dumps({"type": "stop"}))


def test_drive_before_start_errors(ws):
    ws.send_text(json.dumps({"type": "drive", "index": 0, "value": 0.0}))
    msg = _recv(ws)
    assert msg["type"] == "error"
    assert "start" in msg["message"]


def test_double_start_errors(ws):
    _start(ws)
    ident = sample_identity(1, 2)
    ws.send_text(json.dumps({"type": "start", "seed": 1,
                             "identity": list(ident), "fps": 25.0}))
    msg = _recv(ws)
    assert msg["type"] == "error"
    ws.send_text(json.dumps({"type": "stop"}))


def test_bad_identity_errors(ws):
    ws.send_text(json.dumps({"type": "start", "seed": 1,
                             "identity": [1.0, 2.0, 3.0], "fps": 25.0}))
    msg = _recv(ws)
    assert msg["type"] == "error"


def test_invalid_json_errors(ws):
    ws.send_text("{not json")
    msg = _recv(ws)
    assert msg["type"] == "error"


def test_unknown_type_errors(ws):
    ws.send_text(json.dumps({"type": "pause"}))
    msg = _recv(ws)
    assert msg["type"] == "error"


def test_nonfinite_drive_errors(ws):
    _start(ws)
    ws.send_text(json.dumps({"type": "drive", "index": 0, "value": 1e400}))
    # 1e400 serializes to Infinity in plain JSON; the server must reject it
    msg = _recv(ws)
    assert msg["type"] == "error"
    ws.send_text(json.dumps({"type": "stop"}))


def test_stop_without_start_is_clean(ws):
    ws.send_text(json.dumps({"type": "stop"}))
    # the socket closes without an error frame; receiving raises
    with pytest.raises(Exception):
        _recv(ws)


def test_identity_is_normalized_server_side(app, tiny_world):
    # A non-unit identity is accepted and normalized before use.
    client = TestClient(app)
    with client.websocket_connect(WS_PATH) as sock:
        ident = sample_identity(2, tiny_world.spec.identity_dim) * 3.0
        sock.send_text(json.dumps({"type": "start", "seed": 2,
                                   "identity": list(ident), "fps": 25.0}))
        _drive(sock, np.zeros(STRIDE))
        msg = _recv(sock)
        assert msg["type"] in ("frame", "stats")
        sock.send_text(json.dumps({"type": "stop"}))
