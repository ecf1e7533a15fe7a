"""WebSocket front door for the streaming engine.

One connection drives at most one live stream. JSON text frames both ways:

    client -> server   {"type":"start","seed":u64,"identity":[...],"fps":25}
                       {"type":"drive","index":n,"value":f}
                       {"type":"stop"}
    server -> client   {"type":"frame","index":n,"mouth":f,"state":[...],"chunk":c}
                       {"type":"stats","startup_ms":f,"fps":f,"cycle":{...}}
                       {"type":"error","message":s}

Frames are pushed as they come off the session; a stats message follows every
chunk boundary. Malformed input earns an error message, not a dropped socket;
session failures (numeric blowups and the like) are reported and end the
stream but keep the connection open so the client sees the reason.
"""

import asyncio
import contextlib
import json

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .diffusion import SamplerPlan
from .net import NetConfig, ParamStore
from .streaming import StreamConfig, StreamSession
from .world import Codec, World

WS_PATH = "/ws"


def _frame_msg(frame, world: World) -> str:
    return json.dumps({
        "type": "frame",
        "index": frame.index,
        "mouth": float(world.mouth(frame.state[None, :])[0]),
        "state": [float(x) for x in frame.state],
        "chunk": frame.chunk,
    })


def _stats_msg(stats) -> str:
    return json.dumps({
        "type": "stats",
        "startup_ms": stats.startup_ms,
        "fps": stats.fps,
        "cycle": {k: float(v) for k, v in stats.cycle.items()},
    })


def _error_msg(message: str) -> str:
    return json.dumps({"type": "error", "message": str(message)})


async def _pump(ws: WebSocket, session: StreamSession, world: World) -> None:
    """Forward emitted frames to the socket; stats after each chunk."""
    chunks_sent = 0
    try:
        while True:
            frames, stats = await asyncio.to_thread(session.next_frames, True, 0.1)
            for f in frames:
                await ws.send_text(_frame_msg(f, world))
            if stats.chunks_emitted > chunks_sent:
                chunks_sent = stats.chunks_emitted
                await ws.send_text(_stats_msg(stats))
    except asyncio.CancelledError:
        raise
    except WebSocketDisconnect:
        pass
    except Exception as exc:
        with contextlib.suppress(Exception):
            await ws.send_text(_error_msg(exc))


def build_app(store: ParamStore, net_cfg: NetConfig, world: World, codec: Codec,
              *, sampler: SamplerPlan = None, chunk_len: int = 9,
              motion_len: int = 2, pacing: str = "realtime") -> FastAPI:
    """App serving the stream protocol at WS_PATH with a fixed generator."""
    sampler = sampler if sampler is not None else SamplerPlan()
    app = FastAPI()

    @app.websocket(WS_PATH)
    async def stream_endpoint(ws: WebSocket):
        await ws.accept()
        session = None
        pump = None
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    await ws.send_text(_error_msg("message is not valid JSON"))
                    continue
                mtype = msg.get("type")
                if mtype == "start":
                    if session is not None:
                        await ws.send_text(_error_msg("stream already started"))
                        continue
                    try:
                        seed = int(msg["seed"])
                        identity = np.asarray(msg["identity"], dtype=np.float64)
                        fps = float(msg.get("fps", 25.0))
                        if identity.shape != (world.spec.identity_dim,):
                            raise ValueError(
                                f"identity must have {world.spec.identity_dim} entries")
                        norm = np.linalg.norm(identity)
                        if not np.isfinite(norm) or norm == 0:
                            raise ValueError("identity must be finite and nonzero")
                        identity = identity / norm
                        cfg = StreamConfig(chunk_len=chunk_len, motion_len=motion_len,
                                           target_fps=fps, sampler=sampler,
                                           seed=seed, pacing=pacing)
                        reference = world.P @ identity
                        session = StreamSession(store, net_cfg, codec, reference, cfg)
                    except (KeyError, ValueError, TypeError) as exc:
                        await ws.send_text(_error_msg(f"bad start message: {exc}"))
                        continue
                    pump = asyncio.create_task(_pump(ws, session, world))
                elif mtype == "drive":
                    if session is None:
                        await ws.send_text(_error_msg("drive before start"))
                        continue
                    try:
                        sample = (int(msg["index"]), float(msg["value"]))
                    except (KeyError, ValueError, TypeError) as exc:
                        await ws.send_text(_error_msg(f"bad drive message: {exc}"))
                        continue
                    try:
                        session.push_signal([sample])
                    except Exception as exc:
                        await ws.send_text(_error_msg(exc))
                elif mtype == "stop":
                    break
                else:
                    await ws.send_text(_error_msg(f"unknown message type: {mtype!r}"))
        except WebSocketDisconnect:
            pass
        finally:
            if pump is not None:
                pump.cancel()
                with contextlib.suppress(asyncio.CancelledError):
                    await pump
            if session is not None:
                session.close()
            with contextlib.suppress(Exception):
                await ws.close()

    return app


def serve(store: ParamStore, net_cfg: NetConfig, world: World, codec: Codec,
          *, host: str = "127.0.0.1", port: int = 8787, **app_kwargs) -> None:
    """Blocking uvicorn runner for `ftlk stream --serve`."""
    import uvicorn

    app = build_app(store, net_cfg, world, codec, **app_kwargs)
    uvicorn.run(app, host=host, port=port, log_level="warning")
