"""`ftlk` command line: every workflow behind one entry point.

Subcommands: pretrain, sft, distill, stream, simulate, ablate, eval.
Failures exit nonzero with one machine-readable JSON object on stderr:
2 config problems (all violations listed), 3 numeric blowups, 4 I/O,
130 interrupted. Runs that take --config write config.json, checkpoints,
and JSONL logs under the run directory (FTLK_RUN_DIR overrides the
config's run_dir); training logs are flushed line by line so an
interrupted run keeps everything up to the last finished step.
"""

import argparse
import dataclasses
import json
import os
import signal
import sys

import numpy as np

from . import checkpoint, config as cfgmod, latency, metrics, server
from .diffusion import SamplerPlan
from .distill import distill as run_distill
from .distill import pretrain_teacher, stage1_adapt
from .errors import ConfigError, NumericError
from .metrics import NetGenerator, OracleGenerator, evaluate
from .streaming import StreamConfig, StreamSession
from .world import Codec, Dataset, World, sample_identity

HORIZONS = {"short": 10.0, "long": 120.0}


def _err(kind: str, message, **extra) -> None:
    payload = {"error": kind, "message": str(message), **extra}
    print(json.dumps(payload), file=sys.stderr)


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _run_dir(cfg) -> str:
    path = os.environ.get("FTLK_RUN_DIR") or cfg.run_dir
    os.makedirs(path, exist_ok=True)
    return path


def _in_run_dir(run_dir: str, name: str) -> str:
    return name if os.path.isabs(name) or os.sep in name else os.path.join(run_dir, name)


def _resolve_checkpoint(cfg, name: str) -> str:
    """Bare checkpoint names live in the run dir; paths pass through."""
    if os.path.isabs(name) or os.sep in name:
        return name
    return os.path.join(_run_dir(cfg), name)


def _prepare(args):
    """Load config, resolve the run dir, persist the effective config."""
    cfg = cfgmod.load(args.config)
    run_dir = _run_dir(cfg)
    cfgmod.save(cfg, os.path.join(run_dir, "config.json"))
    return cfg, run_dir


def _dataset(cfg, args) -> tuple:
    world = World(cfg.world)
    codec = Codec.for_world(world)
    data = Dataset.generate(world, args.sequences, args.length, cfg.seeds.data)
    return world, codec, data


def _summary_log(run_dir: str, record: dict) -> None:
    with open(os.path.join(run_dir, "run_log.jsonl"), "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record) + "\n")
        fh.flush()


def _parse_floats(text: str) -> np.ndarray:
    return np.array([float(x) for x in text.split(",") if x.strip() != ""])


# -- subcommands ---------------------------------------------------------


def cmd_pretrain(args) -> int:
    cfg, run_dir = _prepare(args)
    world, codec, data = _dataset(cfg, args)
    store = pretrain_teacher(data, codec, cfg.net, args.steps, cfg.seeds.init,
                             chunk_len=cfg.stream.chunk_len,
                             motion_len=cfg.stream.motion_len)
    out = _in_run_dir(run_dir, args.output)
    checkpoint.save(out, store, "teacher_real", cfg.net)
    _summary_log(run_dir, {"cmd": "pretrain", "steps": args.steps,
                           "checkpoint": out, "checksum": store.checksum()})
    _print({"checkpoint": out, "checksum": store.checksum()})
    return 0


def cmd_sft(args) -> int:
    cfg, run_dir = _prepare(args)
    world, codec, data = _dataset(cfg, args)
    teacher, role, net = checkpoint.load(_in_run_dir(run_dir, args.input))
    buckets = [int(b) for b in args.buckets.split(",") if b.strip() != ""]
    store = stage1_adapt(teacher, data, codec, net, buckets, args.steps,
                         cfg.seeds.init, motion_len=cfg.stream.motion_len)
    out = _in_run_dir(run_dir, args.output)
    checkpoint.save(out, store, role, net)
    _summary_log(run_dir, {"cmd": "sft", "steps": args.steps, "buckets": buckets,
                           "checkpoint": out, "checksum": store.checksum()})
    _print({"checkpoint": out, "checksum": store.checksum()})
    return 0


def _distill_overrides(cfg, args):
    dc = cfg.distill
    changes = {}
    if args.schedule is not None:
        changes["chunk_schedule"] = {"random": "random_uniform",
                                     "fixed": "fixed"}[args.schedule]
    if args.K is not None:
        kind = changes.get("chunk_schedule", dc.chunk_schedule)
        if kind == "fixed":
            changes["fixed_k"] = args.K
            changes["k_max"] = max(args.K, dc.k_max)
        else:
            changes["k_max"] = args.K
    if args.steps is not None:
        changes["steps"] = args.steps
    return dataclasses.replace(dc, **changes) if changes else dc


def cmd_distill(args) -> int:
    cfg, run_dir = _prepare(args)
    src = _in_run_dir(run_dir, args.input)
    out = _in_run_dir(run_dir, args.output)
    sft, role, net = checkpoint.load(src)
    dc = _distill_overrides(cfg, args)
    if dc.steps == 0:
        checkpoint.save(out, sft, role, net)  # pass-through, role kept
        _summary_log(run_dir, {"cmd": "distill", "steps": 0, "checkpoint": out,
                               "checksum": sft.checksum()})
        _print({"checkpoint": out, "checksum": sft.checksum()})
        return 0
    world, codec, data = _dataset(cfg, args)
    log_path = os.path.join(run_dir, "distill_log.jsonl")
    with open(log_path, "w", encoding="utf-8") as fh:
        def log_fn(rec):
            fh.write(json.dumps(rec) + "\n")
            fh.flush()
        gen, _ = run_distill(sft, net, dc, data, codec, cfg.seeds.run,
                             chunk_len=cfg.stream.chunk_len,
                             motion_len=cfg.stream.motion_len, log_fn=log_fn)
    checkpoint.save(out, gen, "generator_student", net)
    _summary_log(run_dir, {"cmd": "distill", "steps": dc.steps, "checkpoint": out,
                           "log": log_path, "checksum": gen.checksum()})
    _print({"checkpoint": out, "checksum": gen.checksum(), "log": log_path})
    return 0


def _load_world(args):
    if args.config:
        cfg = cfgmod.load(args.config)
    else:
        cfg = cfgmod.RunConfig()
    world = World(cfg.world)
    return cfg, world, Codec.for_world(world)


def cmd_stream(args) -> int:
    if (args.script is None) == (not args.serve):
        raise ConfigError(["stream needs exactly one of --script or --serve"])
    cfg, world, codec = _load_world(args)
    store, role, net = checkpoint.load(_resolve_checkpoint(cfg, args.checkpoint))
    if args.serve:
        server.serve(store, net, world, codec, host=args.host, port=args.port,
                     sampler=cfg.sampler, chunk_len=cfg.stream.chunk_len,
                     motion_len=cfg.stream.motion_len, pacing=args.pacing)
        return 0
    if args.identity:
        identity = _parse_floats(args.identity)
        if identity.shape != (world.spec.identity_dim,):
            raise ConfigError([f"--identity needs {world.spec.identity_dim} values"])
        identity = identity / np.linalg.norm(identity)
    else:
        identity = sample_identity(args.seed, world.spec.identity_dim)
    samples = []
    with open(args.script, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            samples.append((int(rec["index"]), float(rec["value"])))
    scfg = StreamConfig(chunk_len=cfg.stream.chunk_len,
                        motion_len=cfg.stream.motion_len,
                        target_fps=args.fps, sampler=cfg.sampler,
                        seed=args.seed, pacing=args.pacing)
    session = StreamSession(store, net, codec, world.P @ identity, scfg)
    try:
        session.push_signal(samples)
        want = (len(samples) // scfg.stride) * scfg.stride
        got = 0
        while got < want:
            frames, stats = session.next_frames(wait=True, timeout=0.25)
            for f in frames:
                print(json.dumps({"type": "frame", "index": f.index,
                                  "chunk": f.chunk,
                                  "mouth": float(world.mouth(f.state[None, :])[0]),
                                  "state": [float(x) for x in f.state]}))
            got += len(frames)
        stats = session.stats()
        print(json.dumps({"type": "stats", "startup_ms": stats.startup_ms,
                          "fps": stats.fps, "cycle": stats.cycle}))
    finally:
        session.close()
    return 0


def cmd_simulate(args) -> int:
    if os.path.exists(args.spec):
        spec, measured = latency.spec_from_file(args.spec)
    elif os.path.basename(args.spec) == "paper_h800.json":
        spec, measured = latency.load_bundled_spec()
    else:
        raise FileNotFoundError(args.spec)
    changes = {"gpu_count": args.gpus}
    if args.steps is not None:
        changes["denoise_steps"] = args.steps
    if args.frames is not None:
        changes["frames_per_chunk_new"] = args.frames
    spec = dataclasses.replace(spec, **changes)
    _print(latency.predict(spec).to_dict())
    return 0


def cmd_ablate(args) -> int:
    cfg, run_dir = _prepare(args)
    world, codec, data = _dataset(cfg, args)
    sft, role, net = checkpoint.load(_in_run_dir(run_dir, args.input))
    seeds = [cfg.seeds.run + i for i in range(args.seeds)]
    if args.table == "chunks":
        rows = metrics.ablate_chunks(sft, net, cfg.distill, data, codec, world,
                                     seeds, budget_steps=args.budget,
                                     chunk_len=cfg.stream.chunk_len,
                                     motion_len=cfg.stream.motion_len)
        name = "ablation_chunks.json"
    else:
        rows = metrics.ablate_motion(sft, net, cfg.distill, data, codec, world,
                                     seeds, budget_steps=args.budget,
                                     chunk_len=cfg.stream.chunk_len,
                                     motion_len=cfg.stream.motion_len)
        name = "ablation_motion.json"
    path = os.path.join(run_dir, name)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
    _print(rows)
    return 0


def cmd_eval(args) -> int:
    cfg, world, codec = _load_world(args)
    horizon = HORIZONS.get(args.horizon)
    if horizon is None:
        horizon = float(args.horizon)
    if args.oracle:
        gen = OracleGenerator(world, codec)
    else:
        if not args.checkpoint:
            raise ConfigError(["eval needs --checkpoint (or --oracle)"])
        store, role, net = checkpoint.load(_resolve_checkpoint(cfg, args.checkpoint))
        gen = NetGenerator(store, net, cfg.sampler)
    report = evaluate(gen, world, codec, horizon_s=horizon, seed=cfg.seeds.run,
                      chunk_len=cfg.stream.chunk_len,
                      motion_len=cfg.stream.motion_len, n_streams=args.streams)
    if args.config:
        run_dir = _run_dir(cfg)
        with open(os.path.join(run_dir, "eval.json"), "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
    _print(report)
    return 0


# -- wiring ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ftlk",
                                description="Talking-dot distillation lab.")
    sub = p.add_subparsers(dest="cmd", required=True)

    def add_data_flags(sp):
        sp.add_argument("--sequences", type=int, default=48,
                        help="dataset size (sequences)")
        sp.add_argument("--length", type=int, default=240,
                        help="frames per dataset sequence")

    sp = sub.add_parser("pretrain", help="train the teacher denoiser")
    sp.add_argument("--config", required=True, help="run config JSON")
    sp.add_argument("--steps", type=int, default=2000, help="optimizer steps")
    sp.add_argument("--output", default="teacher.ftlk", help="checkpoint name")
    add_data_flags(sp)
    sp.set_defaults(fn=cmd_pretrain)

    sp = sub.add_parser("sft", help="stage-1 chunk-length adaptation")
    sp.add_argument("--config", required=True, help="run config JSON")
    sp.add_argument("--buckets", default="7,9,11",
                    help="comma-separated chunk-length buckets")
    sp.add_argument("--steps", type=int, default=500, help="optimizer steps")
    sp.add_argument("--input", default="teacher.ftlk", help="teacher checkpoint")
    sp.add_argument("--output", default="sft.ftlk", help="checkpoint name")
    add_data_flags(sp)
    sp.set_defaults(fn=cmd_sft)

    sp = sub.add_parser("distill", help="stage-2 score distillation")
    sp.add_argument("--config", required=True, help="run config JSON")
    sp.add_argument("--schedule", choices=["random", "fixed"],
                    help="chunk-count schedule override")
    sp.add_argument("--K", type=int, help="chunk-count bound override")
    sp.add_argument("--steps", type=int, help="generator updates override")
    sp.add_argument("--input", default="sft.ftlk", help="input checkpoint")
    sp.add_argument("--output", default="generator.ftlk", help="checkpoint name")
    add_data_flags(sp)
    sp.set_defaults(fn=cmd_distill)

    sp = sub.add_parser("stream", help="run the chunked streaming engine")
    sp.add_argument("--checkpoint", required=True,
                    help="generator checkpoint (bare names resolve in the run dir)")
    sp.add_argument("--config", help="run config JSON (world/sampler/stream)")
    sp.add_argument("--script", help="driving-signal JSONL ({index,value} lines)")
    sp.add_argument("--serve", action="store_true", help="serve the WebSocket API")
    sp.add_argument("--host", default="127.0.0.1", help="bind address for --serve")
    sp.add_argument("--port", type=int, default=8787, help="port for --serve")
    sp.add_argument("--fps", type=float, default=25.0, help="target frame rate")
    sp.add_argument("--seed", type=int, default=0, help="stream noise seed")
    sp.add_argument("--identity", help="comma-separated identity vector")
    sp.add_argument("--pacing", choices=["realtime", "unpaced"], default="unpaced",
                    help="sleep to match fps, or run flat out")
    sp.set_defaults(fn=cmd_stream)

    sp = sub.add_parser("simulate", help="pipeline latency model")
    sp.add_argument("--spec", default="paper_h800.json",
                    help="pipeline spec JSON (bundled name or path)")
    sp.add_argument("--gpus", type=int, default=8, help="GPU count")
    sp.add_argument("--steps", type=int, help="denoise steps override")
    sp.add_argument("--frames", type=int, help="new frames per chunk override")
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("ablate", help="run an ablation table")
    sp.add_argument("table", choices=["chunks", "motion"], help="which table")
    sp.add_argument("--config", required=True, help="run config JSON")
    sp.add_argument("--input", default="sft.ftlk", help="stage-1 checkpoint")
    sp.add_argument("--budget", type=int, default=40,
                    help="distill steps per ablation cell")
    sp.add_argument("--seeds", type=int, default=3, help="paired seeds per cell")
    add_data_flags(sp)
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("eval", help="sync/drift/consistency report")
    sp.add_argument("--checkpoint",
                    help="generator checkpoint (bare names resolve in the run dir)")
    sp.add_argument("--config", help="run config JSON")
    sp.add_argument("--horizon", default="short",
                    help="short, long, or seconds")
    sp.add_argument("--streams", type=int, default=2, help="evaluation streams")
    sp.add_argument("--oracle", action="store_true",
                    help="evaluate the ground-truth oracle generator")
    sp.set_defaults(fn=cmd_eval)
    return p


def _sigterm(signum, frame):
    raise KeyboardInterrupt


def main(argv=None) -> int:
    signal.signal(signal.SIGTERM, _sigterm)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        _err("config", exc, violations=exc.violations)
        return 2
    except NumericError as exc:
        _err("numeric", exc)
        return 3
    except BrokenPipeError:
        # Downstream consumer closed (e.g. | head); not an error for a
        # streaming producer.  Point stdout at devnull so the interpreter's
        # exit flush stays quiet.
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except OSError as exc:
        _err("io", exc)
        return 4
    except KeyboardInterrupt:
        _err("interrupted", "terminated by signal")
        return 130


if __name__ == "__main__":
    sys.exit(main())
