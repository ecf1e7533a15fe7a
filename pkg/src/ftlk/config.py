"""Run configuration: one JSON document describing a whole experiment.

The document mirrors the dataclass tree exactly; parsing is strict. Unknown
keys anywhere in the tree are rejected, and every violation found — unknown
keys, type errors, invariant failures, cross-section mismatches — is reported
in a single ConfigError rather than one at a time.
"""

import dataclasses
from dataclasses import dataclass, field
import json

from .diffusion import SamplerPlan
from .distill import DistillConfig
from .errors import ConfigError
from .net import NetConfig
from .streaming import StreamConfig
from .world import WorldSpec


@dataclass(frozen=True)
class Seeds:
    data: int = 100
    init: int = 200
    run: int = 300

    def validate(self) -> list:
        return [f"seeds.{name} must be a nonnegative integer"
                for name in ("data", "init", "run")
                if not isinstance(getattr(self, name), int) or getattr(self, name) < 0]


@dataclass(frozen=True)
class RunConfig:
    world: WorldSpec = field(default_factory=WorldSpec)
    net: NetConfig = field(default_factory=NetConfig)
    sampler: SamplerPlan = field(default_factory=SamplerPlan)
    distill: DistillConfig = field(default_factory=DistillConfig)
    stream: StreamConfig = field(default_factory=StreamConfig)
    seeds: Seeds = field(default_factory=Seeds)
    run_dir: str = "runs/default"

    def validate(self) -> list:
        problems = []
        for name in ("world", "net", "sampler", "distill", "stream", "seeds"):
            sub = getattr(self, name)
            problems += [f"{name}.{p}" if not p.startswith(name) else p
                         for p in sub.validate()]
        if self.net.latent_dim != self.world.state_dim:
            problems.append("net.latent_dim must equal world.state_dim "
                            f"({self.net.latent_dim} != {self.world.state_dim})")
        if self.stream.chunk_len - self.stream.motion_len < 1:
            problems.append("stream must generate at least one new frame per chunk")
        if not self.run_dir:
            problems.append("run_dir must be a nonempty path")
        return problems


_TUPLE_FIELDS = {"timesteps"}  # JSON lists that round-trip to tuples


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name))
                for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(x) for x in obj]
    return obj


def _build(cls, data, path: str, problems: list):
    """Construct dataclass `cls` from a plain dict, appending every problem."""
    if not isinstance(data, dict):
        problems.append(f"{path}: expected an object")
        return None
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in fields:
            problems.append(f"{path}.{key}: unknown key")
    kwargs = {}
    for name, f in fields.items():
        if name not in data:
            continue
        value = data[name]
        if dataclasses.is_dataclass(f.type):
            sub = _build(f.type, value, f"{path}.{name}", problems)
            if sub is None:
                continue
            value = sub
        elif name in _TUPLE_FIELDS:
            if not isinstance(value, (list, tuple)):
                problems.append(f"{path}.{name}: expected a list")
                continue
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        problems += [f"{path}: {v}" for v in exc.violations]
    except (TypeError, ValueError) as exc:
        problems.append(f"{path}: {exc}")
    return None


def to_dict(cfg: RunConfig) -> dict:
    return _to_plain(cfg)


def from_dict(data: dict) -> RunConfig:
    problems = []
    cfg = _build(RunConfig, data, "config", problems)
    if cfg is not None and isinstance(data, dict):
        stream_section = data.get("stream")
        explicit = isinstance(stream_section, dict) and "sampler" in stream_section
        if not explicit:
            # The top-level sampler applies everywhere; a stream section only
            # departs from it by spelling out its own.
            cfg = dataclasses.replace(
                cfg, stream=dataclasses.replace(cfg.stream, sampler=cfg.sampler))
    if cfg is not None:
        problems += cfg.validate()
    if problems:
        raise ConfigError(problems)
    return cfg


def to_json(cfg: RunConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n"


def from_json(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config is not valid JSON: {exc}"])
    return from_dict(data)


def load(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return from_json(fh.read())


def save(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_json(cfg))
