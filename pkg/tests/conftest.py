"""Shared fixtures.

Two tiers: a tiny world/net for fast unit tests, and the default-size world
with session-scoped trained checkpoints for the pipeline and acceptance
tests.  Stage wall-clock times are recorded in `stage_times` so the
end-to-end budget check can account for fixtures built earlier in the run.
"""

import time

import pytest

from ftlk.diffusion import SamplerPlan
from ftlk.distill import pretrain_teacher, stage1_adapt
from ftlk.net import NetConfig
from ftlk.world import Codec, Dataset, World, WorldSpec


@pytest.fixture(scope="session")
def stage_times():
    return {}


@pytest.fixture(scope="session")
def world():
    return World(WorldSpec())


@pytest.fixture(scope="session")
def codec(world):
    return Codec.for_world(world)


@pytest.fixture(scope="session")
def dataset(world):
    return Dataset.generate(world, 48, 240, 100)


@pytest.fixture(scope="session")
def net_cfg():
    return NetConfig()


@pytest.fixture(scope="session")
def teacher(dataset, codec, net_cfg, stage_times):
    t0 = time.perf_counter()
    store = pretrain_teacher(dataset, codec, net_cfg, steps=2000, seed=200)
    stage_times["pretrain"] = time.perf_counter() - t0
    return store


@pytest.fixture(scope="session")
def sft(teacher, dataset, codec, net_cfg, stage_times):
    t0 = time.perf_counter()
    store = stage1_adapt(teacher, dataset, codec, net_cfg, (7, 9, 11), 500, 201)
    stage_times["sft"] = time.perf_counter() - t0
    return store


@pytest.fixture(scope="session")
def tiny_world():
    return World(WorldSpec(state_dim=4, identity_dim=2))


@pytest.fixture(scope="session")
def tiny_codec(tiny_world):
    return Codec.for_world(tiny_world)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_world):
    return Dataset.generate(tiny_world, 8, 120, 7)


@pytest.fixture(scope="session")
def tiny_net_cfg():
    return NetConfig(model_dim=8, layers=1, heads=2, ff_dim=16, latent_dim=4)


@pytest.fixture(scope="session")
def tiny_teacher(tiny_dataset, tiny_codec, tiny_net_cfg):
    return pretrain_teacher(tiny_dataset, tiny_codec, tiny_net_cfg,
                            steps=150, seed=9)


@pytest.fixture(scope="session")
def plan2():
    return SamplerPlan(steps=2, timesteps=(1.0, 0.5))
