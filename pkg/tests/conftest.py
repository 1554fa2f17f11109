"""Shared fixtures: synthetic worlds, atlases, and one trained policy.

The barrier-world training run is session-scoped because the convergence,
generalization, baseline-separation, and latency acceptance criteria all
evaluate the same trained policy.
"""

from __future__ import annotations

import time

import pytest
from hypothesis import HealthCheck, settings

from dispatchopt import worlds
from dispatchopt.atlas import build_atlas
from dispatchopt.env import EnvConstants, RewardParams
from dispatchopt.geo import Category
from dispatchopt.scenario import ScenarioConfig, Split, generate_challenge_set, generate_incidents
from dispatchopt.trainer import TrainConfig, train

settings.register_profile(
    "ci", max_examples=50, deadline=None, derandomize=True, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("ci")

BARRIER_SPEED_KMH = 40.0
TRAIN_SEED = 2024
CHALLENGE_SEED = 4096
TRAIN_COUNTS = {Category(0): 90, Category(1): 80, Category(2): 70, Category(3): 60}
CHALLENGE_COUNTS = {Category(0): 30, Category(1): 30, Category(2): 20, Category(3): 20}

# Criterion-pinned toy-run hyperparameters (the epoch budget is the criterion's).
BARRIER_TRAIN_CONFIG = TrainConfig(
    epochs=2000,
    batch_size=32,
    learning_rate=3e-3,
    entropy_coef=1e-3,
    critic_weight=1.0,
    seed=11,
    optimizer="adam",
    embed_dim=64,
)


@pytest.fixture(scope="session")
def barrier():
    return worlds.barrier_world()


@pytest.fixture(scope="session")
def barrier_incidents(barrier):
    cfg = ScenarioConfig(300, TRAIN_COUNTS, rng_seed=TRAIN_SEED)
    return generate_incidents(cfg, barrier.centers, barrier.boundary, barrier.graph)


@pytest.fixture(scope="session")
def barrier_challenge(barrier):
    cfg = ScenarioConfig(100, CHALLENGE_COUNTS, rng_seed=CHALLENGE_SEED, split=Split.CHALLENGE)
    return generate_challenge_set(cfg, barrier.centers, barrier.boundary, barrier.graph, training_seed=TRAIN_SEED)


@pytest.fixture(scope="session")
def barrier_atlas(barrier, barrier_incidents, barrier_challenge):
    seen: set[str] = set()
    nodes: list[str] = []
    for inc in list(barrier_incidents) + list(barrier_challenge):
        if inc.node not in seen:
            seen.add(inc.node)
            nodes.append(inc.node)
    return build_atlas(barrier.graph, nodes, barrier.facilities, BARRIER_SPEED_KMH)


@pytest.fixture(scope="session")
def env_constants():
    return EnvConstants()


@pytest.fixture(scope="session")
def reward_params():
    return RewardParams()


@pytest.fixture(scope="session")
def barrier_training_run(barrier_incidents, barrier_atlas, env_constants, reward_params):
    """(params, curve, wall_seconds) from the full 2000-epoch barrier-world run."""
    t0 = time.perf_counter()
    params, curve = train(barrier_incidents, barrier_atlas, env_constants, reward_params, BARRIER_TRAIN_CONFIG)
    return params, curve, time.perf_counter() - t0
