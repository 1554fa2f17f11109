"""A2C trainer: advantage collapse, update arithmetic, determinism, entropy sign."""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from dispatchopt import worlds
from dispatchopt.agent import LossTargets, PolicyParams, backward, forward, init_params
from dispatchopt.atlas import build_atlas
from dispatchopt.env import DispatchState, EnvConstants, RewardParams, build_state
from dispatchopt.errors import InputError
from dispatchopt.geo import Category
from dispatchopt.scenario import ScenarioConfig, generate_incidents
from dispatchopt.trainer import (
    CURVE_HEADER,
    TrainConfig,
    TrainingCurve,
    a2c_update,
    advantage,
    train,
)


def make_state(feats, mask, category=0):
    onehot = np.zeros(4)
    onehot[category] = 1.0
    return DispatchState(onehot, np.asarray(feats, dtype=np.float64), np.asarray(mask, dtype=bool))


class TestAdvantage:
    def test_converged_case(self):
        assert advantage(1.0, 1.0, TrainConfig()) == 0.0

    def test_arithmetic(self):
        assert advantage(0.5, 0.9, TrainConfig()) == pytest.approx(-0.4)

    @pytest.mark.parametrize("lam", [0.001, 0.5, 1.0])
    @pytest.mark.parametrize("gamma", [0.001, 0.9, 1.0])
    def test_gae_parameters_are_inert_in_single_step_episodes(self, lam, gamma):
        # one step, terminal value 0: the lambda sum has a single TD residual
        # delta = r - V(s), so gamma and lambda cancel out entirely
        cfg = TrainConfig(gae_lambda=lam, gamma=gamma)
        assert advantage(0.7, 0.2, cfg) == advantage(0.7, 0.2, TrainConfig())


class TestA2CUpdate:
    def test_fixed_point_zero_gradient_update(self):
        # critic head forced to output exactly 1.0, batch of optimal actions
        d = 8
        params = init_params(d, seed=0)
        params = PolicyParams(
            d,
            params.category_embed,
            params.facility_embed,
            params.facility_bias,
            params.query_proj,
            params.key_proj,
            np.zeros((d, d)),
            np.zeros(d),
            np.zeros(d),
            np.ones(()),
        )
        state = make_state([[0.1, 1, 0.0], [0.4, 1, 0.3]], [True, True])
        batch = [(state, 0, 1.0)] * 4
        cfg = TrainConfig(entropy_coef=0.0, learning_rate=0.5)
        new_params, stats = a2c_update(params, batch, cfg)
        for a, b in zip(params.as_tuple(), new_params.as_tuple()):
            assert np.array_equal(a, b)
        assert stats.critic_loss == 0.0

    def test_single_sample_loss_matches_hand_composition(self):
        params = init_params(4, seed=3)
        state = make_state([[0.2, 1, 0.0], [0.5, 1, 0.25], [1, 0, 1]], [True, True, False])
        action, r = 1, 0.62
        cfg = TrainConfig(entropy_coef=0.01, critic_weight=1.0)
        out = forward(params, state)
        adv = r - out.value
        mask = state.mask
        ent = float(-(out.probs[mask] * out.log_probs[mask]).sum())
        expected = -adv * float(out.log_probs[action]) + (r - out.value) ** 2 - 0.01 * ent
        _, stats = a2c_update(params, [(state, action, r)], cfg)
        assert stats.total(cfg) == pytest.approx(expected, rel=1e-12)
        assert stats.entropy == pytest.approx(ent, rel=1e-12)
        assert stats.mean_reward == r

    def test_doubling_critic_weight_doubles_critic_gradient_block(self):
        params = init_params(4, seed=4)
        state = make_state([[0.3, 1, 0.0], [0.6, 1, 0.2]], [True, True])
        targets_1 = LossTargets(advantage=0.0, critic_target=0.9, critic_weight=1.0, entropy_coef=0.0)
        targets_2 = dataclasses.replace(targets_1, critic_weight=2.0)
        g1 = backward(params, state, 0, targets_1)
        g2 = backward(params, state, 0, targets_2)
        for a, b in zip(g1.arrays, g2.arrays):
            assert np.array_equal(2.0 * a, b)
        # the actor block does not depend on critic_weight at all
        actor_1 = backward(params, state, 0, dataclasses.replace(targets_1, advantage=0.8, critic_target=0.0, critic_weight=0.0))
        actor_2 = backward(params, state, 0, dataclasses.replace(targets_1, advantage=0.8, critic_target=0.0, critic_weight=0.0, entropy_coef=0.0))
        for a, b in zip(actor_1.arrays, actor_2.arrays):
            assert np.array_equal(a, b)

    def test_empty_batch_rejected(self):
        with pytest.raises(InputError, match="non-empty"):
            a2c_update(init_params(4, seed=0), [], TrainConfig())


@pytest.fixture(scope="module")
def tiny_setup():
    world = worlds.line_world(20)
    counts = {c: 10 for c in Category}
    incidents = generate_incidents(
        ScenarioConfig(40, counts, rng_seed=50, cluster_fraction=0.0),
        [],
        world.boundary,
        world.graph,
    )
    nodes = []
    seen = set()
    for inc in incidents:
        if inc.node not in seen:
            seen.add(inc.node)
            nodes.append(inc.node)
    atlas = build_atlas(world.graph, nodes, list(world.facilities), 40.0)
    return world, incidents, atlas


class TestTrain:
    def test_zero_epochs_returns_initialized_params_and_empty_curve(self, tiny_setup):
        _, incidents, atlas = tiny_setup
        cfg = TrainConfig(epochs=0, seed=1, embed_dim=8)
        params, curve = train(incidents, atlas, EnvConstants(), RewardParams(), cfg)
        assert curve.epochs == 0
        params.validate()

    def test_same_seed_identical_curves_and_params(self, tiny_setup):
        _, incidents, atlas = tiny_setup
        cfg = TrainConfig(epochs=12, batch_size=16, seed=5, embed_dim=8, learning_rate=1e-3)
        p1, c1 = train(incidents, atlas, EnvConstants(), RewardParams(), cfg)
        p2, c2 = train(incidents, atlas, EnvConstants(), RewardParams(), cfg)
        assert np.array_equal(c1.mean_reward, c2.mean_reward)
        assert np.array_equal(c1.actor_loss, c2.actor_loss)
        assert np.array_equal(c1.critic_loss, c2.critic_loss)
        assert np.array_equal(c1.entropy, c2.entropy)
        for a, b in zip(p1.as_tuple(), p2.as_tuple()):
            assert np.array_equal(a, b)

    def test_losses_finite_at_every_epoch(self, tiny_setup):
        _, incidents, atlas = tiny_setup
        cfg = TrainConfig(epochs=25, seed=6, embed_dim=8, optimizer="adam", learning_rate=3e-3)
        _, curve = train(incidents, atlas, EnvConstants(), RewardParams(), cfg)
        for series in (curve.mean_reward, curve.actor_loss, curve.critic_loss, curve.entropy):
            assert np.all(np.isfinite(series))

    def test_large_entropy_coefficient_keeps_policy_near_uniform(self, tiny_setup):
        _, incidents, atlas = tiny_setup
        consts = EnvConstants()
        cfg = TrainConfig(
            epochs=150, seed=7, embed_dim=8, entropy_coef=10.0, optimizer="adam", learning_rate=3e-3
        )
        params, _ = train(incidents, atlas, consts, RewardParams(), cfg)
        for inc in incidents[:20]:
            state = build_state(inc, atlas, consts)
            if not state.solvable:
                continue
            out = forward(params, state)
            k = int(state.mask.sum())
            if k < 2:
                continue
            ent = float(-(out.probs[state.mask] * out.log_probs[state.mask]).sum())
            assert abs(ent - math.log(k)) <= 0.05 * math.log(k)

    def test_unsolvable_only_input_rejected(self, tiny_setup):
        world, incidents, atlas = tiny_setup
        # strip the atlas of every facility: all incidents become unsolvable
        bare = build_atlas(world.graph, list(atlas.incident_nodes), [], 40.0)
        with pytest.raises(InputError, match="solvable"):
            train(incidents, bare, EnvConstants(), RewardParams(), TrainConfig(epochs=1))


class TestTrainingCurve:
    def test_rolling_mean_window(self):
        curve = TrainingCurve(
            mean_reward=np.array([0.0, 1.0, 1.0, 1.0]),
            actor_loss=np.zeros(4),
            critic_loss=np.zeros(4),
            entropy=np.zeros(4),
        )
        rolled = curve.rolling_mean_reward(window=2)
        assert rolled.tolist() == [0.0, 0.5, 1.0, 1.0]

    def test_csv_format(self, tmp_path):
        curve = TrainingCurve(
            mean_reward=np.array([0.5]),
            actor_loss=np.array([0.1]),
            critic_loss=np.array([0.2]),
            entropy=np.array([0.3]),
        )
        path = tmp_path / "curve.csv"
        curve.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == CURVE_HEADER
        assert lines[1] == "0,0.5,0.1,0.2,0.3"


class TestTrainConfigValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"epochs": -1},
            {"batch_size": 0},
            {"learning_rate": 0.0},
            {"entropy_coef": -0.1},
            {"optimizer": "rmsprop"},
            {"gae_lambda": 0.0},
        ],
    )
    def test_invalid_configs_rejected(self, kwargs):
        with pytest.raises(InputError):
            TrainConfig(**kwargs)
