"""A2C training loop with GAE, entropy regularization, and critic-loss weighting.

Episodes are single-step, so GAE collapses exactly to A = r - V(s); gamma and
gae_lambda are accepted for forward compatibility but are provably inert here
(see `advantage`). One epoch is one seeded-shuffled pass over all solvable
training incidents. The default optimizer is plain seeded SGD for maximum
reproducibility; adaptive moments are available behind `optimizer="adam"`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from dispatchopt import _kernels
from dispatchopt.agent import (
    DEFAULT_EMBED_DIM,
    LossTargets,
    PARAM_FIELDS,
    PolicyParams,
    check_finite_grads,
    forward,
    init_params,
    sample_rows,
)
from dispatchopt.atlas import TravelTimeAtlas
from dispatchopt.env import DispatchState, EnvConstants, RewardParams, build_state, incident_context
from dispatchopt.errors import DispatchError, InputError
from dispatchopt.scenario import Incident

OPTIMIZERS = ("sgd", "adam")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CURVE_HEADER = "epoch,mean_reward,actor_loss,critic_loss,entropy"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3500
    batch_size: int = 32
    learning_rate: float = 1e-4
    entropy_coef: float = 0.01
    critic_weight: float = 1.0
    gae_lambda: float = 0.95
    gamma: float = 0.99
    seed: int = 0
    optimizer: str = "sgd"
    embed_dim: int = DEFAULT_EMBED_DIM

    def __post_init__(self):
        if self.epochs < 0:
            raise InputError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise InputError(f"batch_size must be >= 1, got {self.batch_size}")
        for name in ("learning_rate", "critic_weight", "gae_lambda", "gamma"):
            if not (getattr(self, name) > 0.0):
                raise InputError(f"{name} must be positive, got {getattr(self, name)}")
        if self.entropy_coef < 0.0:
            raise InputError(f"entropy_coef must be >= 0, got {self.entropy_coef}")
        if self.optimizer not in OPTIMIZERS:
            raise InputError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")


@dataclass(frozen=True, eq=False)
class TrainingCurve:
    mean_reward: np.ndarray
    actor_loss: np.ndarray
    critic_loss: np.ndarray
    entropy: np.ndarray

    def __post_init__(self):
        n = len(self.mean_reward)
        if not all(len(a) == n for a in (self.actor_loss, self.critic_loss, self.entropy)):
            raise DispatchError("training-curve series have mismatched lengths")

    @property
    def epochs(self) -> int:
        return len(self.mean_reward)

    def rolling_mean_reward(self, window: int = 50) -> np.ndarray:
        """Trailing mean over up to `window` epochs, one value per epoch."""
        out = np.empty_like(self.mean_reward)
        csum = np.cumsum(self.mean_reward)
        for i in range(len(out)):
            lo = max(0, i - window + 1)
            total = csum[i] - (csum[lo - 1] if lo > 0 else 0.0)
            out[i] = total / (i - lo + 1)
        return out

    def to_csv(self, path: str | Path) -> None:
        lines = [CURVE_HEADER]
        for i in range(self.epochs):
            lines.append(
                f"{i},{float(self.mean_reward[i])!r},{float(self.actor_loss[i])!r},"
                f"{float(self.critic_loss[i])!r},{float(self.entropy[i])!r}"
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class LossStats:
    actor_loss: float
    critic_loss: float
    entropy: float
    mean_reward: float

    def total(self, cfg: TrainConfig) -> float:
        return self.actor_loss + cfg.critic_weight * self.critic_loss - cfg.entropy_coef * self.entropy


def advantage(reward: float, value: float, cfg: TrainConfig) -> float:
    """GAE for a single-step terminal episode.

    With one step and terminal value 0, the only TD residual is
    delta = r + gamma * 0 - V(s), and the lambda sum has a single term, so
    A = r - V(s) for every gamma and gae_lambda. Both fields are accepted
    (and tested) as inert.
    """
    if not (math.isfinite(reward) and math.isfinite(value)):
        raise DispatchError("advantage requires finite reward and value")
    return reward - value


@dataclass(eq=False)
class OptState:
    """Adam moment estimates; unused for SGD."""

    m: tuple[np.ndarray, ...]
    v: tuple[np.ndarray, ...]
    t: int = 0


def init_opt_state(params: PolicyParams) -> OptState:
    return OptState(
        m=tuple(np.zeros_like(a) for a in params.as_tuple()),
        v=tuple(np.zeros_like(a) for a in params.as_tuple()),
    )


def _apply_update(
    params: PolicyParams,
    grads: tuple[np.ndarray, ...],
    cfg: TrainConfig,
    opt_state: OptState | None,
) -> PolicyParams:
    lr = cfg.learning_rate
    if cfg.optimizer == "sgd" or opt_state is None:
        new = tuple(p - lr * g for p, g in zip(params.as_tuple(), grads))
        return params.replace_arrays(new)
    opt_state.t += 1
    t = opt_state.t
    new_arrays = []
    for i, (p, g) in enumerate(zip(params.as_tuple(), grads)):
        opt_state.m[i][...] = ADAM_BETA1 * opt_state.m[i] + (1.0 - ADAM_BETA1) * g
        opt_state.v[i][...] = ADAM_BETA2 * opt_state.v[i] + (1.0 - ADAM_BETA2) * (g * g)
        mh = opt_state.m[i] / (1.0 - ADAM_BETA1**t)
        vh = opt_state.v[i] / (1.0 - ADAM_BETA2**t)
        new_arrays.append(p - lr * mh / (np.sqrt(vh) + ADAM_EPS))
    return params.replace_arrays(tuple(new_arrays))


def _batch_update(
    params: PolicyParams,
    cats: np.ndarray,
    feats: np.ndarray,
    masks: np.ndarray,
    actions: np.ndarray,
    advantages: np.ndarray,
    targets: np.ndarray,
    cfg: TrainConfig,
    opt_state: OptState | None,
) -> tuple[PolicyParams, float, float, float]:
    grads, actor_loss, critic_loss, entropy = _kernels.ac_backward(
        *params.as_tuple(),
        cats,
        feats,
        masks,
        actions,
        advantages,
        targets,
        cfg.critic_weight,
        cfg.entropy_coef,
    )
    check_finite_grads(grads)
    return _apply_update(params, grads, cfg, opt_state), actor_loss, critic_loss, entropy


def a2c_update(
    params: PolicyParams,
    batch: Sequence[tuple[DispatchState, int, float]],
    cfg: TrainConfig,
    opt_state: OptState | None = None,
) -> tuple[PolicyParams, LossStats]:
    """One gradient step on a batch of (state, action, reward) samples.

    The critic target is the episode reward; the advantage for each sample is
    r - V(s) under the incoming parameters.
    """
    if not batch:
        raise InputError("a2c_update requires a non-empty batch")
    n = max(s.mask.shape[0] for s, _, _ in batch)
    if any(s.mask.shape[0] != n for s, _, _ in batch):
        raise InputError("all states in a batch must share one facility count")
    cats = np.array([s.category_index for s, _, _ in batch], dtype=np.int64)
    feats = np.stack([s.facility_features for s, _, _ in batch]).astype(np.float64)
    masks = np.stack([s.mask for s, _, _ in batch])
    actions = np.array([a for _, a, _ in batch], dtype=np.int64)
    rewards = np.array([r for _, _, r in batch], dtype=np.float64)
    for (state, action, r) in batch:
        if not state.mask[action]:
            raise DispatchError(f"batch contains masked-out action {action}")
        if not math.isfinite(r):
            raise DispatchError("batch contains a non-finite reward")
    _, _, _, values, _ = _kernels.ac_forward(*params.as_tuple(), cats, feats, masks)
    advantages = np.array(
        [advantage(float(r), float(v), cfg) for r, v in zip(rewards, values)], dtype=np.float64
    )
    new_params, actor_loss, critic_loss, entropy = _batch_update(
        params, cats, feats, masks, actions, advantages, rewards, cfg, opt_state
    )
    stats = LossStats(actor_loss, critic_loss, entropy, float(rewards.mean()))
    if not math.isfinite(stats.total(cfg)):
        raise DispatchError("non-finite loss in a2c_update")
    return new_params, stats


def a2c_loss(params: PolicyParams, state: DispatchState, action: int, targets: LossTargets) -> float:
    """Scalar total loss for one sample; used by the finite-difference checks."""
    out = forward(params, state)
    lp = out.log_probs
    mask = state.mask
    p = out.probs
    ent = float(-(p[mask] * lp[mask]).sum())
    actor = -targets.advantage * float(lp[action])
    critic = (targets.critic_target - out.value) ** 2
    return actor + targets.critic_weight * critic - targets.entropy_coef * ent


@dataclass(eq=False)
class _TrainTensors:
    """Static per-incident arrays cached once; the world does not change."""

    cats: np.ndarray  # (N,)
    feats: np.ndarray  # (N, n_fac, 3)
    masks: np.ndarray  # (N, n_fac)
    times: np.ndarray  # (N, n_fac)
    t_star: np.ndarray  # (N,)
    ids: list[str]


def _prepare_tensors(
    incidents: Sequence[Incident],
    atlas: TravelTimeAtlas,
    consts: EnvConstants,
    params: RewardParams,
) -> _TrainTensors:
    cats, feats, masks, times, tstar, ids = [], [], [], [], [], []
    for inc in incidents:
        state = build_state(inc, atlas, consts)
        if not state.solvable:
            continue  # unsolvable incidents are excluded from training
        ctx = incident_context(inc, atlas, params)
        cats.append(state.category_index)
        feats.append(state.facility_features)
        masks.append(state.mask)
        times.append(ctx.times)
        tstar.append(ctx.t_star)
        ids.append(inc.id)
    if not ids:
        raise InputError("no solvable training incidents")
    return _TrainTensors(
        cats=np.array(cats, dtype=np.int64),
        feats=np.stack(feats).astype(np.float64),
        masks=np.stack(masks),
        times=np.stack(times).astype(np.float64),
        t_star=np.array(tstar, dtype=np.float64),
        ids=ids,
    )


def train(
    incidents: Sequence[Incident],
    atlas: TravelTimeAtlas,
    consts: EnvConstants,
    reward_params: RewardParams,
    cfg: TrainConfig,
) -> tuple[PolicyParams, TrainingCurve]:
    """Train on all solvable incidents; deterministic given cfg.seed."""
    tensors = _prepare_tensors(incidents, atlas, consts, reward_params)
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    params = init_params(cfg.embed_dim, rng)
    opt_state = init_opt_state(params) if cfg.optimizer == "adam" else None
    n = len(tensors.ids)
    mean_reward = np.zeros(cfg.epochs)
    actor_losses = np.zeros(cfg.epochs)
    critic_losses = np.zeros(cfg.epochs)
    entropies = np.zeros(cfg.epochs)
    alpha = reward_params.alpha
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        reward_sum = 0.0
        stat_sums = np.zeros(3)
        for lo in range(0, n, cfg.batch_size):
            sel = perm[lo : lo + cfg.batch_size]
            cats = tensors.cats[sel]
            feats = tensors.feats[sel]
            masks = tensors.masks[sel]
            _, _, probs, values, _ = _kernels.ac_forward(*params.as_tuple(), cats, feats, masks)
            actions = sample_rows(probs, rng.random(len(sel)))
            t_chosen = tensors.times[sel, actions]
            rewards = 1.0 - alpha * (t_chosen - tensors.t_star[sel])
            advantages = rewards - values
            params, a_loss, c_loss, ent = _batch_update(
                params, cats, feats, masks, actions, advantages, rewards, cfg, opt_state
            )
            if not (math.isfinite(a_loss) and math.isfinite(c_loss) and math.isfinite(ent)):
                raise DispatchError(
                    f"non-finite loss at epoch {epoch}, first incident {tensors.ids[int(sel[0])]!r}"
                )
            reward_sum += float(rewards.sum())
            stat_sums += np.array([a_loss, c_loss, ent]) * len(sel)
        mean_reward[epoch] = reward_sum / n
        actor_losses[epoch], critic_losses[epoch], entropies[epoch] = stat_sums / n
    curve = TrainingCurve(mean_reward, actor_losses, critic_losses, entropies)
    return params, curve
