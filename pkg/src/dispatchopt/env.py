"""Single-step episodic dispatch MDP: state construction, action mask, reward.

The state concatenates the incident's category one-hot with one feature row
per facility: [normalized travel time, reachability flag, normalized delta to
the best feasible time]. Facilities that are unreachable or of the wrong
category get the worst-case filler row [1, 0, 1] and are masked out; whether
the original formulation zeroes those rows instead is unstated, so the filler
encoding is a documented reconstruction. The reward is 1.0 minus a linear
per-minute penalty on the delta, with no clamping below zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dispatchopt.atlas import TravelTimeAtlas, best_feasible, is_unreachable
from dispatchopt.errors import DispatchError
from dispatchopt.geo import Category
from dispatchopt.scenario import Incident

N_CATEGORIES = 4
FILLER_ROW = (1.0, 0.0, 1.0)

DEFAULT_T_MAX_MIN = 120.0
DEFAULT_D_MAX_MIN = 60.0
DEFAULT_ALPHA = 0.1


@dataclass(frozen=True)
class EnvConstants:
    """Fixed normalization horizons (minutes); data-independent by design."""

    t_max_min: float = DEFAULT_T_MAX_MIN
    d_max_min: float = DEFAULT_D_MAX_MIN

    def __post_init__(self):
        if not (self.t_max_min > 0.0 and self.d_max_min > 0.0):
            raise DispatchError("normalization horizons must be positive")


@dataclass(frozen=True)
class RewardParams:
    alpha: float = DEFAULT_ALPHA  # reward lost per minute of delay
    reward_max: float = 1.0

    def __post_init__(self):
        if not (self.alpha > 0.0):
            raise DispatchError(f"alpha must be positive, got {self.alpha}")
        if self.reward_max != 1.0:
            raise DispatchError("reward_max is fixed at 1.0")


@dataclass(frozen=True, eq=False)
class DispatchState:
    category_onehot: np.ndarray  # (4,)
    facility_features: np.ndarray  # (n_facilities, 3): [tau_norm, reach, delta_norm]
    mask: np.ndarray  # (n_facilities,) bool: category match and reachable

    @property
    def solvable(self) -> bool:
        return bool(self.mask.any())

    @property
    def category_index(self) -> int:
        return int(np.argmax(self.category_onehot))


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    chosen_time: float
    t_star: float
    optimal: bool


@dataclass(frozen=True, eq=False)
class IncidentContext:
    """Atlas row plus reward inputs for one incident."""

    times: np.ndarray  # (n_facilities,) minutes, inf = unreachable
    t_star: float | None  # None when the incident is unsolvable
    params: RewardParams


def build_state(incident: Incident, atlas: TravelTimeAtlas, consts: EnvConstants) -> DispatchState:
    """Assemble the per-incident state vector and action mask.

    An incident with no feasible facility yields an all-false mask (callers
    must treat that as unsolvable, not as an error).
    """
    i = atlas.row_index(incident.node)
    row = atlas.times[i]
    onehot = np.zeros(N_CATEGORIES, dtype=np.float64)
    onehot[int(incident.category)] = 1.0
    n = len(atlas.facilities)
    feats = np.empty((n, 3), dtype=np.float64)
    feats[:] = FILLER_ROW
    mask = np.zeros(n, dtype=bool)
    best = best_feasible(atlas, i, incident.category)
    if best is not None:
        for j in atlas.category_columns(incident.category):
            t = row[j]
            if is_unreachable(t):
                continue
            tau = min(t / consts.t_max_min, 1.0)
            delta = min((t - best.t_star) / consts.d_max_min, 1.0)
            feats[j] = (tau, 1.0, delta)
            mask[j] = True
    return DispatchState(onehot, feats, mask)


def incident_context(incident: Incident, atlas: TravelTimeAtlas, params: RewardParams) -> IncidentContext:
    i = atlas.row_index(incident.node)
    best = best_feasible(atlas, i, incident.category)
    return IncidentContext(
        times=atlas.times[i],
        t_star=None if best is None else best.t_star,
        params=params,
    )


def reward(t_chosen: float, t_star: float, p: RewardParams) -> float:
    """Eq.-style linear precision reward: 1.0 - alpha * (t_chosen - t_star)."""
    if is_unreachable(t_chosen) or is_unreachable(t_star):
        raise DispatchError("reward requires finite travel times")
    if t_chosen < t_star:
        raise DispatchError(
            f"chosen time {t_chosen} is below the best feasible {t_star}: "
            "atlas/mask inconsistency"
        )
    return p.reward_max - p.alpha * (t_chosen - t_star)


def step(state: DispatchState, action: int, ctx: IncidentContext) -> StepOutcome:
    """Terminate the one-step episode: score `action` against the atlas row."""
    if action < 0 or action >= state.mask.shape[0]:
        raise DispatchError(f"action index {action} out of range")
    if not state.mask[action]:
        raise DispatchError(f"action {action} is masked out; the sampler must prevent this")
    if ctx.t_star is None:
        raise DispatchError("step called on an unsolvable incident")
    t_chosen = float(ctx.times[action])
    r = reward(t_chosen, ctx.t_star, ctx.params)
    return StepOutcome(
        reward=r,
        chosen_time=t_chosen,
        t_star=ctx.t_star,
        optimal=t_chosen == ctx.t_star,
    )
