"""Attention actor-critic policy network.

The incident category and each facility's feature row are embedded into a
d-dimensional space; scaled dot-product scores between the incident (query)
and facility (key) embeddings serve directly as policy logits, and the critic
scores the attention-weighted context vector through one tanh hidden layer.
Gradients are closed-form (no autograd framework) so they can be validated
against central finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dispatchopt import _kernels
from dispatchopt.env import DispatchState
from dispatchopt.errors import DispatchError, InputError

DEFAULT_EMBED_DIM = 64
MASKED_LOGIT = _kernels.MASKED_LOGIT

CHECKPOINT_FORMAT = "dispatchopt.checkpoint"
CHECKPOINT_VERSION = 1

PARAM_FIELDS = (
    "category_embed",
    "facility_embed",
    "facility_bias",
    "query_proj",
    "key_proj",
    "critic_w1",
    "critic_b1",
    "critic_w2",
    "critic_b2",
)


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """All learnable tensors; shapes are functions of the embedding width d."""

    d: int
    category_embed: np.ndarray  # (4, d)
    facility_embed: np.ndarray  # (3, d)
    facility_bias: np.ndarray  # (d,)
    query_proj: np.ndarray  # (d, d)
    key_proj: np.ndarray  # (d, d)
    critic_w1: np.ndarray  # (d, d)
    critic_b1: np.ndarray  # (d,)
    critic_w2: np.ndarray  # (d,)
    critic_b2: np.ndarray  # () scalar

    def as_tuple(self) -> tuple[np.ndarray, ...]:
        return tuple(getattr(self, name) for name in PARAM_FIELDS)

    def replace_arrays(self, arrays: tuple[np.ndarray, ...]) -> "PolicyParams":
        return PolicyParams(self.d, *arrays)

    def validate(self) -> None:
        shapes = param_shapes(self.d)
        for name, arr in zip(PARAM_FIELDS, self.as_tuple()):
            if tuple(arr.shape) != shapes[name]:
                raise DispatchError(f"parameter {name} has shape {arr.shape}, expected {shapes[name]}")
            if not np.all(np.isfinite(arr)):
                raise DispatchError(f"parameter {name} contains non-finite values")


def param_shapes(d: int) -> dict[str, tuple[int, ...]]:
    return {
        "category_embed": (4, d),
        "facility_embed": (3, d),
        "facility_bias": (d,),
        "query_proj": (d, d),
        "key_proj": (d, d),
        "critic_w1": (d, d),
        "critic_b1": (d,),
        "critic_w2": (d,),
        "critic_b2": (),
    }


# fan-in per parameter: the input width feeding the tensor's dot products.
_FAN_IN = {
    "category_embed": 4,
    "facility_embed": 3,
    "facility_bias": 3,
    "query_proj": None,  # d
    "key_proj": None,
    "critic_w1": None,
    "critic_b1": None,
    "critic_w2": None,
    "critic_b2": None,
}


def init_params(d: int = DEFAULT_EMBED_DIM, seed: int | np.random.Generator = 0) -> PolicyParams:
    """Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per tensor."""
    if d < 1:
        raise DispatchError(f"embedding width must be >= 1, got {d}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.Generator(np.random.Philox(seed))
    arrays = []
    for name, shape in param_shapes(d).items():
        fan_in = _FAN_IN[name] or d
        bound = 1.0 / np.sqrt(fan_in)
        arrays.append(rng.uniform(-bound, bound, size=shape))
    return PolicyParams(d, *arrays)


@dataclass(frozen=True, eq=False)
class ForwardOutput:
    logits: np.ndarray  # (n,), masked-out entries = MASKED_LOGIT
    log_probs: np.ndarray  # (n,), masked-out entries = -inf
    probs: np.ndarray  # (n,), masked-out entries exactly 0
    value: float
    context: np.ndarray  # (d,)


def forward(params: PolicyParams, state: DispatchState) -> ForwardOutput:
    """Single-state forward pass; requires at least one masked-in facility."""
    if not state.solvable:
        raise DispatchError("forward requires at least one masked-in facility")
    logits, lp, p, v, ctx = _kernels.ac_forward(
        *params.as_tuple(),
        np.array([state.category_index], dtype=np.int64),
        state.facility_features[None, :, :],
        state.mask[None, :],
    )
    return ForwardOutput(logits[0], lp[0], p[0], float(v[0]), ctx[0])


def sample_action(out: ForwardOutput, rng: np.random.Generator) -> int:
    """Draw from the masked categorical distribution; never a masked-out index."""
    return int(sample_rows(out.probs[None, :], rng.random(1))[0])


def sample_rows(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling per row with a zero-probability landing guard."""
    cum = np.cumsum(probs, axis=1)
    idx = (u[:, None] > cum).sum(axis=1)
    idx = np.minimum(idx, probs.shape[1] - 1)
    bad = probs[np.arange(len(idx)), idx] == 0.0
    if bad.any():
        # float residue pushed u past the last positive mass; fall back to the mode
        idx[bad] = np.argmax(probs[bad], axis=1)
    return idx


def greedy_action(out: ForwardOutput) -> int:
    """Argmax over masked-in logits; ties resolve to the lowest index."""
    return int(np.argmax(out.logits))


@dataclass(frozen=True)
class LossTargets:
    """Per-sample loss inputs; the advantage is a constant (no critic gradient
    flows through the actor term)."""

    advantage: float
    critic_target: float
    critic_weight: float = 1.0
    entropy_coef: float = 0.01


@dataclass(frozen=True, eq=False)
class PolicyGrads:
    d: int
    arrays: tuple[np.ndarray, ...]  # ordered as PARAM_FIELDS

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[PARAM_FIELDS.index(name)]


def backward(params: PolicyParams, state: DispatchState, action: int, targets: LossTargets) -> PolicyGrads:
    """Analytic gradients of the total A2C loss for a single sample."""
    if not state.mask[action]:
        raise DispatchError(f"backward called with masked-out action {action}")
    grads, _, _, _ = _kernels.ac_backward(
        *params.as_tuple(),
        np.array([state.category_index], dtype=np.int64),
        state.facility_features[None, :, :],
        state.mask[None, :],
        np.array([action], dtype=np.int64),
        np.array([targets.advantage], dtype=np.float64),
        np.array([targets.critic_target], dtype=np.float64),
        targets.critic_weight,
        targets.entropy_coef,
    )
    check_finite_grads(grads)
    return PolicyGrads(params.d, tuple(grads))


def check_finite_grads(grads: tuple[np.ndarray, ...]) -> None:
    for name, g in zip(PARAM_FIELDS, grads):
        if not np.all(np.isfinite(g)):
            raise DispatchError(f"non-finite gradient in parameter block {name!r}")


# ---------------------------------------------------------------------------
# Checkpoint format: JSON with row-major float lists (see README for the
# byte-exact layout).


def save_checkpoint(params: PolicyParams, path: str | Path, config_hash: str = "") -> None:
    params.validate()
    obj = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "embed_dim": params.d,
        "config_hash": config_hash,
        "arrays": {
            name: np.asarray(arr, dtype=np.float64).ravel(order="C").tolist()
            for name, arr in zip(PARAM_FIELDS, params.as_tuple())
        },
    }
    Path(path).write_text(json.dumps(obj, indent=None, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[PolicyParams, str]:
    path = Path(path)
    if not path.exists():
        raise InputError(f"checkpoint file not found: {path}")
    obj = json.loads(path.read_text(encoding="utf-8"))
    if obj.get("format") != CHECKPOINT_FORMAT or obj.get("version") != CHECKPOINT_VERSION:
        raise InputError(f"unrecognized checkpoint format in {path}")
    d = int(obj["embed_dim"])
    shapes = param_shapes(d)
    arrays = []
    for name in PARAM_FIELDS:
        flat = np.asarray(obj["arrays"][name], dtype=np.float64)
        arrays.append(flat.reshape(shapes[name]))
    params = PolicyParams(d, *arrays)
    params.validate()
    return params, str(obj.get("config_hash", ""))
