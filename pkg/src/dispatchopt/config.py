"""Run configuration: flat key-value text file, the single source of truth.

Format: one `key = value` per line, `#` comments, blank lines ignored.
Relative paths resolve against the config file's directory. Environment
variables never override config values; the CLI's --seed flag may.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from dispatchopt.errors import InputError
from dispatchopt.geo import Category

_REQUIRED = object()


@dataclass(frozen=True)
class RunConfig:
    # input files (resolved to absolute paths at load)
    graph: str = _REQUIRED  # type: ignore[assignment]
    facilities: str = _REQUIRED  # type: ignore[assignment]
    boundary: str = _REQUIRED  # type: ignore[assignment]
    seed: int = _REQUIRED  # type: ignore[assignment]
    centers: str = ""
    regions: str = ""
    # scenario
    n_incidents: int = 2000
    category_counts: tuple[int, int, int, int] = (570, 532, 454, 444)
    cluster_fraction: float = 0.60
    retry_budget: int = 1000
    challenge_n_incidents: int = 500
    challenge_category_counts: tuple[int, int, int, int] = (142, 142, 108, 108)
    challenge_seed: int = -1  # default: seed + 1
    # atlas
    speed_kmh: float = 40.0
    # environment constants
    alpha: float = 0.1
    t_max_min: float = 120.0
    d_max_min: float = 60.0
    # training
    epochs: int = 3500
    batch_size: int = 32
    learning_rate: float = 1e-4
    entropy_coef: float = 0.01
    critic_weight: float = 1.0
    gae_lambda: float = 0.95
    gamma: float = 0.99
    optimizer: str = "sgd"
    embed_dim: int = 64
    # governance
    t_green_min: float = 14.0
    t_red_min: float = 30.0
    coverage_min: float = 0.95
    coverage_red: float = 0.5
    probes_per_category: int = 25
    candidate_cap: int = 500
    assess_seed: int = -1  # default: seed + 2
    zones_k: int = 0
    zones_seed: int = -1  # default: seed + 3

    def resolved_challenge_seed(self) -> int:
        return self.challenge_seed if self.challenge_seed >= 0 else self.seed + 1

    def resolved_assess_seed(self) -> int:
        return self.assess_seed if self.assess_seed >= 0 else self.seed + 2

    def resolved_zones_seed(self) -> int:
        return self.zones_seed if self.zones_seed >= 0 else self.seed + 3


_PATH_KEYS = ("graph", "facilities", "boundary", "centers", "regions")
_COUNT_KEYS = ("category_counts", "challenge_category_counts")


def _parse_value(key: str, text: str, target_type: type) -> object:
    try:
        if key in _COUNT_KEYS:
            parts = tuple(int(tok.strip()) for tok in text.split(","))
            if len(parts) != len(Category):
                raise ValueError(f"need {len(Category)} comma-separated counts")
            return parts
        if target_type is bool:
            return text.strip().lower() in ("1", "true", "yes")
        if target_type is int:
            return int(text)
        if target_type is float:
            return float(text)
        return text.strip()
    except ValueError as exc:
        raise InputError(f"config key {key!r}: cannot parse {text!r} ({exc})") from None


def load_run_config(path: str | Path, seed_override: int | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise InputError(f"config file not found: {path}")
    field_map = {f.name: f for f in fields(RunConfig)}
    values: dict[str, object] = {}
    for line_no, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{line_no}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in field_map:
            raise InputError(f"{path}:{line_no}: unknown config key {key!r}")
        if key in values:
            raise InputError(f"{path}:{line_no}: duplicate config key {key!r}")
        f = field_map[key]
        target = f.type if isinstance(f.type, type) else type(f.default) if f.default is not _REQUIRED else str
        if key in _COUNT_KEYS:
            target = tuple
        elif key == "seed" or isinstance(f.default, bool) or isinstance(f.default, int):
            target = int
        elif isinstance(f.default, float):
            target = float
        else:
            target = str
        values[key] = _parse_value(key, value, target)
    missing = [
        f.name for f in fields(RunConfig) if f.default is _REQUIRED and f.name not in values
    ]
    if missing:
        raise InputError(f"config {path} is missing required key(s): {', '.join(missing)}")
    cfg = RunConfig(**values)  # type: ignore[arg-type]
    if seed_override is not None:
        cfg = replace(cfg, seed=seed_override)
    base = path.parent
    resolved = {}
    for key in _PATH_KEYS:
        value = getattr(cfg, key)
        if value:
            resolved[key] = str((base / value).resolve()) if not Path(value).is_absolute() else value
    cfg = replace(cfg, **resolved)
    _validate(cfg, path)
    return cfg


def _validate(cfg: RunConfig, path: Path) -> None:
    if sum(cfg.category_counts) != cfg.n_incidents:
        raise InputError(
            f"config {path}: category_counts sum {sum(cfg.category_counts)} != n_incidents {cfg.n_incidents}"
        )
    if sum(cfg.challenge_category_counts) != cfg.challenge_n_incidents:
        raise InputError(
            f"config {path}: challenge_category_counts sum != challenge_n_incidents"
        )
    if not (0.0 <= cfg.cluster_fraction <= 1.0):
        raise InputError(f"config {path}: cluster_fraction must be in [0, 1]")
    if cfg.resolved_challenge_seed() == cfg.seed:
        raise InputError(f"config {path}: challenge_seed must differ from seed")
    if cfg.optimizer not in ("sgd", "adam"):
        raise InputError(f"config {path}: optimizer must be sgd or adam")
    for key in ("speed_kmh", "alpha", "t_max_min", "d_max_min", "learning_rate"):
        if not (getattr(cfg, key) > 0):
            raise InputError(f"config {path}: {key} must be positive")


def category_counts_map(counts: tuple[int, int, int, int]) -> dict[Category, int]:
    return {Category(i): c for i, c in enumerate(counts)}


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
