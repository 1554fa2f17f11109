"""Synthetic incident generation: population-weighted mixture sampling in a boundary.

A configurable fraction of incidents is drawn as Gaussian noise around weighted
population centers; the rest are uniform over the boundary's bounding box. All
draws are rejection-validated against the boundary polygon and snapped to the
road graph. Generation is single-threaded and fully reproducible from the seed
(Philox counter-based generator, recorded in the sidecar metadata).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from dispatchopt.errors import InputError
from dispatchopt.geo import (
    Category,
    GeoPoint,
    RegionBoundary,
    RoadGraph,
    point_in_region,
    snap_to_node,
)

RNG_ALGORITHM = "philox"
DEFAULT_SIGMA_DEG = 0.05
DEFAULT_RETRY_BUDGET = 1000


class Split(str, Enum):
    TRAINING = "training"
    CHALLENGE = "challenge"


@dataclass(frozen=True)
class PopulationCenter:
    center: GeoPoint
    weight: float = 1.0
    sigma_deg: float = DEFAULT_SIGMA_DEG

    def __post_init__(self):
        if not (self.weight > 0.0):
            raise InputError(f"population center weight must be positive, got {self.weight}")
        if not (self.sigma_deg > 0.0):
            raise InputError(f"population center sigma must be positive, got {self.sigma_deg}")


@dataclass(frozen=True)
class ScenarioConfig:
    n_incidents: int
    category_counts: dict[Category, int]
    rng_seed: int
    cluster_fraction: float = 0.60
    retry_budget: int = DEFAULT_RETRY_BUDGET
    split: Split = Split.TRAINING

    def __post_init__(self):
        if not (0.0 <= self.cluster_fraction <= 1.0):
            raise InputError(f"cluster_fraction must be in [0, 1], got {self.cluster_fraction}")
        if self.n_incidents < 0:
            raise InputError(f"n_incidents must be non-negative, got {self.n_incidents}")
        total = sum(self.category_counts.values())
        if total != self.n_incidents:
            raise InputError(
                f"category counts sum to {total}, expected n_incidents={self.n_incidents}"
            )
        if any(c < 0 for c in self.category_counts.values()):
            raise InputError("category counts must be non-negative")


@dataclass(frozen=True)
class Incident:
    id: str
    category: Category
    location: GeoPoint
    node: str
    split: Split
    clustered: bool = False  # provenance label: True = mixture's Gaussian branch


def _draw_in_region(draw, boundary: RegionBoundary, budget: int, what: str) -> GeoPoint:
    for _ in range(budget):
        p = draw()
        if p is None:
            continue
        if point_in_region(p, boundary):
            return p
    raise InputError(
        f"rejection sampling exhausted {budget} attempts for a {what} draw; "
        "boundary area is vanishingly small relative to its bounding box"
    )


def generate_incidents(
    cfg: ScenarioConfig,
    centers: Sequence[PopulationCenter],
    boundary: RegionBoundary,
    g: RoadGraph,
) -> list[Incident]:
    """Draw exactly cfg.n_incidents incidents matching the category quotas.

    round(n * cluster_fraction) points come from the clustered branch (center
    chosen proportional to weight, then isotropic Gaussian noise); the rest are
    uniform over the boundary's bounding box. Every point is validated against
    the boundary and redrawn on rejection.
    """
    n_clustered = round(cfg.n_incidents * cfg.cluster_fraction)
    if n_clustered > 0 and not centers:
        raise InputError("cluster_fraction > 0 requires at least one population center")
    rng = np.random.Generator(np.random.Philox(cfg.rng_seed))
    categories: list[Category] = []
    for cat in sorted(cfg.category_counts):
        categories.extend([cat] * cfg.category_counts[cat])
    rng.shuffle(categories)  # type: ignore[arg-type]
    lon_min, lat_min, lon_max, lat_max = boundary.bbox()
    weights = np.array([c.weight for c in centers], dtype=np.float64)
    if weights.size:
        weights = weights / weights.sum()

    def clustered_draw() -> GeoPoint | None:
        ci = int(rng.choice(len(centers), p=weights))
        c = centers[ci]
        lon = c.center.lon + rng.normal(0.0, c.sigma_deg)
        lat = c.center.lat + rng.normal(0.0, c.sigma_deg)
        if not (-180.0 <= lon <= 180.0 and -90.0 <= lat <= 90.0):
            return None
        return GeoPoint(lon, lat)

    def uniform_draw() -> GeoPoint | None:
        lon = rng.uniform(lon_min, lon_max)
        lat = rng.uniform(lat_min, lat_max)
        return GeoPoint(lon, lat)

    prefix = "trn" if cfg.split is Split.TRAINING else "chl"
    incidents: list[Incident] = []
    for i in range(cfg.n_incidents):
        clustered = i < n_clustered
        p = _draw_in_region(
            clustered_draw if clustered else uniform_draw,
            boundary,
            cfg.retry_budget,
            "clustered" if clustered else "uniform",
        )
        node = snap_to_node(p, g)
        incidents.append(
            Incident(
                id=f"{prefix}-{i:05d}",
                category=categories[i],
                location=p,
                node=node,
                split=cfg.split,
                clustered=clustered,
            )
        )
    return incidents


def generate_challenge_set(
    cfg: ScenarioConfig,
    centers: Sequence[PopulationCenter],
    boundary: RegionBoundary,
    g: RoadGraph,
    training_seed: int | None = None,
) -> list[Incident]:
    """Same mixture generator with split=Challenge; the seed must differ from training."""
    if training_seed is not None and training_seed == cfg.rng_seed:
        raise InputError("challenge set must use a seed disjoint from the training set")
    return generate_incidents(replace(cfg, split=Split.CHALLENGE), centers, boundary, g)


# ---------------------------------------------------------------------------
# Serialization


def load_centers(path: str | Path) -> list[PopulationCenter]:
    """GeoJSON FeatureCollection of Points with optional weight/sigma_deg properties."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"population centers file not found: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"centers file {path} is not valid JSON: {exc}") from None
    if obj.get("type") != "FeatureCollection":
        raise InputError(f"centers file {path}: expected a FeatureCollection")
    centers: list[PopulationCenter] = []
    for i, feat in enumerate(obj.get("features", [])):
        geom = feat.get("geometry") or {}
        if geom.get("type") != "Point":
            raise InputError(f"centers file {path}: feature {i} is not a Point")
        lon, lat = geom["coordinates"][:2]
        props = feat.get("properties") or {}
        centers.append(
            PopulationCenter(
                center=GeoPoint(float(lon), float(lat)),
                weight=float(props.get("weight", 1.0)),
                sigma_deg=float(props.get("sigma_deg", DEFAULT_SIGMA_DEG)),
            )
        )
    return centers


def save_incidents(
    incidents: Sequence[Incident],
    geojson_path: str | Path,
    meta_path: str | Path | None = None,
    cfg: ScenarioConfig | None = None,
) -> None:
    features = [
        {
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [inc.location.lon, inc.location.lat]},
            "properties": {"id": inc.id, "category": int(inc.category), "split": inc.split.value},
        }
        for inc in incidents
    ]
    obj = {"type": "FeatureCollection", "features": features}
    Path(geojson_path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")
    if meta_path is not None:
        by_cat = {int(c): 0 for c in Category}
        n_clustered = 0
        for inc in incidents:
            by_cat[int(inc.category)] += 1
            n_clustered += int(inc.clustered)
        meta = {
            "format": "dispatchopt.incidents-meta",
            "version": 1,
            "rng": RNG_ALGORITHM,
            "n_incidents": len(incidents),
            "n_clustered": n_clustered,
            "category_histogram": by_cat,
        }
        if cfg is not None:
            meta.update(
                {
                    "seed": cfg.rng_seed,
                    "cluster_fraction": cfg.cluster_fraction,
                    "split": cfg.split.value,
                    "retry_budget": cfg.retry_budget,
                }
            )
        Path(meta_path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_incidents(path: str | Path, g: RoadGraph) -> list[Incident]:
    """Read an incident FeatureCollection and re-snap points to the graph."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"incidents file not found: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"incidents file {path} is not valid JSON: {exc}") from None
    if obj.get("type") != "FeatureCollection":
        raise InputError(f"incidents file {path}: expected a FeatureCollection")
    incidents: list[Incident] = []
    for i, feat in enumerate(obj.get("features", [])):
        geom = feat.get("geometry") or {}
        if geom.get("type") != "Point":
            raise InputError(f"incidents file {path}: feature {i} is not a Point")
        lon, lat = geom["coordinates"][:2]
        props = feat.get("properties") or {}
        try:
            split = Split(str(props.get("split", Split.TRAINING.value)))
        except ValueError:
            raise InputError(f"incidents file {path}: feature {i} has unknown split") from None
        location = GeoPoint(float(lon), float(lat))
        incidents.append(
            Incident(
                id=str(props.get("id", f"inc-{i:05d}")),
                category=Category.parse(props.get("category")),
                location=location,
                node=snap_to_node(location, g),
                split=split,
            )
        )
    return incidents
