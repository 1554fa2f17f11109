"""Governance engine: service zones, region grading, and intervention planning.

Grading thresholds are configuration, not data: a region/category pair is
Effective (Green) when the mean best-possible response time and probe coverage
clear the green thresholds, a Desert (Red) when either badly fails, At-Risk
(Yellow) otherwise. Intervention planning is a greedy placement loop per
flagged pair — candidates are scored lexicographically (coverage first, then
mean best time) because the mean over *solvable* probes is not monotone when
coverage grows. Greedy is an explicit approximation: exact minimal placement
is set-cover-hard.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from dispatchopt.atlas import TravelTimeAtlas, best_feasible, times_to_node
from dispatchopt.errors import InputError
from dispatchopt.geo import (
    Category,
    Facility,
    GeoPoint,
    RegionBoundary,
    RoadGraph,
    point_in_region,
)
from dispatchopt.scenario import Incident

DEFAULT_CANDIDATE_CAP = 500
KMEANS_MAX_ITER = 300


class Grade(str, Enum):
    GREEN = "effective"
    YELLOW = "at_risk"
    RED = "desert"
    UNGRADABLE = "ungradable"


@dataclass(frozen=True)
class GradeThresholds:
    t_green_min: float = 14.0
    t_red_min: float = 30.0
    coverage_min: float = 0.95
    coverage_red: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.t_green_min <= self.t_red_min):
            raise InputError("need 0 < t_green_min <= t_red_min")
        if not (0.0 <= self.coverage_red <= self.coverage_min <= 1.0):
            raise InputError("need 0 <= coverage_red <= coverage_min <= 1")

    def grade(self, mean_best_time: float, coverage: float) -> Grade:
        if coverage < self.coverage_red or mean_best_time > self.t_red_min:
            return Grade.RED
        if mean_best_time <= self.t_green_min and coverage >= self.coverage_min:
            return Grade.GREEN
        return Grade.YELLOW


@dataclass(frozen=True)
class ServiceGrade:
    region_id: str
    category: Category
    mean_best_time: float  # minutes over solvable probes; inf when none solvable
    coverage: float  # solvable fraction of probes
    grade: Grade


# ---------------------------------------------------------------------------
# Service zones (k-means)


@dataclass(frozen=True, eq=False)
class ZoneAssignment:
    k: int
    centroids: np.ndarray  # (k, 2) lon/lat
    assignment: np.ndarray  # (n,) zone index per point
    wcss_trace: tuple[float, ...] = ()  # objective after each Lloyd assignment step


def _nearest_centroid(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def cluster_zones(points: Sequence[GeoPoint] | np.ndarray, k: int, seed: int) -> ZoneAssignment:
    """Lloyd k-means on (lon, lat) with seeded farthest-point initialization.

    Runs to an assignment fixed point or 300 iterations; an emptied cluster is
    reseeded at the point farthest from the surviving centroids.
    """
    pts = (
        np.asarray(points, dtype=np.float64)
        if isinstance(points, np.ndarray)
        else np.array([[p.lon, p.lat] for p in points], dtype=np.float64)
    )
    n = len(pts)
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    if k > n:
        raise InputError(f"k={k} exceeds the number of points ({n})")
    rng = np.random.Generator(np.random.Philox(seed))
    centroids = np.empty((k, 2), dtype=np.float64)
    centroids[0] = pts[int(rng.integers(n))]
    min_d2 = ((pts - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        centroids[j] = pts[int(np.argmax(min_d2))]
        min_d2 = np.minimum(min_d2, ((pts - centroids[j]) ** 2).sum(axis=1))
    assign = _nearest_centroid(pts, centroids)
    trace = [float(((pts - centroids[assign]) ** 2).sum())]
    for _ in range(KMEANS_MAX_ITER):
        for j in range(k):
            members = pts[assign == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
            else:
                d2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2).min(axis=1)
                centroids[j] = pts[int(np.argmax(d2))]
        new_assign = _nearest_centroid(pts, centroids)
        trace.append(float(((pts - centroids[new_assign]) ** 2).sum()))
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return ZoneAssignment(k, centroids, assign, tuple(trace))


def within_cluster_ss(za: ZoneAssignment, points: np.ndarray) -> float:
    return float(((points - za.centroids[za.assignment]) ** 2).sum())


# ---------------------------------------------------------------------------
# Assessment


def _probe_stats(t_star_values: Sequence[float], n_probes: int) -> tuple[float, float]:
    """(mean best time over solvable probes, solvable coverage)."""
    solvable = [t for t in t_star_values if math.isfinite(t)]
    coverage = len(solvable) / n_probes if n_probes else 0.0
    mean = float(np.mean(solvable)) if solvable else math.inf
    return mean, coverage


def assess(
    probes_by_region: dict[str, Sequence[Incident]],
    atlas: TravelTimeAtlas,
    thresholds: GradeThresholds,
) -> list[ServiceGrade]:
    """Grade every (region, category) pair from its probes' best feasible times.

    A pair with zero probes is marked Ungradable explicitly, never skipped.
    """
    grades: list[ServiceGrade] = []
    for region_id in sorted(probes_by_region):
        probes = probes_by_region[region_id]
        for cat in Category:
            cat_probes = [p for p in probes if p.category == cat]
            if not cat_probes:
                grades.append(ServiceGrade(region_id, cat, math.nan, math.nan, Grade.UNGRADABLE))
                continue
            t_values = []
            for p in cat_probes:
                best = best_feasible(atlas, atlas.row_index(p.node), cat)
                t_values.append(math.inf if best is None else best.t_star)
            mean, coverage = _probe_stats(t_values, len(cat_probes))
            grades.append(ServiceGrade(region_id, cat, mean, coverage, thresholds.grade(mean, coverage)))
    return grades


# ---------------------------------------------------------------------------
# Intervention planning


@dataclass(frozen=True)
class ProposedSite:
    location: GeoPoint
    node: str
    category: Category


@dataclass(frozen=True)
class RegionCategoryPlan:
    region_id: str
    category: Category
    sites: tuple[ProposedSite, ...]
    time_before: float  # minutes; inf when no probe was solvable
    time_after: float
    coverage_before: float
    coverage_after: float
    status: str  # "effective" | "infeasible" | "already_effective" | "ungradable"

    @property
    def n_new(self) -> int:
        return len(self.sites)


@dataclass(frozen=True)
class InterventionPlan:
    entries: tuple[RegionCategoryPlan, ...]

    def proposed_facilities(self, id_prefix: str = "new") -> list[Facility]:
        """Materialize the proposed sites as facilities for closed-loop checks."""
        out = []
        for e in self.entries:
            for k, s in enumerate(e.sites):
                out.append(
                    Facility(
                        id=f"{id_prefix}-{e.region_id}-{int(e.category)}-{k}",
                        category=s.category,
                        location=s.location,
                        node=s.node,
                    )
                )
        return out


def region_candidate_nodes(
    g: RoadGraph, boundary: RegionBoundary, cap: int = DEFAULT_CANDIDATE_CAP
) -> list[str]:
    """All graph nodes inside the region, deterministically strided down to `cap`."""
    inside = [
        nid
        for nid in g.node_ids
        if point_in_region(GeoPoint(g.coords[g.node_index[nid]][0], g.coords[g.node_index[nid]][1]), boundary)
    ]
    if cap and len(inside) > cap:
        stride = len(inside) / cap
        inside = [inside[int(i * stride)] for i in range(cap)]
    return inside


def plan_interventions(
    grades: Sequence[ServiceGrade],
    probes_by_region: dict[str, Sequence[Incident]],
    atlas: TravelTimeAtlas,
    graph: RoadGraph,
    candidates_by_region: dict[str, Sequence[str]],
    thresholds: GradeThresholds,
    speed_kmh: float,
) -> InterventionPlan:
    """Greedy per flagged (region, category): add the candidate that (coverage
    first, then mean) improves the region most, until Effective or exhausted.

    Candidate travel times come from one reverse-graph Dijkstra per candidate
    node (cached across categories), exactly the arithmetic a full atlas
    rebuild would use, so incremental and from-scratch results agree.
    """
    candidate_times: dict[str, np.ndarray] = {}

    def times_for(node: str) -> np.ndarray:
        if node not in candidate_times:
            candidate_times[node] = times_to_node(graph, node, speed_kmh)
        return candidate_times[node]

    entries: list[RegionCategoryPlan] = []
    for grade in grades:
        region_id, cat = grade.region_id, grade.category
        probes = [p for p in probes_by_region.get(region_id, []) if p.category == cat]
        if grade.grade is Grade.UNGRADABLE or not probes:
            entries.append(
                RegionCategoryPlan(region_id, cat, (), math.nan, math.nan, math.nan, math.nan, "ungradable")
            )
            continue
        t_now = np.array(
            [
                b.t_star if (b := best_feasible(atlas, atlas.row_index(p.node), cat)) else math.inf
                for p in probes
            ],
            dtype=np.float64,
        )
        mean_before, cov_before = _probe_stats(t_now.tolist(), len(probes))
        if grade.grade is Grade.GREEN:
            entries.append(
                RegionCategoryPlan(
                    region_id, cat, (), mean_before, mean_before, cov_before, cov_before, "already_effective"
                )
            )
            continue
        pool = list(candidates_by_region.get(region_id, []))
        if not pool:
            raise InputError(f"no candidate nodes supplied for flagged region {region_id!r}")
        probe_idx = np.array([graph.require_index(p.node) for p in probes], dtype=np.int64)
        sites: list[ProposedSite] = []
        mean, cov = mean_before, cov_before
        while thresholds.grade(mean, cov) is not Grade.GREEN and pool:
            best_key: tuple[float, float, str] | None = None
            best_node = None
            best_t = None
            for node in pool:
                t_cand = np.minimum(t_now, times_for(node)[probe_idx])
                m, c = _probe_stats(t_cand.tolist(), len(probes))
                key = (-c, m, node)
                if best_key is None or key < best_key:
                    best_key, best_node, best_t = key, node, t_cand
            new_cov, new_mean = -best_key[0], best_key[1]
            if (new_cov, -new_mean) <= (cov, -mean):
                break  # no candidate improves coverage or mean; thresholds unreachable
            pool.remove(best_node)
            t_now = best_t
            mean, cov = new_mean, new_cov
            ni = graph.node_index[best_node]
            sites.append(
                ProposedSite(GeoPoint(float(graph.coords[ni][0]), float(graph.coords[ni][1])), best_node, cat)
            )
        status = "effective" if thresholds.grade(mean, cov) is Grade.GREEN else "infeasible"
        entries.append(
            RegionCategoryPlan(
                region_id, cat, tuple(sites), mean_before, mean, cov_before, cov, status
            )
        )
    return InterventionPlan(tuple(entries))


# ---------------------------------------------------------------------------
# Writers


def _fmt_minutes(x: float) -> str:
    if math.isnan(x):
        return ""
    return "unreachable" if math.isinf(x) else repr(float(x))


def write_assessment_csv(grades: Sequence[ServiceGrade], path: str | Path) -> None:
    lines = ["region_id,category,mean_best_time_min,coverage,grade"]
    for g in grades:
        coverage = "" if math.isnan(g.coverage) else repr(float(g.coverage))
        lines.append(
            f"{g.region_id},{int(g.category)},{_fmt_minutes(g.mean_best_time)},{coverage},{g.grade.value}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_assessment_geojson(
    grades: Sequence[ServiceGrade], regions: Sequence[RegionBoundary], path: str | Path
) -> None:
    by_region: dict[str, list[ServiceGrade]] = {}
    for g in grades:
        by_region.setdefault(g.region_id, []).append(g)
    features = []
    for region in regions:
        rings = [[[p.lon, p.lat] for p in region.outer_ring]] + [
            [[p.lon, p.lat] for p in hole] for hole in region.holes
        ]
        props: dict[str, object] = {"region_id": region.region_id}
        for g in by_region.get(region.region_id, []):
            props[f"grade_category_{int(g.category)}"] = g.grade.value
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": rings},
                "properties": props,
            }
        )
    obj = {"type": "FeatureCollection", "features": features}
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def write_intervention_csv(plan: InterventionPlan, path: str | Path) -> None:
    lines = ["region_id,category,n_new,site_lon,site_lat,time_before_min,time_after_min,status"]
    for e in plan.entries:
        before, after = _fmt_minutes(e.time_before), _fmt_minutes(e.time_after)
        if e.sites:
            for s in e.sites:
                lines.append(
                    f"{e.region_id},{int(e.category)},{e.n_new},{s.location.lon!r},"
                    f"{s.location.lat!r},{before},{after},{e.status}"
                )
        else:
            lines.append(f"{e.region_id},{int(e.category)},0,,,{before},{after},{e.status}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_intervention_geojson(plan: InterventionPlan, path: str | Path) -> None:
    features = []
    for e in plan.entries:
        for k, s in enumerate(e.sites):
            features.append(
                {
                    "type": "Feature",
                    "geometry": {"type": "Point", "coordinates": [s.location.lon, s.location.lat]},
                    "properties": {
                        "region_id": e.region_id,
                        "category": int(e.category),
                        "site_index": k,
                        "node": s.node,
                    },
                }
            )
    obj = {"type": "FeatureCollection", "features": features}
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def write_zones_csv(za: ZoneAssignment, ids: Sequence[str], path: str | Path) -> None:
    lines = ["point_id,zone"]
    for pid, z in zip(ids, za.assignment):
        lines.append(f"{pid},{int(z)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_zone_centroids_geojson(za: ZoneAssignment, path: str | Path) -> None:
    features = [
        {
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [float(c[0]), float(c[1])]},
            "properties": {"zone": j},
        }
        for j, c in enumerate(za.centroids)
    ]
    obj = {"type": "FeatureCollection", "features": features}
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")
