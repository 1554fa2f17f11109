"""Geospatial inputs: road graph, facilities, region boundaries, connectivity audit.

All loaded objects are immutable after construction and safe to share across
threads. Distances between coordinates use the haversine formula on WGS84;
graph travel costs always come from edge lengths, never from geometry.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from dispatchopt.errors import GraphParseError, InputError

EARTH_RADIUS_M = 6_371_000.0

# |cross product| below this (in squared degrees) counts a point as lying on a
# ring edge; boundary points are inside by contract.
ON_EDGE_EPS = 1e-12


class Category(IntEnum):
    """Incident/facility categories; integer codes are part of the file formats."""

    HEALTHCARE = 0
    FIRE_DISASTER = 1
    SECURITY = 2
    TRANSPORT = 3

    @classmethod
    def parse(cls, token: object) -> "Category":
        """Accept an integer code 0-3 or a case-insensitive name."""
        if isinstance(token, bool):
            raise InputError(f"not a category: {token!r}")
        if isinstance(token, int):
            try:
                return cls(token)
            except ValueError:
                raise InputError(f"category code out of range 0-3: {token}") from None
        text = str(token).strip().lower().replace("-", "_").replace(" ", "_")
        if text.isdigit():
            return cls.parse(int(text))
        aliases = {
            "healthcare": cls.HEALTHCARE,
            "health": cls.HEALTHCARE,
            "fire_disaster": cls.FIRE_DISASTER,
            "fire": cls.FIRE_DISASTER,
            "security": cls.SECURITY,
            "transport": cls.TRANSPORT,
        }
        if text in aliases:
            return aliases[text]
        raise InputError(f"unknown category token: {token!r}")


@dataclass(frozen=True)
class GeoPoint:
    """WGS84 coordinate; lon in [-180, 180], lat in [-90, 90]."""

    lon: float
    lat: float

    def __post_init__(self):
        if not (-180.0 <= self.lon <= 180.0) or not (-90.0 <= self.lat <= 90.0):
            raise InputError(f"coordinate out of WGS84 range: lon={self.lon}, lat={self.lat}")


class Edge(NamedTuple):
    u: str
    v: str
    length_m: float
    oneway: bool


class CsrAdjacency(NamedTuple):
    """Compressed adjacency: arcs of node i live in [indptr[i], indptr[i+1])."""

    indptr: np.ndarray  # int64, len n+1
    indices: np.ndarray  # int64 head node per arc
    weights_m: np.ndarray  # float64 arc length in meters


def haversine_m(lon1: float, lat1: float, lon2: float, lat2: float) -> float:
    """Great-circle distance in meters."""
    phi1 = math.radians(lat1)
    phi2 = math.radians(lat2)
    dphi = phi2 - phi1
    dlmb = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


def haversine_to_many_m(coords: np.ndarray, lon: float, lat: float) -> np.ndarray:
    """Vectorized haversine from one point to an (n, 2) lon/lat array."""
    phi = np.radians(coords[:, 1])
    phi0 = math.radians(lat)
    dphi = phi - phi0
    dlmb = np.radians(coords[:, 0] - lon)
    a = np.sin(dphi / 2.0) ** 2 + math.cos(phi0) * np.cos(phi) * np.sin(dlmb / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(a)))


@dataclass(frozen=True, eq=False)
class RoadGraph:
    """Weighted geospatial graph with precomputed forward/reverse adjacency.

    `node_ids` is sorted; `coords[i]` is the lon/lat of `node_ids[i]`. Arc
    weights are meters; time conversion happens in the atlas layer.
    """

    nodes: dict[str, GeoPoint]
    edges: tuple[Edge, ...]
    node_ids: tuple[str, ...]
    node_index: dict[str, int]
    coords: np.ndarray
    fwd: CsrAdjacency
    rev: CsrAdjacency

    @classmethod
    def from_parts(cls, nodes: dict[str, GeoPoint], edges: Iterable[Edge]) -> "RoadGraph":
        edges = tuple(edges)
        for e in edges:
            if e.u not in nodes or e.v not in nodes:
                raise InputError(f"edge {e.u}->{e.v} references a node not in the graph")
            if not (e.length_m > 0.0):
                raise InputError(f"edge {e.u}->{e.v} has non-positive length {e.length_m}")
        node_ids = tuple(sorted(nodes))
        index = {nid: i for i, nid in enumerate(node_ids)}
        coords = np.array([[nodes[nid].lon, nodes[nid].lat] for nid in node_ids], dtype=np.float64)
        coords = coords.reshape(len(node_ids), 2)
        arcs: dict[tuple[int, int], float] = {}
        for e in edges:
            ui, vi = index[e.u], index[e.v]
            pairs = [(ui, vi)] if e.oneway else [(ui, vi), (vi, ui)]
            for key in pairs:
                prev = arcs.get(key)
                if prev is None or e.length_m < prev:
                    arcs[key] = e.length_m
        fwd = _build_csr(len(node_ids), arcs, reverse=False)
        rev = _build_csr(len(node_ids), arcs, reverse=True)
        return cls(dict(nodes), edges, node_ids, index, coords, fwd, rev)

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    def require_index(self, node_id: str) -> int:
        try:
            return self.node_index[node_id]
        except KeyError:
            raise InputError(f"unknown node id: {node_id!r}") from None


def _build_csr(n: int, arcs: dict[tuple[int, int], float], reverse: bool) -> CsrAdjacency:
    items = sorted(((v, u) if reverse else (u, v), w) for (u, v), w in arcs.items())
    indptr = np.zeros(n + 1, dtype=np.int64)
    indices = np.empty(len(items), dtype=np.int64)
    weights = np.empty(len(items), dtype=np.float64)
    for pos, ((tail, head), w) in enumerate(items):
        indptr[tail + 1] += 1
        indices[pos] = head
        weights[pos] = w
    np.cumsum(indptr, out=indptr)
    return CsrAdjacency(indptr, indices, weights)


@dataclass(frozen=True)
class Facility:
    id: str
    category: Category
    location: GeoPoint
    node: str


@dataclass(frozen=True, eq=False)
class RegionBoundary:
    """Closed polygon (outer ring plus optional holes), orientation-normalized."""

    region_id: str
    outer_ring: tuple[GeoPoint, ...]
    holes: tuple[tuple[GeoPoint, ...], ...] = ()

    @classmethod
    def build(
        cls,
        region_id: str,
        outer: Sequence[GeoPoint],
        holes: Sequence[Sequence[GeoPoint]] = (),
    ) -> "RegionBoundary":
        outer_ring = _normalize_ring(outer, clockwise=False, region_id=region_id)
        norm_holes = tuple(_normalize_ring(h, clockwise=True, region_id=region_id) for h in holes)
        return cls(region_id, outer_ring, norm_holes)

    def bbox(self) -> tuple[float, float, float, float]:
        lons = [p.lon for p in self.outer_ring]
        lats = [p.lat for p in self.outer_ring]
        return min(lons), min(lats), max(lons), max(lats)


def _normalize_ring(ring: Sequence[GeoPoint], clockwise: bool, region_id: str) -> tuple[GeoPoint, ...]:
    pts = tuple(ring)
    if len(pts) < 4:
        raise InputError(f"region {region_id!r}: degenerate ring with {len(pts)} points (need >= 4)")
    if pts[0] != pts[-1]:
        raise InputError(f"region {region_id!r}: ring is not closed (first point != last point)")
    area2 = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        area2 += a.lon * b.lat - b.lon * a.lat
    if area2 == 0.0:
        raise InputError(f"region {region_id!r}: ring has zero area")
    counter_clockwise = area2 > 0.0
    if counter_clockwise == clockwise:
        pts = tuple(reversed(pts))
    return pts


@dataclass(frozen=True)
class ConnectivityReport:
    component_count: int
    component_sizes: tuple[int, ...]  # sorted descending
    orphaned_facility_ids: tuple[str, ...]


# ---------------------------------------------------------------------------
# Loading


def load_road_graph(path: str | Path) -> RoadGraph:
    """Parse the line-oriented graph format.

    Node lines: `N <id> <lon> <lat>`; edge lines: `E <u> <v> <length_m> <oneway:0|1>`;
    `#` starts a comment. Duplicate edges keep the shorter length.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"road graph file not found: {path}")
    nodes: dict[str, GeoPoint] = {}
    raw_edges: list[tuple[int, str, str, float, bool]] = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            kind = tokens[0]
            if kind == "N":
                if len(tokens) != 4:
                    raise GraphParseError(path, line_no, f"node line needs 4 fields, got {len(tokens)}")
                nid = tokens[1]
                if nid in nodes:
                    raise GraphParseError(path, line_no, f"duplicate node id {nid!r}")
                try:
                    lon, lat = float(tokens[2]), float(tokens[3])
                except ValueError:
                    raise GraphParseError(path, line_no, "node coordinates are not numbers") from None
                try:
                    nodes[nid] = GeoPoint(lon, lat)
                except InputError as exc:
                    raise GraphParseError(path, line_no, str(exc)) from None
            elif kind == "E":
                if len(tokens) != 5:
                    raise GraphParseError(path, line_no, f"edge line needs 5 fields, got {len(tokens)}")
                try:
                    length = float(tokens[3])
                except ValueError:
                    raise GraphParseError(path, line_no, "edge length is not a number") from None
                if not (length > 0.0):
                    raise GraphParseError(path, line_no, f"non-positive edge length {length}")
                if tokens[4] not in ("0", "1"):
                    raise GraphParseError(path, line_no, f"oneway flag must be 0 or 1, got {tokens[4]!r}")
                raw_edges.append((line_no, tokens[1], tokens[2], length, tokens[4] == "1"))
            else:
                raise GraphParseError(path, line_no, f"unknown record type {kind!r}")
    for line_no, u, v, _, _ in raw_edges:
        if u not in nodes:
            raise GraphParseError(path, line_no, f"edge references unknown node {u!r}")
        if v not in nodes:
            raise GraphParseError(path, line_no, f"edge references unknown node {v!r}")
    # Deduplicate on the canonical edge key, keeping the shorter length.
    dedup: dict[tuple[str, str, bool], float] = {}
    for _, u, v, length, oneway in raw_edges:
        key = (u, v, True) if oneway else (min(u, v), max(u, v), False)
        prev = dedup.get(key)
        if prev is None or length < prev:
            dedup[key] = length
    edges = tuple(Edge(u, v, length, oneway) for (u, v, oneway), length in sorted(dedup.items()))
    return RoadGraph.from_parts(nodes, edges)


def _load_geojson(path: str | Path, what: str) -> dict:
    path = Path(path)
    if not path.exists():
        raise InputError(f"{what} file not found: {path}")
    try:
        with path.open("r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{what} file {path} is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise InputError(f"{what} file {path}: expected a JSON object at top level")
    return obj


def load_facilities(path: str | Path, graph: RoadGraph) -> list[Facility]:
    """Load a GeoJSON FeatureCollection of Points and snap each to a graph node."""
    obj = _load_geojson(path, "facilities")
    if obj.get("type") != "FeatureCollection":
        raise InputError(f"facilities file {path}: expected a FeatureCollection")
    facilities: list[Facility] = []
    seen: set[str] = set()
    for i, feat in enumerate(obj.get("features", [])):
        geom = feat.get("geometry") or {}
        if geom.get("type") != "Point":
            raise InputError(f"facilities file {path}: feature {i} is not a Point")
        lon, lat = geom.get("coordinates", [None, None])[:2]
        props = feat.get("properties") or {}
        if "id" not in props or "category" not in props:
            raise InputError(f"facilities file {path}: feature {i} missing 'id' or 'category'")
        fid = str(props["id"])
        if fid in seen:
            raise InputError(f"facilities file {path}: duplicate facility id {fid!r}")
        seen.add(fid)
        category = Category.parse(props["category"])
        location = GeoPoint(float(lon), float(lat))
        node = snap_to_node(location, graph)
        facilities.append(Facility(fid, category, location, node))
    return facilities


def _ring_from_coords(coords: Sequence[Sequence[float]]) -> list[GeoPoint]:
    return [GeoPoint(float(c[0]), float(c[1])) for c in coords]


def load_boundary(path: str | Path, region_id: str = "region") -> RegionBoundary:
    """Load a GeoJSON Polygon (bare geometry or a single Feature)."""
    obj = _load_geojson(path, "boundary")
    geom = obj.get("geometry") if obj.get("type") == "Feature" else obj
    if not isinstance(geom, dict) or geom.get("type") != "Polygon":
        raise InputError(f"boundary file {path}: expected a GeoJSON Polygon")
    rings = geom.get("coordinates") or []
    if not rings:
        raise InputError(f"boundary file {path}: polygon has no rings")
    props = obj.get("properties") or {}
    rid = str(props.get("region_id", region_id))
    outer = _ring_from_coords(rings[0])
    holes = [_ring_from_coords(r) for r in rings[1:]]
    return RegionBoundary.build(rid, outer, holes)


def load_regions(path: str | Path) -> list[RegionBoundary]:
    """Load a FeatureCollection of Polygons carrying a `region_id` property."""
    obj = _load_geojson(path, "regions")
    if obj.get("type") != "FeatureCollection":
        raise InputError(f"regions file {path}: expected a FeatureCollection")
    regions: list[RegionBoundary] = []
    for i, feat in enumerate(obj.get("features", [])):
        geom = feat.get("geometry") or {}
        if geom.get("type") != "Polygon":
            raise InputError(f"regions file {path}: feature {i} is not a Polygon")
        props = feat.get("properties") or {}
        if "region_id" not in props:
            raise InputError(f"regions file {path}: feature {i} missing 'region_id'")
        rings = geom["coordinates"]
        outer = _ring_from_coords(rings[0])
        holes = [_ring_from_coords(r) for r in rings[1:]]
        regions.append(RegionBoundary.build(str(props["region_id"]), outer, holes))
    if not regions:
        raise InputError(f"regions file {path}: no regions found")
    return regions


# ---------------------------------------------------------------------------
# Spatial operations


def snap_to_node(p: GeoPoint, g: RoadGraph) -> str:
    """Nearest graph node by haversine distance; ties go to the smallest node id."""
    if g.n_nodes == 0:
        raise InputError("cannot snap to an empty graph")
    dists = haversine_to_many_m(g.coords, p.lon, p.lat)
    # node_ids is sorted, so argmin's first-hit rule is the id tie-break.
    return g.node_ids[int(np.argmin(dists))]


def _on_ring(p: GeoPoint, ring: tuple[GeoPoint, ...]) -> bool:
    for a, b in zip(ring[:-1], ring[1:]):
        cross = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon)
        if abs(cross) > ON_EDGE_EPS:
            continue
        if (
            min(a.lon, b.lon) - ON_EDGE_EPS <= p.lon <= max(a.lon, b.lon) + ON_EDGE_EPS
            and min(a.lat, b.lat) - ON_EDGE_EPS <= p.lat <= max(a.lat, b.lat) + ON_EDGE_EPS
        ):
            return True
    return False


def _ray_crossings(p: GeoPoint, ring: tuple[GeoPoint, ...]) -> int:
    count = 0
    for a, b in zip(ring[:-1], ring[1:]):
        if (a.lat > p.lat) != (b.lat > p.lat):
            x_int = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat)
            if p.lon < x_int:
                count += 1
    return count


def point_in_region(p: GeoPoint, b: RegionBoundary) -> bool:
    """Even-odd ray-casting containment; points on any ring edge count as inside."""
    rings = (b.outer_ring, *b.holes)
    for ring in rings:
        if len(ring) < 4:
            raise InputError(f"region {b.region_id!r}: degenerate ring with {len(ring)} points")
    for ring in rings:
        if _on_ring(p, ring):
            return True
    crossings = sum(_ray_crossings(p, ring) for ring in rings)
    return crossings % 2 == 1


def audit_connectivity(
    g: RoadGraph,
    facilities: Sequence[Facility],
    incident_nodes: Iterable[str] | None = None,
) -> ConnectivityReport:
    """Component census on the undirected view, plus orphaned facilities.

    A facility is orphaned when its component holds no other facility-bearing
    or incident-bearing node. Without an explicit `incident_nodes` list, every
    other node counts as a potential incident location.
    """
    n = g.n_nodes
    comp_of = np.full(n, -1, dtype=np.int64)
    # Undirected adjacency from the union of forward and reverse arcs.
    sizes: list[int] = []
    comp = 0
    for start in range(n):
        if comp_of[start] >= 0:
            continue
        queue = deque([start])
        comp_of[start] = comp
        size = 0
        while queue:
            u = queue.popleft()
            size += 1
            for csr in (g.fwd, g.rev):
                for e in range(csr.indptr[u], csr.indptr[u + 1]):
                    v = int(csr.indices[e])
                    if comp_of[v] < 0:
                        comp_of[v] = comp
                        queue.append(v)
        sizes.append(size)
        comp += 1
    fac_nodes_by_comp: dict[int, set[str]] = {}
    for f in facilities:
        c = int(comp_of[g.require_index(f.node)])
        fac_nodes_by_comp.setdefault(c, set()).add(f.node)
    incident_comp_nodes: dict[int, set[str]] | None = None
    if incident_nodes is not None:
        incident_comp_nodes = {}
        for nid in incident_nodes:
            c = int(comp_of[g.require_index(nid)])
            incident_comp_nodes.setdefault(c, set()).add(nid)
    orphaned: list[str] = []
    for f in facilities:
        c = int(comp_of[g.require_index(f.node)])
        has_other_facility = any(nid != f.node for nid in fac_nodes_by_comp.get(c, ()))
        if incident_comp_nodes is None:
            has_demand = sizes[c] > 1
        else:
            has_demand = any(nid != f.node for nid in incident_comp_nodes.get(c, ()))
        if not (has_other_facility or has_demand):
            orphaned.append(f.id)
    return ConnectivityReport(
        component_count=comp,
        component_sizes=tuple(sorted(sizes, reverse=True)),
        orphaned_facility_ids=tuple(sorted(orphaned)),
    )
