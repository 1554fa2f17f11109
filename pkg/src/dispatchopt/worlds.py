"""Synthetic desk-scale worlds: grid road networks, river barriers, islands.

These builders exist for tests, demos, and acceptance fixtures; real-world
data (OpenStreetMap sourcing etc.) is out of scope. The barrier world is a
20x20 grid split by a river crossable at exactly two bridge rows, plus a
disconnected 4x4 island — a construction where geographic proximity and
network travel time disagree often, so the nearest-neighbor heuristic
measurably underperforms the atlas optimum.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from dispatchopt.geo import (
    Category,
    Edge,
    Facility,
    GeoPoint,
    RegionBoundary,
    RoadGraph,
)
from dispatchopt.scenario import PopulationCenter

DEFAULT_ORIGIN = (6.90, 4.70)  # lon, lat
DEFAULT_SPACING_DEG = 0.005
DEFAULT_EDGE_LEN_M = 500.0


@dataclass(frozen=True, eq=False)
class SyntheticWorld:
    graph: RoadGraph
    facilities: tuple[Facility, ...]
    boundary: RegionBoundary
    regions: tuple[RegionBoundary, ...]
    centers: tuple[PopulationCenter, ...]


def _grid_parts(
    k: int,
    origin: tuple[float, float],
    spacing: float,
    edge_len: float,
    river_after_col: int | None = None,
    bridge_rows: Sequence[int] = (),
    id_prefix: str = "n",
    col_offset: int = 0,
    row_offset: int = 0,
) -> tuple[dict[str, GeoPoint], list[Edge]]:
    lon0, lat0 = origin
    nodes: dict[str, GeoPoint] = {}

    def nid(ix: int, iy: int) -> str:
        return f"{id_prefix}{ix}_{iy}"

    for ix in range(k):
        for iy in range(k):
            nodes[nid(ix, iy)] = GeoPoint(
                lon0 + (ix + col_offset) * spacing, lat0 + (iy + row_offset) * spacing
            )
    edges: list[Edge] = []
    bridge_set = set(bridge_rows)
    for ix in range(k):
        for iy in range(k):
            if ix + 1 < k:
                crosses_river = river_after_col is not None and ix == river_after_col
                if not crosses_river or iy in bridge_set:
                    edges.append(Edge(nid(ix, iy), nid(ix + 1, iy), edge_len, False))
            if iy + 1 < k:
                edges.append(Edge(nid(ix, iy), nid(ix, iy + 1), edge_len, False))
    return nodes, edges


def _rect(region_id: str, lon_lo: float, lat_lo: float, lon_hi: float, lat_hi: float) -> RegionBoundary:
    ring = [
        GeoPoint(lon_lo, lat_lo),
        GeoPoint(lon_hi, lat_lo),
        GeoPoint(lon_hi, lat_hi),
        GeoPoint(lon_lo, lat_hi),
        GeoPoint(lon_lo, lat_lo),
    ]
    return RegionBoundary.build(region_id, ring)


def grid_world(
    k: int = 20,
    origin: tuple[float, float] = DEFAULT_ORIGIN,
    spacing: float = DEFAULT_SPACING_DEG,
    edge_len: float = DEFAULT_EDGE_LEN_M,
) -> SyntheticWorld:
    """Plain k x k 4-neighbor grid: 2*k*(k-1) undirected edges, one component."""
    nodes, edges = _grid_parts(k, origin, spacing, edge_len)
    graph = RoadGraph.from_parts(nodes, edges)
    lon0, lat0 = origin
    half = spacing / 2.0
    boundary = _rect(
        "grid", lon0 - half, lat0 - half, lon0 + (k - 1) * spacing + half, lat0 + (k - 1) * spacing + half
    )
    return SyntheticWorld(graph, (), boundary, (boundary,), ())


def split_world(k: int = 20) -> SyntheticWorld:
    """Grid cut in half by an uncrossable river; two equal components."""
    nodes, edges = _grid_parts(
        k, DEFAULT_ORIGIN, DEFAULT_SPACING_DEG, DEFAULT_EDGE_LEN_M, river_after_col=k // 2 - 1
    )
    graph = RoadGraph.from_parts(nodes, edges)
    lon0, lat0 = DEFAULT_ORIGIN
    half = DEFAULT_SPACING_DEG / 2.0
    boundary = _rect(
        "split",
        lon0 - half,
        lat0 - half,
        lon0 + (k - 1) * DEFAULT_SPACING_DEG + half,
        lat0 + (k - 1) * DEFAULT_SPACING_DEG + half,
    )
    return SyntheticWorld(graph, (), boundary, (boundary,), ())


# Barrier-world facility layout: per category two west-side facilities far from
# the river and one east-side facility close to it, so east facilities are
# often geographically nearest to west-bank incidents while the bridge detour
# makes a west facility time-optimal.
_BARRIER_FACILITIES: dict[Category, tuple[tuple[int, int], ...]] = {
    Category.HEALTHCARE: ((2, 5), (2, 14), (11, 9)),
    Category.FIRE_DISASTER: ((3, 5), (3, 14), (11, 10)),
    Category.SECURITY: ((2, 8), (2, 11), (12, 8)),
    Category.TRANSPORT: ((3, 8), (3, 11), (12, 11)),
}

_CATEGORY_TAG = {
    Category.HEALTHCARE: "H",
    Category.FIRE_DISASTER: "F",
    Category.SECURITY: "S",
    Category.TRANSPORT: "T",
}


def barrier_world(
    k: int = 20,
    origin: tuple[float, float] = DEFAULT_ORIGIN,
    spacing: float = DEFAULT_SPACING_DEG,
    edge_len: float = DEFAULT_EDGE_LEN_M,
    bridge_rows: Sequence[int] = (3, 16),
    island_k: int = 4,
    island_col_offset: int = 24,
) -> SyntheticWorld:
    """River-split grid with two bridges, 12 facilities, and a facility-less island.

    Components: the bridged main grid (k*k nodes) and the island
    (island_k**2 nodes), giving 2 components total. The island region has no
    facility of any category, so its probes are unsolvable until an
    intervention places one.
    """
    river_col = k // 2 - 1  # river between this column and the next
    nodes, edges = _grid_parts(
        k, origin, spacing, edge_len, river_after_col=river_col, bridge_rows=bridge_rows
    )
    island_nodes, island_edges = _grid_parts(
        island_k, origin, spacing, edge_len, id_prefix="i", col_offset=island_col_offset
    )
    nodes.update(island_nodes)
    edges.extend(island_edges)
    graph = RoadGraph.from_parts(nodes, edges)

    facilities: list[Facility] = []
    for cat in Category:
        for idx, (ix, iy) in enumerate(_BARRIER_FACILITIES[cat]):
            node = f"n{ix}_{iy}"
            facilities.append(
                Facility(
                    id=f"{_CATEGORY_TAG[cat]}{idx}",
                    category=cat,
                    location=graph.nodes[node],
                    node=node,
                )
            )

    lon0, lat0 = origin
    half = spacing / 2.0
    max_col = island_col_offset + island_k - 1
    boundary = _rect(
        "barrier",
        lon0 - half,
        lat0 - half,
        lon0 + max_col * spacing + half,
        lat0 + (k - 1) * spacing + half,
    )
    west = _rect(
        "west", lon0 - half, lat0 - half, lon0 + (river_col + 0.5) * spacing, lat0 + (k - 1) * spacing + half
    )
    east = _rect(
        "east",
        lon0 + (river_col + 0.5) * spacing,
        lat0 - half,
        lon0 + (k - 0.5) * spacing,
        lat0 + (k - 1) * spacing + half,
    )
    island = _rect(
        "island",
        lon0 + (island_col_offset - 0.5) * spacing,
        lat0 - half,
        lon0 + max_col * spacing + half,
        lat0 + (island_k - 0.5) * spacing,
    )
    centers = (
        PopulationCenter(GeoPoint(lon0 + 8 * spacing, lat0 + 9 * spacing), weight=3.0, sigma_deg=4 * spacing),
        PopulationCenter(GeoPoint(lon0 + 14 * spacing, lat0 + 7 * spacing), weight=2.0, sigma_deg=4 * spacing),
        PopulationCenter(GeoPoint(lon0 + 4 * spacing, lat0 + 12 * spacing), weight=1.5, sigma_deg=5 * spacing),
    )
    return SyntheticWorld(graph, tuple(facilities), boundary, (west, east, island), centers)


def line_world(n: int = 30, facility_nodes: dict[Category, Sequence[int]] | None = None) -> SyntheticWorld:
    """Straight east-west road at one latitude.

    On a line, haversine ordering and hop-count ordering always agree, so the
    nearest-neighbor heuristic matches the atlas optimum on every incident —
    the constructive positive control for the baseline.
    """
    lon0, lat0 = DEFAULT_ORIGIN
    spacing = DEFAULT_SPACING_DEG
    nodes = {f"n{i}_0": GeoPoint(lon0 + i * spacing, lat0) for i in range(n)}
    edges = [Edge(f"n{i}_0", f"n{i + 1}_0", DEFAULT_EDGE_LEN_M, False) for i in range(n - 1)]
    graph = RoadGraph.from_parts(nodes, edges)
    if facility_nodes is None:
        facility_nodes = {cat: (2 + int(cat), n - 3 - int(cat)) for cat in Category}
    facilities = []
    for cat, positions in facility_nodes.items():
        for idx, i in enumerate(positions):
            node = f"n{i}_0"
            facilities.append(
                Facility(f"{_CATEGORY_TAG[cat]}{idx}", cat, graph.nodes[node], node)
            )
    half = spacing / 2.0
    boundary = _rect("line", lon0 - half, lat0 - half, lon0 + (n - 1) * spacing + half, lat0 + half)
    return SyntheticWorld(graph, tuple(facilities), boundary, (boundary,), ())


# ---------------------------------------------------------------------------
# File writers (the CLI consumes worlds through these formats)


def write_graph_file(graph: RoadGraph, path: str | Path) -> Path:
    path = Path(path)
    lines = ["# synthetic road graph"]
    for nid in graph.node_ids:
        p = graph.nodes[nid]
        lines.append(f"N {nid} {p.lon!r} {p.lat!r}")
    for e in graph.edges:
        lines.append(f"E {e.u} {e.v} {e.length_m!r} {int(e.oneway)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_facilities_file(facilities: Sequence[Facility], path: str | Path) -> Path:
    path = Path(path)
    features = [
        {
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [f.location.lon, f.location.lat]},
            "properties": {"id": f.id, "category": int(f.category)},
        }
        for f in facilities
    ]
    path.write_text(
        json.dumps({"type": "FeatureCollection", "features": features}, indent=2) + "\n",
        encoding="utf-8",
    )
    return path


def _polygon_coords(b: RegionBoundary) -> list[list[list[float]]]:
    rings = [[[p.lon, p.lat] for p in b.outer_ring]]
    rings.extend([[p.lon, p.lat] for p in hole] for hole in b.holes)
    return rings


def write_boundary_file(boundary: RegionBoundary, path: str | Path) -> Path:
    path = Path(path)
    obj = {
        "type": "Feature",
        "geometry": {"type": "Polygon", "coordinates": _polygon_coords(boundary)},
        "properties": {"region_id": boundary.region_id},
    }
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")
    return path


def write_regions_file(regions: Sequence[RegionBoundary], path: str | Path) -> Path:
    path = Path(path)
    features = [
        {
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": _polygon_coords(r)},
            "properties": {"region_id": r.region_id},
        }
        for r in regions
    ]
    path.write_text(
        json.dumps({"type": "FeatureCollection", "features": features}, indent=2) + "\n",
        encoding="utf-8",
    )
    return path


def write_centers_file(centers: Sequence[PopulationCenter], path: str | Path) -> Path:
    path = Path(path)
    features = [
        {
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [c.center.lon, c.center.lat]},
            "properties": {"weight": c.weight, "sigma_deg": c.sigma_deg},
        }
        for c in centers
    ]
    path.write_text(
        json.dumps({"type": "FeatureCollection", "features": features}, indent=2) + "\n",
        encoding="utf-8",
    )
    return path


def write_world_files(world: SyntheticWorld, directory: str | Path) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "graph": write_graph_file(world.graph, directory / "graph.txt"),
        "facilities": write_facilities_file(world.facilities, directory / "facilities.geojson"),
        "boundary": write_boundary_file(world.boundary, directory / "boundary.geojson"),
        "regions": write_regions_file(world.regions, directory / "regions.geojson"),
        "centers": write_centers_file(world.centers, directory / "centers.geojson"),
    }
    return paths


def write_run_config(path: str | Path, values: dict[str, object]) -> Path:
    """Emit a flat key=value config file in a stable key order."""
    path = Path(path)
    lines = [f"{key} = {values[key]}" for key in values]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
