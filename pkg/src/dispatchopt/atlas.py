"""Travel-time atlas: precomputed shortest-path minutes from incident nodes to facilities.

Built with one Dijkstra per facility over the reversed graph (M facilities is
far smaller than N incident nodes), which equals the incident-to-facility cost
on the forward graph. One-way edges are honored as directed arcs.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from dispatchopt import _kernels
from dispatchopt.errors import InputError
from dispatchopt.geo import Category, Facility, GeoPoint, RoadGraph

# Explicit unreachable sentinel; serialized as the literal string below.
UNREACHABLE = math.inf
UNREACHABLE_TOKEN = "unreachable"

DEFAULT_SPEED_KMH = 40.0

ATLAS_CSV_NAME = "atlas.csv"
ATLAS_META_NAME = "atlas.meta.json"


def is_unreachable(minutes: float) -> bool:
    return math.isinf(minutes)


def edge_travel_time(length_m: float, speed_kmh: float) -> float:
    """Minutes to traverse one edge at a constant speed; exact arithmetic, no rounding."""
    if not (length_m > 0.0):
        raise InputError(f"edge length must be positive, got {length_m}")
    if not (speed_kmh > 0.0):
        raise InputError(f"speed must be positive, got {speed_kmh}")
    return length_m / (speed_kmh * 1000.0 / 60.0)


@dataclass(frozen=True)
class BestChoice:
    facility_index: int
    t_star: float


@dataclass(frozen=True, eq=False)
class TravelTimeAtlas:
    """incident-node x facility matrix of minutes; immutable once built."""

    incident_nodes: tuple[str, ...]
    facilities: tuple[Facility, ...]
    times: np.ndarray  # (n_incident_nodes, n_facilities) float64, inf = unreachable
    avg_speed_kmh: float

    def __post_init__(self):
        n, m = self.times.shape
        if n != len(self.incident_nodes) or m != len(self.facilities):
            raise InputError("atlas matrix shape does not match its index lists")
        finite = self.times[np.isfinite(self.times)]
        if finite.size and finite.min() < 0.0:
            raise InputError("atlas contains a negative travel time")
        object.__setattr__(
            self, "_row_index", {nid: i for i, nid in enumerate(self.incident_nodes)}
        )
        object.__setattr__(
            self,
            "_category_columns",
            {
                cat: np.array(
                    [j for j, f in enumerate(self.facilities) if f.category == cat],
                    dtype=np.int64,
                )
                for cat in Category
            },
        )

    def row_index(self, node: str) -> int:
        try:
            return self._row_index[node]
        except KeyError:
            raise InputError(f"node {node!r} is not an atlas incident node") from None

    def row_for_node(self, node: str) -> np.ndarray:
        return self.times[self.row_index(node)]

    def category_columns(self, category: Category) -> np.ndarray:
        return self._category_columns[category]


def best_feasible(atlas: TravelTimeAtlas, incident_node_index: int, category: Category) -> BestChoice | None:
    """Row minimum over reachable facilities of the category; None = unsolvable.

    Ties break toward the lowest facility index.
    """
    row = atlas.times[incident_node_index]
    cols = atlas.category_columns(category)
    best: BestChoice | None = None
    for j in cols:
        t = row[j]
        if is_unreachable(t):
            continue
        if best is None or t < best.t_star:
            best = BestChoice(int(j), float(t))
    return best


def minute_weights(csr_weights_m: np.ndarray, speed_kmh: float) -> np.ndarray:
    """Per-edge travel times; same arithmetic as edge_travel_time, vectorized."""
    if not (speed_kmh > 0.0):
        raise InputError(f"speed must be positive, got {speed_kmh}")
    return csr_weights_m / (speed_kmh * 1000.0 / 60.0)


def times_to_node(g: RoadGraph, node: str, speed_kmh: float) -> np.ndarray:
    """Minutes from every graph node to `node` (one Dijkstra on the reversed graph)."""
    target = g.require_index(node)
    w = minute_weights(g.rev.weights_m, speed_kmh)
    return _kernels.dijkstra_csr(g.rev.indptr, g.rev.indices, w, target, g.n_nodes)


def times_from_node(g: RoadGraph, node: str, speed_kmh: float) -> np.ndarray:
    """Minutes from `node` to every graph node (forward Dijkstra)."""
    source = g.require_index(node)
    w = minute_weights(g.fwd.weights_m, speed_kmh)
    return _kernels.dijkstra_csr(g.fwd.indptr, g.fwd.indices, w, source, g.n_nodes)


def build_atlas(
    g: RoadGraph,
    incident_nodes: Sequence[str],
    facilities: Sequence[Facility],
    speed_kmh: float = DEFAULT_SPEED_KMH,
    threads: int = 1,
) -> TravelTimeAtlas:
    """Run one reverse-graph Dijkstra per facility and assemble the matrix.

    Facility runs are independent; results are joined by facility index, so the
    output is identical for any thread count.
    """
    incident_nodes = tuple(incident_nodes)
    facilities = tuple(facilities)
    row_idx = np.array([g.require_index(n) for n in incident_nodes], dtype=np.int64)
    for f in facilities:
        g.require_index(f.node)
    w = minute_weights(g.rev.weights_m, speed_kmh)
    times = np.full((len(incident_nodes), len(facilities)), UNREACHABLE, dtype=np.float64)

    def column(j: int) -> np.ndarray:
        target = g.node_index[facilities[j].node]
        dist = _kernels.dijkstra_csr(g.rev.indptr, g.rev.indices, w, target, g.n_nodes)
        return dist[row_idx]

    if threads > 1 and len(facilities) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for j, col in enumerate(pool.map(column, range(len(facilities)))):
                times[:, j] = col
    else:
        for j in range(len(facilities)):
            times[:, j] = column(j)
    return TravelTimeAtlas(incident_nodes, facilities, times, speed_kmh)


# ---------------------------------------------------------------------------
# Serialization

def _format_minutes(t: float) -> str:
    return UNREACHABLE_TOKEN if is_unreachable(t) else repr(float(t))


def save_atlas(
    atlas: TravelTimeAtlas,
    csv_path: str | Path,
    meta_path: str | Path,
    graph_sha256: str = "",
) -> None:
    """Write the CSV matrix plus the metadata sidecar (speed, counts, graph hash)."""
    csv_path, meta_path = Path(csv_path), Path(meta_path)
    header = "incident_node," + ",".join(f.id for f in atlas.facilities)
    lines = [header]
    for i, node in enumerate(atlas.incident_nodes):
        row = atlas.times[i]
        lines.append(node + "," + ",".join(_format_minutes(float(t)) for t in row))
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    meta = {
        "format": "dispatchopt.atlas-meta",
        "version": 1,
        "avg_speed_kmh": atlas.avg_speed_kmh,
        "n_incident_nodes": len(atlas.incident_nodes),
        "n_facilities": len(atlas.facilities),
        "graph_sha256": graph_sha256,
        "facilities": [
            {
                "id": f.id,
                "category": int(f.category),
                "node": f.node,
                "lon": f.location.lon,
                "lat": f.location.lat,
            }
            for f in atlas.facilities
        ],
    }
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_atlas(csv_path: str | Path, meta_path: str | Path) -> TravelTimeAtlas:
    csv_path, meta_path = Path(csv_path), Path(meta_path)
    if not csv_path.exists():
        raise InputError(f"atlas file not found: {csv_path}")
    if not meta_path.exists():
        raise InputError(f"atlas metadata file not found: {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    facilities = tuple(
        Facility(
            id=str(f["id"]),
            category=Category(int(f["category"])),
            location=GeoPoint(float(f["lon"]), float(f["lat"])),
            node=str(f["node"]),
        )
        for f in meta["facilities"]
    )
    text = csv_path.read_text(encoding="utf-8").strip().splitlines()
    if not text:
        raise InputError(f"atlas file {csv_path} is empty")
    header = text[0].split(",")
    if header[0] != "incident_node" or tuple(header[1:]) != tuple(f.id for f in facilities):
        raise InputError(f"atlas file {csv_path}: header does not match metadata facilities")
    nodes: list[str] = []
    rows: list[list[float]] = []
    for line_no, line in enumerate(text[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(facilities) + 1:
            raise InputError(f"atlas file {csv_path}:{line_no}: wrong column count")
        nodes.append(parts[0])
        row: list[float] = []
        for tok in parts[1:]:
            if tok == UNREACHABLE_TOKEN:
                row.append(UNREACHABLE)
            else:
                try:
                    row.append(float(tok))
                except ValueError:
                    raise InputError(
                        f"atlas file {csv_path}:{line_no}: bad travel time {tok!r}"
                    ) from None
        rows.append(row)
    times = np.asarray(rows, dtype=np.float64).reshape(len(nodes), len(facilities))
    return TravelTimeAtlas(tuple(nodes), facilities, times, float(meta["avg_speed_kmh"]))
