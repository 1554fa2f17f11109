"""Regenerate the committed golden atlas fixture under tests/data/golden/.

Travel-time values come from the independent single-pair Dijkstra oracle in
tests/oracles.py, not from the package's atlas builder, so the byte-for-byte
CLI comparison in tests/test_cli.py is a genuine cross-check. Edge lengths are
multiples of 25 m and the speed is 48 km/h (800 m/min), making every edge time
an exact dyadic (k/32 min): path sums are exact and accumulation order cannot
perturb the bytes.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT))

from tests.oracles import adjacency_minutes, single_pair_time  # noqa: E402

from dispatchopt.geo import load_facilities, load_road_graph  # noqa: E402

GOLDEN_DIR = ROOT / "tests" / "data" / "golden"
SPEED_KMH = 48.0

GRAPH = """\
# golden fixture: two components, one asymmetric one-way pair, dyadic lengths
N a 6.9 4.7
N b 6.905 4.7
N c 6.91 4.7
N d 6.905 4.705
N e 6.91 4.705
N x 6.95 4.75
N y 6.955 4.75
E a b 500 0
E b c 750 0
E b d 425 0
E d e 650 0
E c e 300 1
E e c 1275 1
E x y 200 0
"""

FACILITIES = {
    "type": "FeatureCollection",
    "features": [
        {
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [6.91, 4.7]},
            "properties": {"id": "gold-H", "category": 0},
        },
        {
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [6.905, 4.705]},
            "properties": {"id": "gold-F", "category": 1},
        },
        {
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [6.955, 4.75]},
            "properties": {"id": "gold-S", "category": 2},
        },
    ],
}

INCIDENTS = {
    "type": "FeatureCollection",
    "features": [
        {
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [6.9, 4.7]},
            "properties": {"id": "gold-i0", "category": 0, "split": "training"},
        },
        {
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [6.91, 4.705]},
            "properties": {"id": "gold-i1", "category": 1, "split": "training"},
        },
        {
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [6.95, 4.75]},
            "properties": {"id": "gold-i2", "category": 2, "split": "training"},
        },
    ],
}

BOUNDARY = {
    "type": "Feature",
    "geometry": {
        "type": "Polygon",
        "coordinates": [[[6.89, 4.69], [6.97, 4.69], [6.97, 4.76], [6.89, 4.76], [6.89, 4.69]]],
    },
    "properties": {"region_id": "golden"},
}

CONFIG = """\
graph = graph.txt
facilities = facilities.geojson
boundary = boundary.geojson
seed = 1
speed_kmh = 48
"""


def main() -> None:
    GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
    (GOLDEN_DIR / "graph.txt").write_text(GRAPH, encoding="utf-8")
    (GOLDEN_DIR / "facilities.geojson").write_text(json.dumps(FACILITIES, indent=2) + "\n", encoding="utf-8")
    (GOLDEN_DIR / "incidents.geojson").write_text(json.dumps(INCIDENTS, indent=2) + "\n", encoding="utf-8")
    (GOLDEN_DIR / "boundary.geojson").write_text(json.dumps(BOUNDARY, indent=2) + "\n", encoding="utf-8")
    (GOLDEN_DIR / "run.cfg").write_text(CONFIG, encoding="utf-8")

    graph = load_road_graph(GOLDEN_DIR / "graph.txt")
    facilities = load_facilities(GOLDEN_DIR / "facilities.geojson", graph)
    incident_nodes = ["a", "e", "x"]
    adj = adjacency_minutes(graph, SPEED_KMH)
    lines = ["incident_node," + ",".join(f.id for f in facilities)]
    for src in incident_nodes:
        cells = [src]
        for f in facilities:
            t = single_pair_time(adj, src, f.node)
            cells.append("unreachable" if t == float("inf") else repr(t))
        lines.append(",".join(cells))
    (GOLDEN_DIR / "atlas.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"golden fixture written to {GOLDEN_DIR}")


if __name__ == "__main__":
    main()
