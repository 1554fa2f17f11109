"""Geo module: parsing, snapping, containment, connectivity audit."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dispatchopt import worlds
from dispatchopt.errors import GraphParseError, InputError
from dispatchopt.geo import (
    Category,
    Facility,
    GeoPoint,
    RegionBoundary,
    RoadGraph,
    audit_connectivity,
    load_road_graph,
    point_in_region,
    snap_to_node,
)
from tests.oracles import brute_force_nearest_node, winding_number_inside


def write_graph(tmp_path, text):
    path = tmp_path / "graph.txt"
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadRoadGraph:
    def test_minimal_two_node_graph(self, tmp_path):
        path = write_graph(tmp_path, "N a 6.0 4.0\nN b 6.001 4.0\nE a b 100 0\n")
        g = load_road_graph(path)
        assert g.n_nodes == 2
        assert len(g.edges) == 1
        assert g.edges[0].length_m == 100.0

    def test_dangling_endpoint_is_an_error(self, tmp_path):
        path = write_graph(tmp_path, "N a 6.0 4.0\nE a X 100 0\n")
        with pytest.raises(GraphParseError, match="unknown node 'X'"):
            load_road_graph(path)

    def test_grid_world_node_and_edge_counts(self):
        # a k x k 4-neighbor grid has k*k nodes and 2*k*(k-1) undirected edges
        k = 20
        world = worlds.grid_world(k)
        assert world.graph.n_nodes == k * k
        assert len(world.graph.edges) == 2 * k * (k - 1)

    def test_parse_error_carries_line_number(self, tmp_path):
        path = write_graph(tmp_path, "N a 6.0 4.0\nE a\n")
        with pytest.raises(GraphParseError, match=":2:"):
            load_road_graph(path)

    def test_non_positive_length_rejected(self, tmp_path):
        path = write_graph(tmp_path, "N a 6.0 4.0\nN b 6.1 4.0\nE a b 0 0\n")
        with pytest.raises(GraphParseError, match="non-positive"):
            load_road_graph(path)

    def test_duplicate_edges_keep_shorter_length(self, tmp_path):
        path = write_graph(
            tmp_path,
            "N a 6.0 4.0\nN b 6.1 4.0\nE a b 250 0\nE b a 100 0\nE a b 400 0\n",
        )
        g = load_road_graph(path)
        assert len(g.edges) == 1
        assert g.edges[0].length_m == 100.0

    def test_duplicate_node_id_rejected(self, tmp_path):
        path = write_graph(tmp_path, "N a 6.0 4.0\nN a 6.1 4.0\n")
        with pytest.raises(GraphParseError, match="duplicate node"):
            load_road_graph(path)

    def test_comments_and_blank_lines_ignored(self, tmp_path):
        path = write_graph(tmp_path, "# header\n\nN a 6.0 4.0  # trailing\nN b 6.1 4.0\nE a b 5 1\n")
        g = load_road_graph(path)
        assert g.n_nodes == 2
        assert g.edges[0].oneway

    def test_coordinate_out_of_range_rejected(self, tmp_path):
        path = write_graph(tmp_path, "N a 200.0 4.0\n")
        with pytest.raises(GraphParseError, match="WGS84"):
            load_road_graph(path)


class TestSnapToNode:
    def test_exact_node_coordinates(self):
        world = worlds.grid_world(5)
        g = world.graph
        nid = g.node_ids[7]
        assert snap_to_node(g.nodes[nid], g) == nid

    def test_equidistant_tie_breaks_to_smallest_id(self):
        nodes = {
            "A": GeoPoint(6.0, 4.0),
            "B": GeoPoint(6.2, 4.0),
        }
        g = RoadGraph.from_parts(nodes, [])
        assert snap_to_node(GeoPoint(6.1, 4.0), g) == "A"

    def test_matches_brute_force_scan_on_random_points(self):
        world = worlds.grid_world(7)
        rng = np.random.default_rng(5)
        for _ in range(50):
            lon = float(rng.uniform(6.85, 6.99))
            lat = float(rng.uniform(4.65, 4.82))
            assert snap_to_node(GeoPoint(lon, lat), world.graph) == brute_force_nearest_node(
                world.graph, lon, lat
            )

    def test_empty_graph_rejected(self):
        g = RoadGraph.from_parts({}, [])
        with pytest.raises(InputError, match="empty graph"):
            snap_to_node(GeoPoint(0.0, 0.0), g)

    @given(st.integers(min_value=0, max_value=24))
    def test_snap_is_idempotent_on_node_coordinates(self, idx):
        world = worlds.grid_world(5)
        nid = world.graph.node_ids[idx]
        assert snap_to_node(world.graph.nodes[nid], world.graph) == nid


def square(region_id="sq", lo=0.0, hi=1.0):
    ring = [
        GeoPoint(lo, lo),
        GeoPoint(hi, lo),
        GeoPoint(hi, hi),
        GeoPoint(lo, hi),
        GeoPoint(lo, lo),
    ]
    return RegionBoundary.build(region_id, ring)


def concave_polygon():
    # a "C" shape: concave notch cut from the right side
    pts = [
        (0.0, 0.0),
        (4.0, 0.0),
        (4.0, 1.0),
        (1.5, 1.0),
        (1.5, 3.0),
        (4.0, 3.0),
        (4.0, 4.0),
        (0.0, 4.0),
        (0.0, 0.0),
    ]
    return RegionBoundary.build("concave", [GeoPoint(x, y) for x, y in pts])


class TestPointInRegion:
    def test_square_centroid_inside(self):
        assert point_in_region(GeoPoint(0.5, 0.5), square())

    def test_point_outside_bounding_box(self):
        assert not point_in_region(GeoPoint(2.0, 0.5), square())

    def test_boundary_points_count_as_inside(self):
        b = square()
        assert point_in_region(GeoPoint(0.0, 0.5), b)  # on an edge
        assert point_in_region(GeoPoint(1.0, 1.0), b)  # on a vertex

    def test_hole_excludes_points(self):
        outer = [GeoPoint(x, y) for x, y in [(0, 0), (4, 0), (4, 4), (0, 4), (0, 0)]]
        hole = [GeoPoint(x, y) for x, y in [(1, 1), (3, 1), (3, 3), (1, 3), (1, 1)]]
        b = RegionBoundary.build("holed", outer, [hole])
        assert not point_in_region(GeoPoint(2.0, 2.0), b)
        assert point_in_region(GeoPoint(0.5, 0.5), b)
        assert point_in_region(GeoPoint(1.0, 2.0), b)  # on the hole ring

    def test_concave_polygon_matches_winding_number_oracle(self):
        b = concave_polygon()
        rng = np.random.default_rng(17)
        rings = (b.outer_ring, *b.holes)
        checked = 0
        for _ in range(1000):
            lon = float(rng.uniform(-0.5, 4.5))
            lat = float(rng.uniform(-0.5, 4.5))
            assert point_in_region(GeoPoint(lon, lat), b) == winding_number_inside(lon, lat, rings)
            checked += 1
        assert checked == 1000

    def test_degenerate_ring_rejected(self):
        with pytest.raises(InputError, match="degenerate|closed|area"):
            RegionBoundary.build("bad", [GeoPoint(0, 0), GeoPoint(1, 0), GeoPoint(0, 0)])

    def test_unclosed_ring_rejected(self):
        with pytest.raises(InputError, match="not closed"):
            RegionBoundary.build(
                "open", [GeoPoint(0, 0), GeoPoint(1, 0), GeoPoint(1, 1), GeoPoint(0, 1)]
            )

    @given(st.integers(min_value=0, max_value=7), st.integers(min_value=0, max_value=30))
    def test_invariant_under_ring_rotation(self, shift, point_seed):
        b = concave_polygon()
        open_ring = list(b.outer_ring[:-1])
        rotated = open_ring[shift:] + open_ring[:shift]
        rotated.append(rotated[0])
        rb = RegionBoundary.build("rot", rotated)
        rng = np.random.default_rng(point_seed)
        p = GeoPoint(float(rng.uniform(-0.5, 4.5)), float(rng.uniform(-0.5, 4.5)))
        assert point_in_region(p, b) == point_in_region(p, rb)


class TestAuditConnectivity:
    def test_connected_grid_single_component(self):
        world = worlds.grid_world(6)
        g = world.graph
        fac = [Facility("H0", Category.HEALTHCARE, g.nodes["n0_0"], "n0_0")]
        report = audit_connectivity(g, fac)
        assert report.component_count == 1
        assert report.component_sizes == (36,)
        assert report.orphaned_facility_ids == ()

    def test_isolated_facility_node_is_orphaned(self, tmp_path):
        path = write_graph(
            tmp_path,
            "N a 6.0 4.0\nN b 6.01 4.0\nN lone 6.5 4.5\nE a b 100 0\n",
        )
        g = load_road_graph(path)
        fac = [
            Facility("H0", Category.HEALTHCARE, g.nodes["lone"], "lone"),
            Facility("F0", Category.FIRE_DISASTER, g.nodes["a"], "a"),
        ]
        report = audit_connectivity(g, fac)
        assert report.component_count == 2
        assert report.orphaned_facility_ids == ("H0",)

    def test_barrier_world_components_match_construction(self, barrier):
        # bridged main grid (400 nodes) + disconnected island (16 nodes)
        report = audit_connectivity(barrier.graph, list(barrier.facilities))
        assert report.component_count == 2
        assert report.component_sizes == (400, 16)
        assert report.orphaned_facility_ids == ()

    def test_split_world_halves(self):
        world = worlds.split_world(20)
        report = audit_connectivity(world.graph, [])
        assert report.component_count == 2
        assert report.component_sizes == (200, 200)

    def test_component_sizes_sum_to_node_count(self, barrier):
        report = audit_connectivity(barrier.graph, [])
        assert sum(report.component_sizes) == barrier.graph.n_nodes

    def test_explicit_incident_nodes_rescue_orphan(self, tmp_path):
        path = write_graph(tmp_path, "N a 6.0 4.0\nN b 6.01 4.0\nE a b 100 0\n")
        g = load_road_graph(path)
        fac = [Facility("H0", Category.HEALTHCARE, g.nodes["a"], "a")]
        # default: node b is potential demand -> not orphaned
        assert audit_connectivity(g, fac).orphaned_facility_ids == ()
        # explicit incident list elsewhere -> orphaned
        assert audit_connectivity(g, fac, incident_nodes=[]).orphaned_facility_ids == ("H0",)
        assert audit_connectivity(g, fac, incident_nodes=["b"]).orphaned_facility_ids == ()
