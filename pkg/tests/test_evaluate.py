"""Evaluation: baseline heuristic, optimality/delta accounting, latency, writers."""

from __future__ import annotations

import math

import numpy as np
import pytest

from dispatchopt import worlds
from dispatchopt.atlas import UNREACHABLE, TravelTimeAtlas, best_feasible, build_atlas
from dispatchopt.env import EnvConstants
from dispatchopt.errors import InputError
from dispatchopt.evaluate import (
    EvaluationReport,
    NearestNeighborPolicy,
    OraclePolicy,
    evaluate,
    latency_bench,
    nearest_neighbor_baseline,
    write_dispatch_log,
    write_report_csv,
    write_report_text,
)
from dispatchopt.geo import Category, Facility, GeoPoint
from dispatchopt.scenario import Incident, ScenarioConfig, Split, generate_incidents
from tests.oracles import _haversine


def incident_at(point, category=Category.HEALTHCARE, node="n0_0", iid="t-0"):
    return Incident(iid, category, point, node, Split.TRAINING)


class TestNearestNeighborBaseline:
    def test_single_matching_facility(self):
        fac = [
            Facility("H0", Category.HEALTHCARE, GeoPoint(6.0, 4.0), "a"),
            Facility("S0", Category.SECURITY, GeoPoint(6.0, 4.0), "a"),
        ]
        inc = incident_at(GeoPoint(6.5, 4.5))
        assert nearest_neighbor_baseline(inc, fac) == 0

    def test_reachability_is_deliberately_ignored(self, barrier, barrier_atlas):
        # an island incident: no facility is reachable, yet the baseline happily
        # returns the geographically closest one of the right category
        g = barrier.graph
        island_node = "i0_0"
        inc = incident_at(g.nodes[island_node], Category.HEALTHCARE, island_node)
        j = nearest_neighbor_baseline(inc, barrier_atlas.facilities)
        assert barrier_atlas.facilities[j].category == Category.HEALTHCARE
        row = barrier_atlas.times[barrier_atlas.row_index(island_node)]
        assert math.isinf(row[j])

    def test_matches_exhaustive_scan_on_thirty_facilities(self):
        rng = np.random.default_rng(4)
        fac = []
        for i in range(30):
            cat = Category(int(rng.integers(0, 4)))
            fac.append(
                Facility(
                    f"X{i}", cat, GeoPoint(float(rng.uniform(6, 7)), float(rng.uniform(4, 5))), "n"
                )
            )
        for trial in range(25):
            cat = Category(int(rng.integers(0, 4)))
            p = GeoPoint(float(rng.uniform(6, 7)), float(rng.uniform(4, 5)))
            inc = incident_at(p, cat, iid=f"t-{trial}")
            got = nearest_neighbor_baseline(inc, fac)
            best = min(
                (j for j, f in enumerate(fac) if f.category == cat),
                key=lambda j: (_haversine(p.lon, p.lat, fac[j].location.lon, fac[j].location.lat), j),
            )
            assert got == best

    def test_no_category_match_is_an_error(self):
        fac = [Facility("H0", Category.HEALTHCARE, GeoPoint(6, 4), "a")]
        with pytest.raises(InputError, match="category"):
            nearest_neighbor_baseline(incident_at(GeoPoint(6, 4), Category.TRANSPORT), fac)


def fixture_atlas(rows, categories, graph_world=None):
    world = graph_world or worlds.grid_world(6)
    g = world.graph
    nodes = list(g.node_ids[: len(rows)])
    fac = tuple(
        Facility(f"X{j}", cat, g.nodes[g.node_ids[j]], g.node_ids[j])
        for j, cat in enumerate(categories)
    )
    times = np.asarray(rows, dtype=np.float64)
    return TravelTimeAtlas(tuple(nodes), fac, times, 40.0), nodes, g


class _EnumeratingChooser:
    """Visits every feasible choice exactly once across repeated incidents."""

    name = "enumerator"

    def __init__(self, atlas):
        self.atlas = atlas
        self.cursor: dict[str, int] = {}

    def choose(self, incident, state):
        feasible = np.flatnonzero(state.mask)
        k = self.cursor.get(incident.id, 0)
        self.cursor[incident.id] = k + 1
        return int(feasible[k % len(feasible)])


class TestEvaluate:
    def test_oracle_policy_is_always_perfect(self, barrier, barrier_challenge, barrier_atlas):
        report, _ = evaluate(OraclePolicy(barrier_atlas), barrier_challenge, barrier_atlas, EnvConstants())
        assert report.optimality_rate == 100.0
        assert report.avg_inefficiency_delta == 0.0

    def test_enumerating_policy_matches_expectation_oracle(self):
        rows = [
            [4.0, 6.0, UNREACHABLE, 4.0],
            [10.0, 2.0, 3.0, 2.0],
            [UNREACHABLE, 7.0, 7.0, 7.0],
        ]
        cats = [Category.HEALTHCARE] * 4
        atlas, nodes, g = fixture_atlas(rows, cats)
        incidents = []
        expected_optimal = 0
        expected_delta_sum = 0.0
        expected_n = 0
        for i, row in enumerate(rows):
            feasible = [t for t in row if math.isfinite(t)]
            t_star = min(feasible)
            for k in range(len(feasible)):
                incidents.append(
                    Incident(f"inc-{i}", Category.HEALTHCARE, g.nodes[nodes[i]], nodes[i], Split.TRAINING)
                )
            expected_n += len(feasible)
            expected_optimal += sum(1 for t in feasible if t == t_star)
            expected_delta_sum += sum(t - t_star for t in feasible)
        report, _ = evaluate(_EnumeratingChooser(atlas), incidents, atlas, EnvConstants())
        assert report.n_solvable == expected_n
        assert report.optimality_rate == pytest.approx(100.0 * expected_optimal / expected_n)
        assert report.avg_inefficiency_delta == pytest.approx(expected_delta_sum / expected_n)

    def test_unsolvable_incidents_counted_but_excluded(self):
        rows = [[UNREACHABLE], [5.0]]
        atlas, nodes, g = fixture_atlas(rows, [Category.HEALTHCARE])
        incidents = [
            Incident("u-0", Category.HEALTHCARE, g.nodes[nodes[0]], nodes[0], Split.TRAINING),
            Incident("s-0", Category.HEALTHCARE, g.nodes[nodes[1]], nodes[1], Split.TRAINING),
        ]
        report, records = evaluate(OraclePolicy(atlas), incidents, atlas, EnvConstants())
        assert report.n_total == 2
        assert report.n_solvable == 1
        assert not records[0].solvable
        assert records[1].optimal

    def test_unreachable_pick_scored_as_worst_feasible(self):
        # baseline picks the geographically closest facility, which is unreachable
        world = worlds.grid_world(6)
        g = world.graph
        rows = [[UNREACHABLE, 5.0, 8.0]]
        fac = (
            Facility("near", Category.HEALTHCARE, g.nodes[g.node_ids[0]], g.node_ids[0]),
            Facility("best", Category.HEALTHCARE, g.nodes[g.node_ids[20]], g.node_ids[20]),
            Facility("worst", Category.HEALTHCARE, g.nodes[g.node_ids[30]], g.node_ids[30]),
        )
        atlas = TravelTimeAtlas((g.node_ids[0],), fac, np.asarray(rows), 40.0)
        inc = Incident("t-0", Category.HEALTHCARE, g.nodes[g.node_ids[0]], g.node_ids[0], Split.TRAINING)
        report, records = evaluate(NearestNeighborPolicy(fac), [inc], atlas, EnvConstants())
        assert records[0].facility_id == "near"
        assert records[0].t_chosen == 8.0  # worst finite feasible time
        assert records[0].delta == 3.0
        assert report.optimality_rate == 0.0

    def test_delta_zero_iff_rate_hundred(self, barrier, barrier_challenge, barrier_atlas):
        consts = EnvConstants()
        for chooser in (OraclePolicy(barrier_atlas), NearestNeighborPolicy(barrier_atlas.facilities)):
            report, _ = evaluate(chooser, barrier_challenge, barrier_atlas, consts)
            assert (report.avg_inefficiency_delta == 0.0) == (report.optimality_rate == 100.0)
            assert report.avg_inefficiency_delta >= 0.0

    def test_baseline_suboptimal_across_barrier(self, barrier, barrier_challenge, barrier_atlas):
        report, _ = evaluate(
            NearestNeighborPolicy(barrier_atlas.facilities), barrier_challenge, barrier_atlas, EnvConstants()
        )
        assert report.optimality_rate < 100.0
        assert report.avg_inefficiency_delta > 0.0

    def test_baseline_equals_oracle_on_line_world(self):
        # positive control: on a straight road, haversine ordering agrees with
        # hop-count ordering, so the heuristic is exactly optimal
        world = worlds.line_world(30)
        incidents = generate_incidents(
            ScenarioConfig(60, {c: 15 for c in Category}, rng_seed=8, cluster_fraction=0.0),
            [],
            world.boundary,
            world.graph,
        )
        nodes = []
        seen = set()
        for inc in incidents:
            if inc.node not in seen:
                seen.add(inc.node)
                nodes.append(inc.node)
        atlas = build_atlas(world.graph, nodes, list(world.facilities), 40.0)
        base, _ = evaluate(NearestNeighborPolicy(atlas.facilities), incidents, atlas, EnvConstants())
        oracle, _ = evaluate(OraclePolicy(atlas), incidents, atlas, EnvConstants())
        assert base.optimality_rate == oracle.optimality_rate == 100.0

    def test_empty_incident_list(self):
        atlas, _, _ = fixture_atlas([[5.0]], [Category.HEALTHCARE])
        report, records = evaluate(OraclePolicy(atlas), [], atlas, EnvConstants())
        assert report.n_total == 0 and report.n_solvable == 0
        assert records == []
        assert math.isnan(report.optimality_rate)
        p50, p99 = latency_bench(OraclePolicy(atlas), [], atlas, EnvConstants())
        assert math.isnan(p50) and math.isnan(p99)


class TestLatency:
    def test_p99_under_a_second_and_recorded(self, barrier, barrier_challenge, barrier_atlas):
        p50, p99 = latency_bench(
            OraclePolicy(barrier_atlas), barrier_challenge[:40], barrier_atlas, EnvConstants()
        )
        assert p50 <= p99 < 1000.0


class TestWriters:
    def test_report_files(self, tmp_path, barrier_challenge, barrier_atlas):
        report, records = evaluate(
            OraclePolicy(barrier_atlas), barrier_challenge, barrier_atlas, EnvConstants()
        )
        write_report_csv([report], tmp_path / "evaluation.csv")
        write_report_text([report], tmp_path / "evaluation.txt")
        write_dispatch_log(records, tmp_path / "log.csv")
        csv_lines = (tmp_path / "evaluation.csv").read_text().splitlines()
        assert csv_lines[0].startswith("policy,scope,n_total")
        assert any(line.startswith("oracle,overall") for line in csv_lines)
        text = (tmp_path / "evaluation.txt").read_text()
        assert "worst finite feasible" in text  # the unreachable-pick rule is documented
        log_lines = (tmp_path / "log.csv").read_text().splitlines()
        assert len(log_lines) == len(records) + 1
