"""Scenario generation: mixture sampling, quotas, validation, reproducibility."""

from __future__ import annotations

import json

import numpy as np
import pytest

from dispatchopt import worlds
from dispatchopt.errors import InputError
from dispatchopt.geo import Category, GeoPoint, RegionBoundary, point_in_region
from dispatchopt.scenario import (
    Incident,
    PopulationCenter,
    ScenarioConfig,
    Split,
    generate_challenge_set,
    generate_incidents,
    load_incidents,
    save_incidents,
)

# 0.99 quantile of the chi-square distribution with 15 degrees of freedom;
# statistic below this means the uniformity test passes at p > 0.01.
CHI2_15_CRIT_P01 = 30.5779

PAPER_TRAIN_COUNTS = {Category(0): 570, Category(1): 532, Category(2): 454, Category(3): 444}
PAPER_CHALLENGE_COUNTS = {Category(0): 142, Category(1): 142, Category(2): 108, Category(3): 108}


@pytest.fixture(scope="module")
def grid():
    return worlds.grid_world(20)


@pytest.fixture(scope="module")
def grid_centers(grid):
    lon_min, lat_min, lon_max, lat_max = grid.boundary.bbox()
    mid_lon, mid_lat = (lon_min + lon_max) / 2, (lat_min + lat_max) / 2
    return [
        PopulationCenter(GeoPoint(mid_lon, mid_lat), weight=2.0, sigma_deg=0.01),
        PopulationCenter(GeoPoint(mid_lon + 0.02, mid_lat - 0.02), weight=1.0, sigma_deg=0.015),
    ]


def histogram(incidents):
    out = {cat: 0 for cat in Category}
    for inc in incidents:
        out[inc.category] += 1
    return out


class TestGenerateIncidents:
    def test_one_incident_per_category(self, grid, grid_centers):
        cfg = ScenarioConfig(4, {c: 1 for c in Category}, rng_seed=1)
        incidents = generate_incidents(cfg, grid_centers, grid.boundary, grid.graph)
        assert histogram(incidents) == {c: 1 for c in Category}

    def test_uniform_mode_passes_chi_square(self, grid):
        # 4x4 spatial binning over the rectangular boundary, 800 samples
        cfg = ScenarioConfig(800, {Category(0): 200, Category(1): 200, Category(2): 200, Category(3): 200},
                             rng_seed=77, cluster_fraction=0.0)
        incidents = generate_incidents(cfg, [], grid.boundary, grid.graph)
        lon_min, lat_min, lon_max, lat_max = grid.boundary.bbox()
        counts = np.zeros((4, 4))
        for inc in incidents:
            bx = min(3, int((inc.location.lon - lon_min) / (lon_max - lon_min) * 4))
            by = min(3, int((inc.location.lat - lat_min) / (lat_max - lat_min) * 4))
            counts[bx, by] += 1
        expected = len(incidents) / 16.0
        stat = float(((counts - expected) ** 2 / expected).sum())
        assert stat < CHI2_15_CRIT_P01

    def test_paper_scale_category_histogram(self, grid, grid_centers):
        cfg = ScenarioConfig(2000, PAPER_TRAIN_COUNTS, rng_seed=5)
        incidents = generate_incidents(cfg, grid_centers, grid.boundary, grid.graph)
        assert histogram(incidents) == PAPER_TRAIN_COUNTS
        assert len(incidents) == 2000

    def test_every_incident_inside_boundary(self, grid, grid_centers):
        cfg = ScenarioConfig(400, {c: 100 for c in Category}, rng_seed=9)
        incidents = generate_incidents(cfg, grid_centers, grid.boundary, grid.graph)
        assert all(point_in_region(inc.location, grid.boundary) for inc in incidents)

    @pytest.mark.parametrize("fraction,expected", [(0.0, 0), (0.6, 180), (1.0, 300), (0.333, 100)])
    def test_clustered_branch_count_is_exact(self, grid, grid_centers, fraction, expected):
        counts = {Category(0): 75, Category(1): 75, Category(2): 75, Category(3): 75}
        cfg = ScenarioConfig(300, counts, rng_seed=21, cluster_fraction=fraction)
        incidents = generate_incidents(cfg, grid_centers, grid.boundary, grid.graph)
        assert sum(inc.clustered for inc in incidents) == expected

    def test_same_seed_identical_different_seed_distinct(self, grid, grid_centers):
        counts = {c: 25 for c in Category}
        cfg = ScenarioConfig(100, counts, rng_seed=13)
        a = generate_incidents(cfg, grid_centers, grid.boundary, grid.graph)
        b = generate_incidents(cfg, grid_centers, grid.boundary, grid.graph)
        assert a == b
        c = generate_incidents(
            ScenarioConfig(100, counts, rng_seed=14), grid_centers, grid.boundary, grid.graph
        )
        assert {(i.location.lon, i.location.lat) for i in a} != {
            (i.location.lon, i.location.lat) for i in c
        }

    def test_counts_must_sum_to_n(self):
        with pytest.raises(InputError, match="sum"):
            ScenarioConfig(10, {c: 1 for c in Category}, rng_seed=0)

    def test_cluster_without_centers_rejected(self, grid):
        cfg = ScenarioConfig(8, {c: 2 for c in Category}, rng_seed=0, cluster_fraction=0.5)
        with pytest.raises(InputError, match="population center"):
            generate_incidents(cfg, [], grid.boundary, grid.graph)

    def test_retry_budget_surfaces_degenerate_boundary(self, grid):
        # diagonal sliver: area ~1e-8 of a 10x10 bounding box
        sliver = RegionBoundary.build(
            "sliver",
            [
                GeoPoint(0.0, 0.0),
                GeoPoint(10.0, 10.0),
                GeoPoint(10.0 - 1e-9, 10.0),
                GeoPoint(-1e-9, 0.0),
                GeoPoint(0.0, 0.0),
            ],
        )
        cfg = ScenarioConfig(4, {c: 1 for c in Category}, rng_seed=0, cluster_fraction=0.0,
                             retry_budget=50)
        with pytest.raises(InputError, match="rejection sampling"):
            generate_incidents(cfg, [], sliver, grid.graph)


class TestChallengeSet:
    def test_paper_scale_histogram(self, grid, grid_centers):
        cfg = ScenarioConfig(500, PAPER_CHALLENGE_COUNTS, rng_seed=31, split=Split.CHALLENGE)
        incidents = generate_challenge_set(cfg, grid_centers, grid.boundary, grid.graph, training_seed=5)
        assert histogram(incidents) == PAPER_CHALLENGE_COUNTS
        assert all(inc.split is Split.CHALLENGE for inc in incidents)

    def test_byte_identical_serialization_across_runs(self, grid, grid_centers, tmp_path):
        cfg = ScenarioConfig(60, {c: 15 for c in Category}, rng_seed=8, split=Split.CHALLENGE)
        for name in ("a", "b"):
            incidents = generate_challenge_set(cfg, grid_centers, grid.boundary, grid.graph)
            save_incidents(incidents, tmp_path / f"{name}.geojson", tmp_path / f"{name}.meta.json", cfg)
        assert (tmp_path / "a.geojson").read_bytes() == (tmp_path / "b.geojson").read_bytes()
        assert (tmp_path / "a.meta.json").read_bytes() == (tmp_path / "b.meta.json").read_bytes()

    def test_disjoint_seeds_share_no_locations(self, grid, grid_centers):
        counts = {c: 50 for c in Category}
        train = generate_incidents(
            ScenarioConfig(200, counts, rng_seed=100), grid_centers, grid.boundary, grid.graph
        )
        challenge = generate_challenge_set(
            ScenarioConfig(200, counts, rng_seed=101, split=Split.CHALLENGE),
            grid_centers,
            grid.boundary,
            grid.graph,
            training_seed=100,
        )
        train_locs = {(i.location.lon, i.location.lat) for i in train}
        challenge_locs = {(i.location.lon, i.location.lat) for i in challenge}
        assert not train_locs & challenge_locs

    def test_equal_seed_rejected(self, grid, grid_centers):
        cfg = ScenarioConfig(4, {c: 1 for c in Category}, rng_seed=100, split=Split.CHALLENGE)
        with pytest.raises(InputError, match="disjoint"):
            generate_challenge_set(cfg, grid_centers, grid.boundary, grid.graph, training_seed=100)


class TestSerialization:
    def test_geojson_round_trip(self, grid, grid_centers, tmp_path):
        cfg = ScenarioConfig(40, {c: 10 for c in Category}, rng_seed=3)
        incidents = generate_incidents(cfg, grid_centers, grid.boundary, grid.graph)
        path = tmp_path / "inc.geojson"
        save_incidents(incidents, path, tmp_path / "inc.meta.json", cfg)
        loaded = load_incidents(path, grid.graph)
        assert [i.id for i in loaded] == [i.id for i in incidents]
        assert [i.category for i in loaded] == [i.category for i in incidents]
        assert [i.node for i in loaded] == [i.node for i in incidents]
        meta = json.loads((tmp_path / "inc.meta.json").read_text())
        assert meta["rng"] == "philox"
        assert meta["seed"] == 3
        assert meta["n_clustered"] == sum(i.clustered for i in incidents)
