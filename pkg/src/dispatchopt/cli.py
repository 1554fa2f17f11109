"""Command-line entry point tying the pipeline together.

Subcommands: gen-incidents, build-atlas, train, evaluate, dispatch, assess,
plan, audit-graph, pipeline. All tunables live in the config file; flags are
--config, --seed (override), --out, --force, --threads. Output directory
layout is fixed: atlas/, incidents/, model/, reports/, manifest.json.

Exit codes: 0 success, 1 internal error, 2 input error, 3 unsolvable dispatch.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import shutil
import sys
import traceback
from pathlib import Path

import numpy as np

from dispatchopt import agent, atlas as atlas_mod, governance, trainer
from dispatchopt.config import RunConfig, category_counts_map, load_run_config, sha256_file
from dispatchopt.env import EnvConstants, RewardParams, build_state
from dispatchopt.errors import DispatchError, InputError, StageError, UnsolvableIncidentError
from dispatchopt.evaluate import (
    GreedyPolicy,
    NearestNeighborPolicy,
    OraclePolicy,
    evaluate,
    latency_bench,
    write_dispatch_log,
    write_report_csv,
    write_report_text,
)
from dispatchopt.geo import (
    Category,
    GeoPoint,
    RegionBoundary,
    audit_connectivity,
    load_boundary,
    load_facilities,
    load_regions,
    load_road_graph,
    snap_to_node,
)
from dispatchopt.manifest import RunManifest, load_manifest
from dispatchopt.scenario import (
    Incident,
    ScenarioConfig,
    Split,
    generate_challenge_set,
    generate_incidents,
    load_centers,
    load_incidents,
    save_incidents,
)

STAGE_DIRS = {"incidents": "incidents", "atlas": "atlas", "model": "model", "reports": "reports"}


def _fail(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _stage_dir(out: Path, name: str, force: bool) -> Path:
    d = out / STAGE_DIRS[name]
    if d.exists():
        if not force:
            raise InputError(f"output directory {d} already exists; pass --force to overwrite")
        shutil.rmtree(d)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _manifest(out: Path, cfg_path: Path, cfg: RunConfig) -> RunManifest:
    inputs = {"config": sha256_file(cfg_path)}
    for key in ("graph", "facilities", "boundary", "centers", "regions"):
        value = getattr(cfg, key)
        if value and Path(value).exists():
            inputs[key] = sha256_file(value)
    m = RunManifest(out, config_hash=sha256_file(cfg_path), seed=cfg.seed, inputs=inputs)
    if m.path.exists():
        existing = load_manifest(out)
        if existing.get("config_hash") == m.data["config_hash"]:
            m.data["stages"] = existing.get("stages", {})
    return m


class _Workspace:
    """Lazily loaded shared inputs for one command invocation."""

    def __init__(self, cfg: RunConfig, cfg_path: Path, out: Path, threads: int):
        self.cfg = cfg
        self.cfg_path = cfg_path
        self.out = out
        self.threads = threads
        self._graph = None
        self._facilities = None
        self._boundary = None

    @property
    def graph(self):
        if self._graph is None:
            self._graph = load_road_graph(self.cfg.graph)
        return self._graph

    @property
    def facilities(self):
        if self._facilities is None:
            if not self.cfg.facilities or not Path(self.cfg.facilities).exists():
                raise InputError(f"facilities file not found: {self.cfg.facilities}")
            self._facilities = load_facilities(self.cfg.facilities, self.graph)
        return self._facilities

    @property
    def boundary(self):
        if self._boundary is None:
            self._boundary = load_boundary(self.cfg.boundary)
        return self._boundary

    def regions(self) -> list[RegionBoundary]:
        if self.cfg.regions:
            return load_regions(self.cfg.regions)
        return [self.boundary]

    def centers(self):
        if self.cfg.centers:
            return load_centers(self.cfg.centers)
        return []

    def env_constants(self) -> EnvConstants:
        return EnvConstants(self.cfg.t_max_min, self.cfg.d_max_min)

    def reward_params(self) -> RewardParams:
        return RewardParams(self.cfg.alpha)

    def atlas(self) -> atlas_mod.TravelTimeAtlas:
        return atlas_mod.load_atlas(
            self.out / "atlas" / atlas_mod.ATLAS_CSV_NAME,
            self.out / "atlas" / atlas_mod.ATLAS_META_NAME,
        )

    def checkpoint(self) -> agent.PolicyParams:
        params, _ = agent.load_checkpoint(self.out / "model" / "checkpoint.json")
        return params


# ---------------------------------------------------------------------------
# Commands


def cmd_gen_incidents(ws: _Workspace, force: bool) -> int:
    cfg = ws.cfg
    d = _stage_dir(ws.out, "incidents", force)
    centers = ws.centers()
    train_cfg = ScenarioConfig(
        n_incidents=cfg.n_incidents,
        category_counts=category_counts_map(cfg.category_counts),
        rng_seed=cfg.seed,
        cluster_fraction=cfg.cluster_fraction,
        retry_budget=cfg.retry_budget,
        split=Split.TRAINING,
    )
    chal_cfg = ScenarioConfig(
        n_incidents=cfg.challenge_n_incidents,
        category_counts=category_counts_map(cfg.challenge_category_counts),
        rng_seed=cfg.resolved_challenge_seed(),
        cluster_fraction=cfg.cluster_fraction,
        retry_budget=cfg.retry_budget,
        split=Split.CHALLENGE,
    )
    training = generate_incidents(train_cfg, centers, ws.boundary, ws.graph)
    challenge = generate_challenge_set(chal_cfg, centers, ws.boundary, ws.graph, training_seed=cfg.seed)
    save_incidents(training, d / "training.geojson", d / "training.meta.json", train_cfg)
    save_incidents(challenge, d / "challenge.geojson", d / "challenge.meta.json", chal_cfg)
    m = _manifest(ws.out, ws.cfg_path, cfg)
    m.record_stage(
        "gen-incidents",
        [d / "training.geojson", d / "training.meta.json", d / "challenge.geojson", d / "challenge.meta.json"],
    )
    print(f"gen-incidents: {len(training)} training + {len(challenge)} challenge incidents -> {d}")
    return 0


def _unique_nodes(incident_sets: list[list[Incident]]) -> list[str]:
    seen: set[str] = set()
    ordered: list[str] = []
    for incidents in incident_sets:
        for inc in incidents:
            if inc.node not in seen:
                seen.add(inc.node)
                ordered.append(inc.node)
    return ordered


def cmd_build_atlas(ws: _Workspace, incident_paths: list[str], force: bool) -> int:
    cfg = ws.cfg
    if not incident_paths:
        default_dir = ws.out / "incidents"
        incident_paths = [
            str(p)
            for p in (default_dir / "training.geojson", default_dir / "challenge.geojson")
            if p.exists()
        ]
        if not incident_paths:
            raise InputError(
                f"no incident files given and none found under {default_dir}; "
                "run gen-incidents first or pass paths"
            )
    incident_sets = [load_incidents(p, ws.graph) for p in incident_paths]
    nodes = _unique_nodes(incident_sets)
    built = atlas_mod.build_atlas(ws.graph, nodes, ws.facilities, cfg.speed_kmh, threads=ws.threads)
    d = _stage_dir(ws.out, "atlas", force)
    csv_path = d / atlas_mod.ATLAS_CSV_NAME
    meta_path = d / atlas_mod.ATLAS_META_NAME
    atlas_mod.save_atlas(built, csv_path, meta_path, graph_sha256=sha256_file(cfg.graph))
    m = _manifest(ws.out, ws.cfg_path, cfg)
    m.record_stage("build-atlas", [csv_path, meta_path])
    print(
        f"build-atlas: {len(built.incident_nodes)} incident nodes x {len(built.facilities)} "
        f"facilities at {cfg.speed_kmh} km/h -> {csv_path}"
    )
    return 0


def cmd_train(ws: _Workspace, force: bool) -> int:
    cfg = ws.cfg
    incidents = load_incidents(ws.out / "incidents" / "training.geojson", ws.graph)
    built = ws.atlas()
    tc = trainer.TrainConfig(
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        entropy_coef=cfg.entropy_coef,
        critic_weight=cfg.critic_weight,
        gae_lambda=cfg.gae_lambda,
        gamma=cfg.gamma,
        seed=cfg.seed,
        optimizer=cfg.optimizer,
        embed_dim=cfg.embed_dim,
    )
    params, curve = trainer.train(incidents, built, ws.env_constants(), ws.reward_params(), tc)
    d = _stage_dir(ws.out, "model", force)
    ckpt = d / "checkpoint.json"
    agent.save_checkpoint(params, ckpt, config_hash=sha256_file(ws.cfg_path))
    curve_path = d / "curve.csv"
    curve.to_csv(curve_path)
    m = _manifest(ws.out, ws.cfg_path, cfg)
    m.record_stage("train", [ckpt, curve_path])
    rolling = curve.rolling_mean_reward()[-1] if curve.epochs else float("nan")
    print(f"train: {tc.epochs} epochs, final rolling-50 mean reward {rolling:.4f} -> {ckpt}")
    return 0


def cmd_evaluate(ws: _Workspace, force: bool) -> int:
    cfg = ws.cfg
    built = ws.atlas()
    challenge = load_incidents(ws.out / "incidents" / "challenge.geojson", ws.graph)
    consts = ws.env_constants()
    params = ws.checkpoint()
    agent_policy = GreedyPolicy(params)
    baseline = NearestNeighborPolicy(built.facilities)
    oracle = OraclePolicy(built)
    d = _stage_dir(ws.out, "reports", force)
    reports = []
    artifacts = []
    for policy in (agent_policy, baseline, oracle):
        report, records = evaluate(policy, challenge, built, consts)
        reports.append(report)
        log_path = d / f"dispatch_log_{report.policy}.csv"
        write_dispatch_log(records, log_path)
        artifacts.append(log_path)
    csv_path = d / "evaluation.csv"
    txt_path = d / "evaluation.txt"
    # the deterministic evaluation artifacts carry no wall-clock numbers; the
    # measured dispatch latency goes to its own sidecar
    write_report_csv(reports, csv_path)
    p50, p99 = latency_bench(agent_policy, challenge, built, consts)
    latency_path = d / "latency.csv"
    latency_path.write_text(
        f"policy,latency_p50_ms,latency_p99_ms\nagent,{p50!r},{p99!r}\n", encoding="utf-8"
    )
    write_report_text(
        [dataclasses.replace(reports[0], latency_p50_ms=p50, latency_p99_ms=p99), *reports[1:]],
        txt_path,
    )
    artifacts += [csv_path, txt_path, latency_path]
    m = _manifest(ws.out, ws.cfg_path, cfg)
    m.record_stage("evaluate", artifacts)
    for r in reports:
        print(
            f"evaluate[{r.policy}]: rate {r.optimality_rate:.2f}% over {r.n_solvable} solvable "
            f"(of {r.n_total}), avg delta {r.avg_inefficiency_delta:.4f} min"
        )
    print(f"evaluate: agent dispatch latency p50 {p50:.3f} ms, p99 {p99:.3f} ms -> {latency_path}")
    return 0


def cmd_dispatch(ws: _Workspace, lon: float, lat: float, category_token: str) -> int:
    cfg = ws.cfg
    category = Category.parse(category_token)
    point = GeoPoint(lon, lat)
    built = ws.atlas()
    node = snap_to_node(point, ws.graph)
    if node in built.incident_nodes:
        row_atlas = built
    else:
        dist = atlas_mod.times_from_node(ws.graph, node, built.avg_speed_kmh)
        times = np.array(
            [dist[ws.graph.node_index[f.node]] for f in built.facilities], dtype=np.float64
        ).reshape(1, -1)
        row_atlas = atlas_mod.TravelTimeAtlas((node,), built.facilities, times, built.avg_speed_kmh)
    i = row_atlas.row_index(node)
    best = atlas_mod.best_feasible(row_atlas, i, category)
    if best is None:
        print(f"no reachable facility of category {category.name.lower()} from ({lon}, {lat})")
        raise UnsolvableIncidentError(category.name)
    incident = Incident(
        id="adhoc", category=category, location=point, node=node, split=Split.CHALLENGE
    )
    state = build_state(incident, row_atlas, ws.env_constants())
    out = agent.forward(ws.checkpoint(), state)
    choice = agent.greedy_action(out)
    chosen = row_atlas.facilities[choice]
    t_chosen = float(row_atlas.times[i][choice])
    delta = t_chosen - best.t_star
    print(
        f"dispatch: facility {chosen.id} ({chosen.category.name.lower()}), "
        f"travel time {t_chosen:.3f} min, delta to best {delta:.3f} min"
    )
    return 0


def _probes_by_region(ws: _Workspace) -> dict[str, list[Incident]]:
    cfg = ws.cfg
    probes: dict[str, list[Incident]] = {}
    counts = {cat: cfg.probes_per_category for cat in Category}
    for idx, region in enumerate(ws.regions()):
        pc = ScenarioConfig(
            n_incidents=cfg.probes_per_category * len(Category),
            category_counts=counts,
            rng_seed=cfg.resolved_assess_seed() + idx,
            cluster_fraction=0.0,
            retry_budget=cfg.retry_budget,
            split=Split.TRAINING,
        )
        probes[region.region_id] = generate_incidents(pc, [], region, ws.graph)
    return probes


def _assessment_atlas(ws: _Workspace, probes: dict[str, list[Incident]]) -> atlas_mod.TravelTimeAtlas:
    nodes = _unique_nodes(list(probes.values()))
    return atlas_mod.build_atlas(ws.graph, nodes, ws.facilities, ws.cfg.speed_kmh, threads=ws.threads)


def _thresholds(cfg: RunConfig) -> governance.GradeThresholds:
    return governance.GradeThresholds(cfg.t_green_min, cfg.t_red_min, cfg.coverage_min, cfg.coverage_red)


def cmd_assess(ws: _Workspace, force: bool, reports_dir: Path | None = None) -> int:
    cfg = ws.cfg
    probes = _probes_by_region(ws)
    probe_atlas = _assessment_atlas(ws, probes)
    grades = governance.assess(probes, probe_atlas, _thresholds(cfg))
    d = reports_dir if reports_dir is not None else _stage_dir(ws.out, "reports", force)
    csv_path = d / "assessment.csv"
    geo_path = d / "assessment.geojson"
    governance.write_assessment_csv(grades, csv_path)
    governance.write_assessment_geojson(grades, ws.regions(), geo_path)
    artifacts = [csv_path, geo_path]
    if cfg.zones_k > 0:
        points = [p.location for region_probes in probes.values() for p in region_probes]
        ids = [p.id for region_probes in probes.values() for p in region_probes]
        za = governance.cluster_zones(points, cfg.zones_k, cfg.resolved_zones_seed())
        zones_path = d / "zones.csv"
        cent_path = d / "zone_centroids.geojson"
        governance.write_zones_csv(za, ids, zones_path)
        governance.write_zone_centroids_geojson(za, cent_path)
        artifacts += [zones_path, cent_path]
    m = _manifest(ws.out, ws.cfg_path, cfg)
    m.record_stage("assess", artifacts)
    flagged = [g for g in grades if g.grade in (governance.Grade.YELLOW, governance.Grade.RED)]
    print(f"assess: {len(grades)} region-category grades, {len(flagged)} flagged -> {csv_path}")
    return 0


def cmd_plan(ws: _Workspace, force: bool, reports_dir: Path | None = None) -> int:
    cfg = ws.cfg
    probes = _probes_by_region(ws)
    probe_atlas = _assessment_atlas(ws, probes)
    thresholds = _thresholds(cfg)
    grades = governance.assess(probes, probe_atlas, thresholds)
    candidates = {
        r.region_id: governance.region_candidate_nodes(ws.graph, r, cfg.candidate_cap)
        for r in ws.regions()
    }
    plan = governance.plan_interventions(
        grades, probes, probe_atlas, ws.graph, candidates, thresholds, cfg.speed_kmh
    )
    d = reports_dir if reports_dir is not None else _stage_dir(ws.out, "reports", force)
    csv_path = d / "intervention.csv"
    geo_path = d / "intervention_sites.geojson"
    governance.write_intervention_csv(plan, csv_path)
    governance.write_intervention_geojson(plan, geo_path)
    m = _manifest(ws.out, ws.cfg_path, cfg)
    m.record_stage("plan", [csv_path, geo_path])
    n_sites = sum(e.n_new for e in plan.entries)
    print(f"plan: {n_sites} proposed sites across {len(plan.entries)} region-category pairs -> {csv_path}")
    return 0


def cmd_audit_graph(ws: _Workspace, force: bool) -> int:
    report = audit_connectivity(ws.graph, ws.facilities)
    print(
        f"audit-graph: {report.component_count} component(s), sizes {list(report.component_sizes)}, "
        f"{len(report.orphaned_facility_ids)} orphaned facility(ies)"
    )
    for fid in report.orphaned_facility_ids:
        print(f"  orphaned: {fid}")
    if ws.out is not None:
        d = ws.out / "reports"
        d.mkdir(parents=True, exist_ok=True)
        path = d / "connectivity.json"
        path.write_text(
            json.dumps(
                {
                    "component_count": report.component_count,
                    "component_sizes": list(report.component_sizes),
                    "orphaned_facility_ids": list(report.orphaned_facility_ids),
                },
                indent=2,
                sort_keys=True,
            )
            + "\n",
            encoding="utf-8",
        )
        print(f"audit-graph: report -> {path}")
    return 0


PIPELINE_STAGES = ("gen-incidents", "build-atlas", "train", "evaluate", "assess", "plan")


def cmd_pipeline(ws: _Workspace, force: bool) -> int:
    out = ws.out
    if out.exists() and any(out.iterdir()):
        if not force:
            raise InputError(f"output directory {out} already exists; pass --force to overwrite")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    reports_force = {"evaluate"}  # evaluate creates reports/; assess and plan append to it

    def run(stage: str) -> None:
        try:
            if stage == "gen-incidents":
                cmd_gen_incidents(ws, force=True)
            elif stage == "build-atlas":
                cmd_build_atlas(ws, [], force=True)
            elif stage == "train":
                cmd_train(ws, force=True)
            elif stage == "evaluate":
                cmd_evaluate(ws, force=True)
            elif stage == "assess":
                cmd_assess(ws, force=True, reports_dir=out / "reports")
            elif stage == "plan":
                cmd_plan(ws, force=True, reports_dir=out / "reports")
        except Exception as exc:
            raise StageError(stage, exc) from exc

    for stage in PIPELINE_STAGES:
        run(stage)
    print(f"pipeline: complete -> {out}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dispatchopt",
        description="Emergency-dispatch optimization over a road network.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="run config file (key = value lines)")
        p.add_argument("--out", required=True, help="output workspace directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        p.add_argument("--threads", type=int, default=1, help="parallel Dijkstra workers")
        return p

    add("gen-incidents", "generate training and challenge incident sets")
    p = add("build-atlas", "precompute the travel-time atlas")
    p.add_argument("incidents", nargs="*", help="incident GeoJSON files (default: generated sets)")
    add("train", "train the attention actor-critic dispatcher")
    add("evaluate", "evaluate agent, baseline, and oracle on the challenge set")
    p = add("dispatch", "recommend a facility for one incident")
    p.add_argument("lon", type=float)
    p.add_argument("lat", type=float)
    p.add_argument("category", help="0-3 or healthcare|fire|security|transport")
    add("assess", "grade regional service levels")
    add("plan", "propose facility placements for flagged regions")
    add("audit-graph", "report road-graph connectivity and orphaned facilities")
    add("pipeline", "run gen -> atlas -> train -> evaluate -> assess -> plan")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config, seed_override=args.seed)
        ws = _Workspace(cfg, Path(args.config), Path(args.out), max(1, args.threads))
        if args.command == "gen-incidents":
            return cmd_gen_incidents(ws, args.force)
        if args.command == "build-atlas":
            return cmd_build_atlas(ws, list(args.incidents), args.force)
        if args.command == "train":
            return cmd_train(ws, args.force)
        if args.command == "evaluate":
            return cmd_evaluate(ws, args.force)
        if args.command == "dispatch":
            return cmd_dispatch(ws, args.lon, args.lat, args.category)
        if args.command == "assess":
            return cmd_assess(ws, args.force)
        if args.command == "plan":
            return cmd_plan(ws, args.force)
        if args.command == "audit-graph":
            return cmd_audit_graph(ws, args.force)
        if args.command == "pipeline":
            return cmd_pipeline(ws, args.force)
        raise InputError(f"unknown command {args.command!r}")
    except UnsolvableIncidentError:
        return 3
    except InputError as exc:
        _fail(str(exc))
        return 2
    except StageError as exc:
        _fail(str(exc))
        return 2 if isinstance(exc.cause, InputError) else 1
    except DispatchError as exc:
        _fail(str(exc))
        return 1
    except Exception:  # noqa: BLE001 - last-resort diagnostics for internal errors
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
