"""Policy evaluation against the atlas ground truth.

Optimality means the chosen facility's travel time equals the row minimum over
feasible facilities (ties count as optimal). Unsolvable incidents stay in
n_total but are excluded from the rate and delta. A baseline pick that lands
on an unreachable facility is scored with the worst finite feasible time for
that incident — the comparison stays on identical incident sets and the
heuristic's real failure is penalized; the rule is stated in the text report
header.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from dispatchopt.agent import PolicyParams, forward, greedy_action
from dispatchopt.atlas import TravelTimeAtlas, best_feasible, is_unreachable
from dispatchopt.env import DispatchState, EnvConstants, build_state
from dispatchopt.errors import InputError
from dispatchopt.geo import Category, Facility, haversine_m
from dispatchopt.scenario import Incident

UNREACHABLE_PICK_RULE = (
    "baseline picks that land on an unreachable facility are scored with the "
    "worst finite feasible time for that incident"
)


class Chooser(Protocol):
    name: str

    def choose(self, incident: Incident, state: DispatchState) -> int: ...


def nearest_neighbor_baseline(incident: Incident, facilities: Sequence[Facility]) -> int:
    """Geographically closest category-matching facility, reachable or not.

    Deliberately naive: haversine distance only, ties to the lowest index.
    """
    best_j = -1
    best_d = math.inf
    for j, f in enumerate(facilities):
        if f.category != incident.category:
            continue
        d = haversine_m(incident.location.lon, incident.location.lat, f.location.lon, f.location.lat)
        if d < best_d:
            best_d, best_j = d, j
    if best_j < 0:
        raise InputError(f"no facility of category {incident.category!r} exists")
    return best_j


@dataclass(frozen=True)
class GreedyPolicy:
    """Deterministic argmax policy over the trained network's masked logits."""

    params: PolicyParams
    name: str = "agent"

    def choose(self, incident: Incident, state: DispatchState) -> int:
        return greedy_action(forward(self.params, state))


@dataclass(frozen=True)
class NearestNeighborPolicy:
    facilities: tuple[Facility, ...]
    name: str = "baseline"

    def choose(self, incident: Incident, state: DispatchState) -> int:
        return nearest_neighbor_baseline(incident, self.facilities)


@dataclass(frozen=True)
class OraclePolicy:
    """Atlas argmin; by construction always 100% optimal."""

    atlas: TravelTimeAtlas
    name: str = "oracle"

    def choose(self, incident: Incident, state: DispatchState) -> int:
        best = best_feasible(self.atlas, self.atlas.row_index(incident.node), incident.category)
        assert best is not None  # evaluate() only calls choosers on solvable incidents
        return best.facility_index


@dataclass(frozen=True)
class CategoryStats:
    n_solvable: int
    optimality_rate: float  # percent
    avg_delta: float  # minutes


@dataclass(frozen=True)
class EvaluationReport:
    policy: str
    n_total: int
    n_solvable: int
    optimality_rate: float  # percent over solvable incidents
    avg_inefficiency_delta: float  # minutes over solvable incidents
    avg_best_possible_time: float  # minutes over solvable incidents
    per_category: dict[Category, CategoryStats]
    latency_p50_ms: float | None = None
    latency_p99_ms: float | None = None


@dataclass(frozen=True)
class DispatchRecord:
    incident_id: str
    category: Category
    solvable: bool
    facility_id: str
    t_chosen: float
    t_star: float
    delta: float
    optimal: bool


def _score_choice(times: np.ndarray, choice: int, t_star: float, feasible_cols: np.ndarray) -> float:
    """Effective chosen time; unreachable picks score as the worst feasible time."""
    t = float(times[choice])
    if not is_unreachable(t):
        return t
    finite = times[feasible_cols]
    finite = finite[np.isfinite(finite)]
    return float(finite.max())


def evaluate(
    chooser: Chooser,
    incidents: Sequence[Incident],
    atlas: TravelTimeAtlas,
    consts: EnvConstants,
) -> tuple[EvaluationReport, list[DispatchRecord]]:
    records: list[DispatchRecord] = []
    n_total = 0
    deltas: list[float] = []
    optima: list[bool] = []
    tstars: list[float] = []
    cats: list[Category] = []
    for inc in incidents:
        n_total += 1
        i = atlas.row_index(inc.node)
        best = best_feasible(atlas, i, inc.category)
        if best is None:
            records.append(
                DispatchRecord(inc.id, inc.category, False, "", math.nan, math.nan, math.nan, False)
            )
            continue
        state = build_state(inc, atlas, consts)
        choice = chooser.choose(inc, state)
        times = atlas.times[i]
        t_eff = _score_choice(times, choice, best.t_star, atlas.category_columns(inc.category))
        delta = t_eff - best.t_star
        optimal = t_eff == best.t_star
        records.append(
            DispatchRecord(
                inc.id,
                inc.category,
                True,
                atlas.facilities[choice].id,
                t_eff,
                best.t_star,
                delta,
                optimal,
            )
        )
        deltas.append(delta)
        optima.append(optimal)
        tstars.append(best.t_star)
        cats.append(inc.category)
    per_category: dict[Category, CategoryStats] = {}
    for cat in Category:
        sel = [k for k, c in enumerate(cats) if c == cat]
        if sel:
            per_category[cat] = CategoryStats(
                n_solvable=len(sel),
                optimality_rate=100.0 * sum(optima[k] for k in sel) / len(sel),
                avg_delta=float(np.mean([deltas[k] for k in sel])),
            )
        else:
            per_category[cat] = CategoryStats(0, math.nan, math.nan)
    n_solvable = len(deltas)
    report = EvaluationReport(
        policy=getattr(chooser, "name", chooser.__class__.__name__),
        n_total=n_total,
        n_solvable=n_solvable,
        optimality_rate=(100.0 * sum(optima) / n_solvable) if n_solvable else math.nan,
        avg_inefficiency_delta=float(np.mean(deltas)) if n_solvable else math.nan,
        avg_best_possible_time=float(np.mean(tstars)) if n_solvable else math.nan,
        per_category=per_category,
    )
    return report, records


def latency_bench(
    chooser: Chooser,
    incidents: Sequence[Incident],
    atlas: TravelTimeAtlas,
    consts: EnvConstants,
) -> tuple[float, float]:
    """p50/p99 wall-clock milliseconds per single dispatch recommendation.

    Times build_state + choice per incident; the atlas is treated as warm
    offline precomputation and excluded. Returns (nan, nan) on empty input.
    """
    solvable = [inc for inc in incidents if best_feasible(atlas, atlas.row_index(inc.node), inc.category)]
    if not solvable:
        return math.nan, math.nan
    # warm-up pass so imports/caches don't land in the percentiles
    state = build_state(solvable[0], atlas, consts)
    chooser.choose(solvable[0], state)
    samples = []
    for inc in solvable:
        t0 = time.perf_counter()
        state = build_state(inc, atlas, consts)
        chooser.choose(inc, state)
        samples.append((time.perf_counter() - t0) * 1000.0)
    arr = np.asarray(samples)
    return float(np.percentile(arr, 50)), float(np.percentile(arr, 99))


# ---------------------------------------------------------------------------
# Report writers


def _fmt(x: float | None) -> str:
    if x is None:
        return ""
    return "nan" if isinstance(x, float) and math.isnan(x) else repr(float(x))


def write_report_csv(reports: Sequence[EvaluationReport], path: str | Path) -> None:
    lines = [
        "policy,scope,n_total,n_solvable,optimality_rate_pct,avg_inefficiency_delta_min,"
        "avg_best_possible_time_min,latency_p50_ms,latency_p99_ms"
    ]
    for r in reports:
        lines.append(
            f"{r.policy},overall,{r.n_total},{r.n_solvable},{_fmt(r.optimality_rate)},"
            f"{_fmt(r.avg_inefficiency_delta)},{_fmt(r.avg_best_possible_time)},"
            f"{_fmt(r.latency_p50_ms)},{_fmt(r.latency_p99_ms)}"
        )
        for cat in Category:
            s = r.per_category[cat]
            lines.append(
                f"{r.policy},category_{int(cat)},,{s.n_solvable},{_fmt(s.optimality_rate)},"
                f"{_fmt(s.avg_delta)},,,"
            )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_report_text(reports: Sequence[EvaluationReport], path: str | Path) -> None:
    lines = [
        "Dispatch evaluation summary",
        f"Scoring rule: ties on the best time count as optimal; {UNREACHABLE_PICK_RULE}.",
        "",
    ]
    for r in reports:
        lines.append(f"policy: {r.policy}")
        lines.append(f"  incidents: {r.n_total} total, {r.n_solvable} solvable")
        lines.append(f"  optimality rate: {r.optimality_rate:.2f}%")
        lines.append(f"  avg inefficiency delta: {r.avg_inefficiency_delta:.4f} min")
        lines.append(f"  avg best possible time: {r.avg_best_possible_time:.4f} min")
        if r.latency_p50_ms is not None and r.latency_p99_ms is not None:
            lines.append(
                f"  dispatch latency: p50 {r.latency_p50_ms:.3f} ms, p99 {r.latency_p99_ms:.3f} ms"
            )
        for cat in Category:
            s = r.per_category[cat]
            if s.n_solvable:
                lines.append(
                    f"  {cat.name.lower()}: n={s.n_solvable}, rate {s.optimality_rate:.2f}%, "
                    f"delta {s.avg_delta:.4f} min"
                )
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")


def write_dispatch_log(records: Sequence[DispatchRecord], path: str | Path) -> None:
    lines = ["incident_id,category,solvable,chosen_facility_id,t_chosen_min,t_star_min,delta_min,optimal"]
    for r in records:
        t_chosen = "" if math.isnan(r.t_chosen) else repr(r.t_chosen)
        t_star = "" if math.isnan(r.t_star) else repr(r.t_star)
        delta = "" if math.isnan(r.delta) else repr(r.delta)
        lines.append(
            f"{r.incident_id},{int(r.category)},{int(r.solvable)},{r.facility_id},"
            f"{t_chosen},{t_star},{delta},{int(r.optimal)}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
