import csv
import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Type, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from tqdm import tqdm

from app.config import settings
from app.models.analytics import LpParams, LpReport
from app.models.results import CSV_FIELDS, ClaimResult, MetricRow, VerdictSummary
from app.models.scenario import ProtocolName, Scenario
from app.models.trace import TraceStats
from app.services.aodv import AodvLlProtocol, AodvProtocol
from app.services.analytics import check_constraints
from app.services.dsr import DsrMProtocol, DsrProtocol
from app.services.dymo import DymoProtocol
from app.services.engine import Channel, Network, Simulator, to_us
from app.services.error_handler import RunErrorHandler
from app.services.metrics import metric_row
from app.services.mobility import RandomWaypoint
from app.services.routing_common import RoutingParams, RoutingProtocol
from app.utils.event_log import EventLog
from app.utils.exceptions import ScenarioConfigError, SimulationError

logger = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).resolve().parent.parent / "presets"

PROTOCOLS: Dict[ProtocolName, Type[RoutingProtocol]] = {
    ProtocolName.AODV: AodvProtocol,
    ProtocolName.AODV_LL: AodvLlProtocol,
    ProtocolName.DSR: DsrProtocol,
    ProtocolName.DSR_M: DsrMProtocol,
    ProtocolName.DYMO: DymoProtocol,
}


@dataclass
class RunResult:
    scenario: Scenario
    trace: TraceStats
    report: LpReport
    row: MetricRow
    in_flight: int
    wall_time_s: float


# -- single run ---------------------------------------------------------------


def build_network(
    scenario: Scenario,
    event_log: Optional[EventLog] = None,
    params: RoutingParams = RoutingParams(),
    mobility=None,
) -> Network:
    """Wire clock, mobility, channel and one protocol instance per node from the scenario seed"""
    params = params_for(scenario, params)
    mobility_seed, traffic_seed, channel_seed = np.random.SeedSequence(scenario.seed).spawn(3)
    if mobility is None:
        mobility = RandomWaypoint(
            scenario.nodes,
            scenario.width_m,
            scenario.height_m,
            scenario.speed_mps,
            scenario.pause_s,
            mobility_seed,
        )
    sim = Simulator(to_us(scenario.duration_s), event_log)
    stats = TraceStats(duration_s=scenario.duration_s, payload_bits=scenario.packet_bytes * 8)
    channel = Channel(
        sim,
        mobility,
        stats,
        np.random.default_rng(channel_seed),
        range_m=scenario.range_m,
        bandwidth_bps=scenario.bandwidth_bps,
    )
    network = Network(
        sim,
        mobility,
        channel,
        stats,
        scan_interval_us=to_us(scenario.scan_interval_s),
        sizes=params.sizes,
        net_diameter=params.ers.net_diameter,
    )
    protocol_cls = PROTOCOLS[scenario.protocol]
    network.attach([protocol_cls(node, network, params) for node in range(mobility.nodes)])
    network.traffic_rng = np.random.default_rng(traffic_seed)
    return network


def params_for(scenario: Scenario, params: RoutingParams = RoutingParams()) -> RoutingParams:
    """Route cache capacities follow the scenario's cache scale (at least one path each)"""
    if scenario.route_cache_scale == 1.0:
        return params
    return replace(
        params,
        dsr_cache_capacity=max(1, round(params.dsr_cache_capacity * scenario.route_cache_scale)),
        dsrm_cache_capacity=max(1, round(params.dsrm_cache_capacity * scenario.route_cache_scale)),
    )


def add_cbr_traffic(network: Network, scenario: Scenario) -> List[Tuple[int, int]]:
    """Source-destination pairs drawn without replacement, each flow starting at a random offset"""
    rng = network.traffic_rng
    order = rng.permutation(scenario.nodes)[: 2 * scenario.flows].tolist()
    pairs = [(order[2 * i], order[2 * i + 1]) for i in range(scenario.flows)]
    interval_us = max(1, to_us(1.0 / scenario.traffic_pps))
    for flow_id, (src, dst) in enumerate(pairs):
        network.add_cbr_flow(
            flow_id,
            src,
            dst,
            scenario.traffic_pps,
            payload_bytes=scenario.packet_bytes,
            start_us=int(rng.integers(0, interval_us)),
        )
    return pairs


def lp_params_for(scenario: Scenario, params: RoutingParams = RoutingParams()) -> LpParams:
    return LpParams(
        tau_cri_s=scenario.tau_cri_s or params.buffer_timeout_s,
        beta_avail_bps=scenario.bandwidth_bps,
        beta_cri_bps=scenario.beta_cri_bps,
        bits_per_packet=scenario.packet_bytes * 8,
    )


def finish_run(scenario: Scenario, network: Network, params: RoutingParams, started: float) -> RunResult:
    trace = network.stats
    in_flight = network.count_data_in_flight()
    if trace.data_originated != trace.data_delivered + trace.data_dropped + in_flight:
        raise SimulationError(
            f"{scenario.scenario_id}: {trace.data_originated} originated but "
            f"{trace.data_delivered} delivered + {trace.data_dropped} dropped + {in_flight} in flight"
        )
    report = check_constraints(trace, lp_params_for(scenario, params))
    row = metric_row(scenario, trace, report)
    return RunResult(scenario, trace, report, row, in_flight, time.time() - started)


def run(
    scenario: Scenario,
    event_log_path: Optional[Union[str, Path]] = None,
    params: RoutingParams = RoutingParams(),
) -> RunResult:
    """Simulate one scenario end to end; the same scenario always gives the same row and event log"""
    started = time.time()
    event_log = EventLog.open(str(event_log_path)) if event_log_path else None
    try:
        network = build_network(scenario, event_log, params)
        add_cbr_traffic(network, scenario)
        network.start()
        network.sim.run()
    finally:
        if event_log is not None:
            event_log.close()
    result = finish_run(scenario, network, params, started)
    row = result.row
    logger.info(
        f"✅ {scenario.scenario_id}: {row.data_recv}/{row.data_sent} delivered, "
        f"{row.throughput_bps:.0f} b/s, NRL {row.nrl if row.nrl is not None else '-'} "
        f"({result.wall_time_s:.1f}s wall)"
    )
    return result


# -- sweeps -------------------------------------------------------------------


class SweepSpec(BaseModel):
    """A sweep preset: base scenario fields, axes to cross and protocols to compare"""

    model_config = ConfigDict(extra="forbid")

    name: str = Field(..., min_length=1)
    base: Dict[str, Any] = Field(default_factory=dict)
    axes: Dict[str, List[Any]] = Field(default_factory=dict)
    protocols: List[ProtocolName] = Field(default_factory=lambda: list(ProtocolName))

    def expand(self, seeds: int) -> List[Scenario]:
        """Cross product of axes x protocols x seeds (seeds are 1..N)"""
        if seeds < 1:
            raise ScenarioConfigError("at least one seed is required", field="seeds")
        base = {"duration_s": settings.desk_duration_s, **self.base, "preset": self.name}
        names = list(self.axes)
        scenarios = []
        for combo in itertools.product(*(self.axes[n] for n in names)):
            for protocol in self.protocols:
                for seed in range(1, seeds + 1):
                    values = {**base, **dict(zip(names, combo)), "protocol": protocol, "seed": seed}
                    try:
                        scenarios.append(Scenario(**values))
                    except ValidationError as e:
                        first = e.errors()[0]
                        field = str(first["loc"][0]) if first["loc"] else None
                        raise ScenarioConfigError(f"{self.name}: {first['msg']}", field=field) from e
        return scenarios


def available_presets() -> List[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.yaml"))


def load_sweep(name_or_path: Union[str, Path]) -> SweepSpec:
    """A bundled preset by name, or a user YAML file with the same schema"""
    path = Path(name_or_path)
    if not path.exists():
        path = PRESET_DIR / f"{name_or_path}.yaml"
    if not path.exists():
        raise ScenarioConfigError(
            f"unknown preset or sweep file '{name_or_path}' (presets: {', '.join(available_presets())})"
        )
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ScenarioConfigError(f"{path.name}: invalid YAML: {e}") from e
    if not isinstance(data, dict):
        raise ScenarioConfigError(f"{path.name}: expected a mapping at top level")
    try:
        return SweepSpec(**data)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(x) for x in first["loc"]) if first["loc"] else None
        raise ScenarioConfigError(f"{path.name}: {first['msg']}", field=field) from e


def _run_cell(scenario_data: Dict[str, Any]) -> Tuple[str, Optional[Dict[str, Any]], Optional[str]]:
    scenario = Scenario(**scenario_data)
    try:
        return scenario.scenario_id, run(scenario).row.model_dump(), None
    except SimulationError as e:
        return scenario.scenario_id, None, str(e)


def run_matrix(
    scenarios: Sequence[Scenario],
    workers: int = 1,
    error_handler: Optional[RunErrorHandler] = None,
    progress: bool = True,
) -> List[MetricRow]:
    """Run every scenario (in parallel when workers > 1); rows come back in scenario order"""
    handler = error_handler or RunErrorHandler()
    payloads = [s.model_dump() for s in scenarios]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(tqdm(pool.map(_run_cell, payloads), total=len(payloads), disable=not progress, desc="runs"))
    else:
        outcomes = [_run_cell(p) for p in tqdm(payloads, disable=not progress, desc="runs")]

    rows = []
    for scenario_id, row, error in outcomes:
        handler.log_pipeline_stage("run", error is None)
        if error is not None:
            handler.log_run_failure(scenario_id, SimulationError(error))
            continue
        rows.append(MetricRow(**row))
    logger.info(f"Matrix finished: {len(rows)}/{len(scenarios)} runs succeeded")
    return rows


# -- CSV and aggregation ------------------------------------------------------

AGGREGATED_METRICS = (
    "throughput_bps",
    "avg_e2ed_s",
    "nrl",
    "data_recv",
    "data_dropped",
    "link_breaks",
    "repairs_ok",
    "repairs_fail",
    "salvages",
    "no_route_events",
)


def write_rows(rows: Sequence[MetricRow], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row.to_csv_dict())


def read_rows(path: Union[str, Path]) -> List[MetricRow]:
    try:
        with Path(path).open(encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            missing = [c for c in CSV_FIELDS if c not in (reader.fieldnames or [])]
            if missing:
                raise ScenarioConfigError(f"CSV is missing columns: {', '.join(missing)}")
            return [MetricRow(**{k: (v if v != "" else None) for k, v in r.items() if k in CSV_FIELDS}) for r in reader]
    except OSError as e:
        raise ScenarioConfigError(f"cannot read results: {e}") from e
    except ValidationError as e:
        raise ScenarioConfigError(f"malformed results row: {e.errors()[0]['msg']}") from e


def cell_key(row: MetricRow) -> str:
    """scenario_id without its seed"""
    return row.scenario_id.rsplit("-s", 1)[0]


def aggregate(rows: Sequence[MetricRow]) -> List[Dict[str, Any]]:
    """Per-cell mean and sample standard deviation; a pure function of the rows"""
    cells: Dict[str, List[MetricRow]] = {}
    for row in rows:
        cells.setdefault(cell_key(row), []).append(row)
    summary = []
    for key in sorted(cells):
        group = cells[key]
        first = group[0]
        out: Dict[str, Any] = {
            "cell": key,
            "protocol": first.protocol,
            "nodes": first.nodes,
            "speed_mps": first.speed_mps,
            "pause_s": first.pause_s,
            "traffic_pps": first.traffic_pps,
            "runs": len(group),
        }
        for metric in AGGREGATED_METRICS:
            values = np.array([getattr(r, metric) for r in group if getattr(r, metric) is not None], dtype=float)
            out[f"{metric}_mean"] = float(values.mean()) if values.size else None
            out[f"{metric}_std"] = float(values.std(ddof=1)) if values.size > 1 else (0.0 if values.size else None)
        summary.append(out)
    return summary


def write_summary(summary: Sequence[Dict[str, Any]], path: Union[str, Path]) -> None:
    if not summary:
        return
    with Path(path).open("w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(summary[0]), lineterminator="\n")
        writer.writeheader()
        for cell in summary:
            writer.writerow({k: ("" if v is None else f"{v:.6f}" if isinstance(v, float) else v) for k, v in cell.items()})


def summary_path(out: Union[str, Path]) -> Path:
    out = Path(out)
    return out.with_name(f"{out.stem}_summary{out.suffix or '.csv'}")


# -- directional verdicts -----------------------------------------------------


@dataclass(frozen=True)
class Comparison:
    """``left`` protocol's metric should be >= (or <=) ``right``'s"""

    left: str
    right: str
    higher_is_claimed: bool


@dataclass(frozen=True)
class TrendClaim:
    name: str
    metric: str
    presets: Tuple[str, ...]
    comparisons: Tuple[Comparison, ...]
    speed_mps: Optional[float] = None
    pause_s: Optional[float] = None
    per_nodes: bool = False


TREND_CLAIMS = (
    TrendClaim(
        "aodv-ll throughput >= aodv at 30 m/s",
        "throughput_bps",
        ("trend", "mobility"),
        (Comparison("aodv-ll", "aodv", True),),
        speed_mps=30.0,
        pause_s=0.0,
    ),
    TrendClaim(
        "dymo NRL >= aodv and dsr at 30 m/s",
        "nrl",
        ("trend", "mobility"),
        (Comparison("dymo", "aodv", True), Comparison("dymo", "dsr", True)),
        speed_mps=30.0,
        pause_s=0.0,
    ),
    TrendClaim(
        "dsr NRL <= aodv and dymo at 2 m/s",
        "nrl",
        ("trend", "mobility"),
        (Comparison("dsr", "aodv", False), Comparison("dsr", "dymo", False)),
        speed_mps=2.0,
        pause_s=0.0,
    ),
    TrendClaim(
        "dsr-m NRL <= dsr at 30 m/s",
        "nrl",
        ("trend", "mobility"),
        (Comparison("dsr-m", "dsr", False),),
        speed_mps=30.0,
        pause_s=0.0,
    ),
    TrendClaim(
        "aodv E2ED >= dsr and dymo across scalability",
        "avg_e2ed_s",
        ("scalability",),
        (Comparison("aodv", "dsr", True), Comparison("aodv", "dymo", True)),
        per_nodes=True,
    ),
)


def _claim_rows(rows: Sequence[MetricRow], claim: TrendClaim) -> List[MetricRow]:
    selected = []
    for row in rows:
        if row.scenario_id.split("/", 1)[0] not in claim.presets:
            continue
        if claim.speed_mps is not None and row.speed_mps != claim.speed_mps:
            continue
        if claim.pause_s is not None and row.pause_s != claim.pause_s:
            continue
        selected.append(row)
    return selected


def compare_means(left: Sequence[float], right: Sequence[float], higher_is_claimed: bool) -> Tuple[str, float, float]:
    """Verdict, signed margin (positive when the claim holds) and pooled standard deviation"""
    a = np.asarray(left, dtype=float)
    b = np.asarray(right, dtype=float)
    margin = float(a.mean() - b.mean()) if higher_is_claimed else float(b.mean() - a.mean())
    var_a = a.var(ddof=1) if a.size > 1 else 0.0
    var_b = b.var(ddof=1) if b.size > 1 else 0.0
    pooled = float(np.sqrt((var_a + var_b) / 2))
    if margin > 0:
        return "pass", margin, pooled
    if -margin <= pooled:
        return "inconclusive", margin, pooled
    return "fail", margin, pooled


def evaluate_claim(rows: Sequence[MetricRow], claim: TrendClaim) -> ClaimResult:
    selected = _claim_rows(rows, claim)
    groups: Dict[Any, List[MetricRow]] = {}
    for row in selected:
        groups.setdefault(row.nodes if claim.per_nodes else None, []).append(row)

    outcomes = []
    for key in sorted(groups, key=lambda k: (k is None, k)):
        by_protocol: Dict[str, List[float]] = {}
        for row in groups[key]:
            value = getattr(row, claim.metric)
            if value is not None:
                by_protocol.setdefault(row.protocol, []).append(value)
        for c in claim.comparisons:
            if c.left in by_protocol and c.right in by_protocol:
                outcomes.append((key, c, *compare_means(by_protocol[c.left], by_protocol[c.right], c.higher_is_claimed)))

    if not outcomes:
        return ClaimResult(claim=claim.name, verdict="inconclusive", detail="no matching rows")
    verdicts = {o[2] for o in outcomes}
    verdict = "fail" if "fail" in verdicts else "inconclusive" if "inconclusive" in verdicts else "pass"
    worst = min(outcomes, key=lambda o: o[3])
    scope = f" at {worst[0]} nodes" if worst[0] is not None else ""
    return ClaimResult(
        claim=claim.name,
        verdict=verdict,
        margin=worst[3],
        pooled_std=worst[4],
        detail=f"tightest: {worst[1].left} vs {worst[1].right}{scope}",
    )


def verdict(
    rows: Sequence[MetricRow],
    claims: Sequence[TrendClaim] = TREND_CLAIMS,
    error_handler: Optional[RunErrorHandler] = None,
) -> VerdictSummary:
    results = [evaluate_claim(rows, claim) for claim in claims]
    if error_handler is not None:
        error_handler.log_pipeline_stage("verdict", True, len(results))
    for result in results:
        log = logger.warning if result.verdict == "inconclusive" else logger.info
        margin = f"{result.margin:+.6g}" if result.margin is not None else "n/a"
        log(f"{result.verdict.upper():>12}  {result.claim}  (margin {margin}; {result.detail})")
    passed = sum(r.verdict == "pass" for r in results)
    failed = sum(r.verdict == "fail" for r in results)
    inconclusive = sum(r.verdict == "inconclusive" for r in results)
    return VerdictSummary(
        claims=results,
        passed=passed,
        failed=failed,
        inconclusive=inconclusive,
        suite_passed=passed >= min(4, len(results)) and failed == 0,
    )
