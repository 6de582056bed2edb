import logging
from typing import Optional

import numpy as np

from app.models.analytics import LpReport
from app.models.results import MetricRow
from app.models.scenario import Scenario
from app.models.trace import TraceStats

logger = logging.getLogger(__name__)


def throughput(trace: TraceStats, duration_s: float) -> float:
    """Delivered payload bits per second"""
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    return trace.delivered_bits / duration_s


def avg_e2ed(trace: TraceStats) -> Optional[float]:
    """Mean origination-to-delivery delay, buffering included; None when nothing arrived"""
    if not trace.delivery_delays:
        return None
    return float(np.mean(trace.delivery_delays))


def nrl(trace: TraceStats) -> Optional[float]:
    """Control transmissions (every hop counts) per delivered DATA packet"""
    if trace.data_delivered == 0:
        return None
    return trace.ctrl_total / trace.data_delivered


def delivery_ratio(trace: TraceStats) -> Optional[float]:
    if trace.data_originated == 0:
        return None
    return trace.data_delivered / trace.data_originated


def metric_row(scenario: Scenario, trace: TraceStats, report: LpReport) -> MetricRow:
    counts = trace.ctrl_counts
    return MetricRow(
        scenario_id=scenario.scenario_id,
        protocol=scenario.protocol.value,
        nodes=scenario.nodes,
        speed_mps=scenario.speed_mps,
        pause_s=scenario.pause_s,
        traffic_pps=scenario.traffic_pps,
        seed=scenario.seed,
        throughput_bps=throughput(trace, scenario.duration_s),
        avg_e2ed_s=avg_e2ed(trace),
        nrl=nrl(trace),
        ctrl_rreq=counts["RREQ"],
        ctrl_rrep=counts["RREP"],
        ctrl_grat_rrep=counts["grat_RREP"],
        ctrl_rerr=counts["RERR"],
        ctrl_hello=counts["HELLO"],
        data_sent=trace.data_originated,
        data_recv=trace.data_delivered,
        data_dropped=trace.data_dropped,
        link_breaks=trace.link_breaks,
        repairs_ok=trace.repairs_succeeded,
        repairs_fail=trace.repairs_failed,
        salvages=trace.salvages,
        no_route_events=trace.no_route_events,
        lp_violations_1a=report.violation_count("1.a"),
        lp_violations_2a=report.violation_count("2.a"),
        lp_violations_3a=report.violation_count("3.a"),
    )
