from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

from app.models.analytics import CostParams, LpReport


class MetricRow(BaseModel):
    """One CSV row per simulation run; field order is the CSV column order"""

    scenario_id: str
    protocol: str
    nodes: int
    speed_mps: float
    pause_s: float
    traffic_pps: float
    seed: int
    throughput_bps: float
    avg_e2ed_s: Optional[float] = Field(None, description="Absent when nothing was delivered")
    nrl: Optional[float] = Field(None, description="Absent when nothing was delivered")
    ctrl_rreq: int
    ctrl_rrep: int
    ctrl_grat_rrep: int
    ctrl_rerr: int
    ctrl_hello: int
    data_sent: int
    data_recv: int
    data_dropped: int
    link_breaks: int
    repairs_ok: int
    repairs_fail: int
    salvages: int
    no_route_events: int
    lp_violations_1a: int
    lp_violations_2a: int
    lp_violations_3a: int

    def to_csv_dict(self) -> Dict[str, str]:
        """Stable text rendering so equal runs give byte-identical rows"""
        out = {}
        for name, value in self.model_dump().items():
            if value is None:
                out[name] = ""
            elif isinstance(value, float):
                out[name] = f"{value:.6f}"
            else:
                out[name] = str(value)
        return out


CSV_FIELDS = list(MetricRow.model_fields)


class ClaimResult(BaseModel):
    """Outcome of one directional trend claim"""

    claim: str
    verdict: str = Field(..., description="pass, fail or inconclusive")
    margin: Optional[float] = Field(None, description="Signed margin; positive means the claim holds")
    pooled_std: Optional[float] = None
    detail: str = ""


class SimulationResponse(BaseModel):
    success: bool
    message: str
    row: Optional[MetricRow] = None
    report: Optional[LpReport] = None
    run_time_seconds: float


class AnalyticResponse(BaseModel):
    params: CostParams
    ce_rd: float
    ce_rm: Dict[str, float]
    ce_total: Dict[str, float]
    waiting_time_s: float


class HealthResponse(BaseModel):
    status: str = Field(..., description="Overall health status")
    message: str = Field(..., description="Health check message")
    timestamp: str = Field(..., description="Timestamp of health check")
    services: Dict[str, Dict[str, Any]] = Field(..., description="Component statuses")


class VerdictSummary(BaseModel):
    claims: List[ClaimResult]
    passed: int
    failed: int
    inconclusive: int
    suite_passed: bool
