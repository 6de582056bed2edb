from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

CONSTRAINT_IDS = ("1.a", "1.b", "1.c", "1.d", "1.e", "2.a", "2.b", "3.a", "3.b")


class CostParams(BaseModel):
    """Inputs of the energy-cost formulas (discovery, maintenance and HELLO cost)"""

    model_config = ConfigDict(
        extra="forbid",
        json_schema_extra={
            "example": {
                "d_avg": 4.0,
                "rings": [3, 5],
                "n_llr": 4,
                "n_rerr": 3,
                "n_ps": 2,
                "n_rn": 5,
                "tau_route_in_use": 10.0,
                "tau_h_interval": 1.0,
                "lb_indicator": 1,
                "pus_llr_indicator": 1,
            }
        },
    )

    d_avg: float = Field(0.0, ge=0, description="Average node degree")
    rings: List[int] = Field(default_factory=list, description="Nodes per ring N_k")
    n_llr: int = Field(0, ge=0, description="Nodes reached by a local-repair flood")
    n_rerr: int = Field(0, ge=0, description="Nodes receiving RERR")
    n_ps: int = Field(0, ge=0, description="Salvaging node index")
    n_rn: int = Field(0, ge=0, description="Nodes on active routes")
    tau_route_in_use: float = Field(0.0, ge=0, description="Seconds a route is in use")
    tau_h_interval: float = Field(1.0, gt=0, description="HELLO interval in seconds")
    lb_indicator: Literal[0, 1] = Field(0, description="|sgn lb_RN|")
    pus_llr_indicator: Literal[0, 1] = Field(0, description="|sgn P_us^llr|")

    @field_validator("rings")
    @classmethod
    def validate_rings(cls, v):
        if any(n < 0 for n in v):
            raise ValueError("ring sizes must be nonnegative")
        return v

    @property
    def m(self) -> int:
        return len(self.rings)


class LpParams(BaseModel):
    """Thresholds of the LP-model constraints; unset values fall back to measured or derived defaults"""

    model_config = ConfigDict(extra="forbid")

    tau_cri_s: float = Field(30.0, gt=0, description="Critical delay")
    beta_avail_bps: float = Field(2_000_000.0, gt=0, description="Available bandwidth")
    beta_cri_bps: Optional[float] = Field(None, gt=0, description="Critical bandwidth")
    lc_max: Optional[int] = Field(None, ge=0, description="Maximum link changes")
    bits_per_packet: int = Field(4096, gt=0, description="DATA payload bits")

    @property
    def effective_beta_cri(self) -> float:
        return self.beta_cri_bps if self.beta_cri_bps is not None else self.beta_avail_bps / 2


class Violation(BaseModel):
    constraint: str
    count: int = Field(0, ge=0)
    evaluated: int = Field(0, ge=0)
    worst_margin: float = Field(
        0.0, description="Largest observed-minus-bound value; <= 0 when satisfied"
    )


class LpReport(BaseModel):
    """Objective values and constraint check results for one run"""

    t_avg: float = Field(..., description="Literal throughput objective, bits/s")
    t_avg_delivered: float = Field(..., description="Delivered bits / T")
    p_nr: float = Field(..., ge=0, le=1)
    ct_rd: float = Field(0.0, ge=0, description="Mean discovery duration, s")
    ct_rm: float = Field(0.0, ge=0, description="Mean repair duration, s")
    ce_rd: int = Field(0, ge=0, description="Discovery control packets")
    ce_rm: int = Field(0, ge=0, description="Maintenance control packets")
    p_s_rd: float = Field(1.0, ge=0, le=1)
    p_s_rm: float = Field(1.0, ge=0, le=1)
    p_us_llr: Optional[float] = Field(None, ge=0, le=1)
    alphas: Dict[str, float] = Field(default_factory=dict)
    rec_dr: Dict[str, int] = Field(default_factory=dict)
    violations: List[Violation] = Field(default_factory=list)
    params: LpParams

    def violation_count(self, constraint: str) -> int:
        for v in self.violations:
            if v.constraint == constraint:
                return v.count
        return 0


class AnalyticSweepConfig(BaseModel):
    """Standalone sweep options read next to CostParams from an analytic parameter file"""

    model_config = ConfigDict(extra="forbid")

    max_rings: int = Field(7, ge=1, description="Sweep M = 1..max_rings")
    d_avg_values: List[float] = Field(default_factory=lambda: [2.0, 4.0, 6.0, 8.0])
    grat_truncation: float = Field(
        0.0, ge=0, lt=1, description="Fraction of rings saved by intermediate replies (AODV, DSR)"
    )

    @field_validator("d_avg_values")
    @classmethod
    def validate_degrees(cls, v):
        if not v or any(d < 0 for d in v):
            raise ValueError("d_avg_values must be a nonempty list of nonnegative degrees")
        return v


class TraceComparison(BaseModel):
    """Formula values evaluated on trace-measured parameters next to the simulator's counters"""

    protocol: str
    params: CostParams
    formula_ce_rd: float
    formula_ce_rm: float
    formula_ce_hello: float
    sim_discovery_packets: int
    sim_maintenance_packets: int
    sim_hello_transmitted: int
    sim_hello_emitted: int
    hello_exact: bool
