from enum import Enum
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.utils.exceptions import ScenarioConfigError


class ProtocolName(str, Enum):
    """Supported routing protocol variants"""

    AODV = "aodv"
    AODV_LL = "aodv-ll"
    DSR = "dsr"
    DSR_M = "dsr-m"
    DYMO = "dymo"


class Scenario(BaseModel):
    """Full description of one reproducible experiment"""

    model_config = ConfigDict(
        extra="forbid",
        frozen=True,
        use_enum_values=False,
        json_schema_extra={
            "example": {
                "protocol": "aodv-ll",
                "nodes": 25,
                "area": [1000.0, 1000.0],
                "speed_mps": 30.0,
                "pause_s": 0.0,
                "traffic_pps": 4.0,
                "flows": 10,
                "packet_bytes": 512,
                "duration_s": 300.0,
                "seed": 7,
                "bandwidth_bps": 2000000,
            }
        },
    )

    protocol: ProtocolName = Field(..., description="Routing protocol variant")
    nodes: int = Field(50, ge=2, description="Number of mobile nodes")
    area: Tuple[float, float] = Field(
        (1000.0, 1000.0), description="Field size (width_m, height_m)"
    )
    speed_mps: float = Field(2.0, gt=0, description="Constant waypoint speed")
    pause_s: float = Field(0.0, ge=0, description="Pause at each waypoint")
    traffic_pps: float = Field(2.0, gt=0, description="CBR packets per second per flow")
    flows: int = Field(10, ge=1, description="Number of CBR source-destination pairs")
    packet_bytes: int = Field(512, gt=0, description="DATA payload size")
    duration_s: float = Field(900.0, gt=0, description="Simulated time T (desk presets use 300)")
    seed: int = Field(1, ge=0, lt=2**64, description="Master random seed")
    bandwidth_bps: int = Field(2_000_000, gt=0, description="Per-node link bandwidth")
    range_m: float = Field(250.0, gt=0, description="Unit-disk radio range")
    scan_interval_s: float = Field(0.1, gt=0, description="Link-change scan period")
    route_cache_scale: float = Field(
        1.0, gt=0, le=4.0, description="DSR route cache capacities relative to the 50-node field"
    )
    tau_cri_s: Optional[float] = Field(
        None, gt=0, description="Critical delay for constraints 2.a/2.b"
    )
    beta_cri_bps: Optional[float] = Field(
        None, gt=0, description="Critical bandwidth for constraints 3.a/3.b"
    )
    preset: str = Field("custom", min_length=1, description="Sweep preset tag")

    @field_validator("area", mode="before")
    @classmethod
    def parse_area(cls, v):
        """Accept '1000x1000' or '1000, 1000' from config files"""
        if isinstance(v, str):
            parts = v.replace("x", ",").replace("×", ",").split(",")
            return tuple(p.strip() for p in parts if p.strip())
        return v

    @field_validator("area")
    @classmethod
    def validate_area(cls, v):
        if v[0] <= 0 or v[1] <= 0:
            raise ValueError("area sides must be positive")
        return v

    @model_validator(mode="after")
    def validate_flows(self):
        if self.flows > self.nodes // 2:
            raise ValueError(
                f"flows ({self.flows}) must not exceed nodes/2 ({self.nodes // 2})"
            )
        return self

    @property
    def width_m(self) -> float:
        return self.area[0]

    @property
    def height_m(self) -> float:
        return self.area[1]

    @property
    def scenario_id(self) -> str:
        return (
            f"{self.preset}/{self.protocol.value}/n{self.nodes}"
            f"-v{self.speed_mps:g}-p{self.pause_s:g}-r{self.traffic_pps:g}-s{self.seed}"
        )


AREA_KEYS = ("area_width_m", "area_height_m")


def parse_scenario_text(text: str) -> Scenario:
    """
    Parse a line-oriented ``key = value`` scenario description

    What this does: turns a config file body into a validated Scenario
    Why: config mistakes must surface with the offending line and field
    How: tokenise lines, reject unknown/duplicate keys, then let pydantic
         coerce values and map its errors back to line numbers
    """
    values: Dict[str, str] = {}
    key_lines: Dict[str, int] = {}
    known = set(Scenario.model_fields) | set(AREA_KEYS)

    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioConfigError("expected 'key = value'", line=number)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ScenarioConfigError("unknown key", line=number, field=key)
        if key in values:
            raise ScenarioConfigError(
                f"duplicate key (first set on line {key_lines[key]})", line=number, field=key
            )
        if not value:
            raise ScenarioConfigError("missing value", line=number, field=key)
        values[key] = value
        key_lines[key] = number

    sides = [values.pop(k, None) for k in AREA_KEYS]
    if any(sides):
        if "area" in values:
            line = min(key_lines[k] for k in AREA_KEYS if k in key_lines)
            raise ScenarioConfigError("area given twice", line=line, field="area")
        default = Scenario.model_fields["area"].default
        values["area"] = tuple(s if s is not None else d for s, d in zip(sides, default))
        key_lines["area"] = min(key_lines[k] for k in AREA_KEYS if k in key_lines)

    try:
        return Scenario(**values)
    except ValidationError as e:
        first = e.errors()[0]
        field = str(first["loc"][0]) if first["loc"] else None
        raise ScenarioConfigError(
            first["msg"], line=key_lines.get(field), field=field
        ) from e


def load_scenario(path: Union[str, Path]) -> Scenario:
    """Read and parse a scenario file"""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioConfigError(f"cannot read scenario file: {e}") from e
    return parse_scenario_text(text)
